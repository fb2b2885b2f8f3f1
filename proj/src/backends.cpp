#include "hcbfill/backends.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "hcbfill/errors.hpp"
#include "hcbfill/rng.hpp"

namespace hcbfill {

std::vector<CondDistribution> ConditionalBackend::conditionals_batch(
    std::span<const Query> queries) const {
  std::vector<CondDistribution> out;
  out.reserve(queries.size());
  for (const Query& q : queries) out.push_back(conditionals(q.context, q.position));
  return out;
}

double ConditionalBackend::correction_logp(std::span<const TokenId>,
                                           std::size_t,
                                           const CondDistribution& dist) const {
  return dist[vocab().mask_id()];
}

// ---------------------------------------------------------------------------
// JointTable

namespace {

std::size_t checked_cells(std::size_t alphabet, std::size_t length) {
  if (alphabet < 1 || length < 1) {
    throw InvalidInput("joint table needs A >= 1 and n >= 1");
  }
  std::size_t cells = 1;
  for (std::size_t i = 0; i < length; ++i) {
    if (cells > (std::size_t{1} << 26) / alphabet) {
      throw TooLarge("joint table exceeds 2^26 cells");
    }
    cells *= alphabet;
  }
  return cells;
}

}  // namespace

JointTable::JointTable(std::size_t alphabet_size, std::size_t length,
                       std::vector<double> logp)
    : alphabet_(alphabet_size), length_(length), logp_(std::move(logp)) {
  if (logp_.size() != checked_cells(alphabet_, length_)) {
    throw InvalidInput("joint table must have A^n entries");
  }
  for (double v : logp_) {
    if (!std::isfinite(v)) {
      throw InvalidDistribution("joint table needs full support");
    }
  }
  const double lse = log_sum_exp(logp_);
  if (std::abs(lse) > 1e-9) {
    throw InvalidDistribution("joint table not normalized");
  }
}

JointTable JointTable::random(std::size_t alphabet_size, std::size_t length,
                              std::uint64_t seed, double concentration) {
  const std::size_t cells = checked_cells(alphabet_size, length);
  if (!(concentration > 0.0)) throw InvalidInput("concentration must be > 0");
  Rng rng(derive_seed({seed, 0x101}));
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> logp(cells);
  for (double& v : logp) v = std::max(std::log(gamma(rng)), -700.0);
  const double lse = log_sum_exp(logp);
  for (double& v : logp) v -= lse;
  return JointTable(alphabet_size, length, std::move(logp));
}

JointTable JointTable::uniform(std::size_t alphabet_size, std::size_t length) {
  const std::size_t cells = checked_cells(alphabet_size, length);
  return JointTable(alphabet_size, length,
                    std::vector<double>(cells, -std::log(double(cells))));
}

JointTable JointTable::point_mass(std::size_t alphabet_size,
                                  const Sequence& seq) {
  const std::size_t cells = checked_cells(alphabet_size, seq.size());
  std::size_t idx = 0;
  for (TokenId t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= alphabet_size) {
      throw InvalidToken("token outside the joint's alphabet");
    }
    idx = idx * alphabet_size + static_cast<std::size_t>(t);
  }
  std::vector<double> logp(cells, kLogFloor);
  logp[idx] = 0.0;
  return JointTable(alphabet_size, seq.size(), std::move(logp));
}

std::size_t JointTable::index_of(std::span<const TokenId> seq) const {
  if (seq.size() != length_) throw InvalidQuery("sequence length mismatch");
  std::size_t idx = 0;
  for (TokenId t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= alphabet_) {
      throw InvalidToken("token outside the joint's alphabet");
    }
    idx = idx * alphabet_ + static_cast<std::size_t>(t);
  }
  return idx;
}

Sequence JointTable::sequence_at(std::size_t index) const {
  Sequence seq(length_);
  for (std::size_t i = length_; i-- > 0;) {
    seq[i] = static_cast<TokenId>(index % alphabet_);
    index /= alphabet_;
  }
  return seq;
}

double JointTable::log_marginal(std::span<const TokenId> pattern) const {
  if (pattern.size() != length_) throw InvalidQuery("pattern length mismatch");
  std::vector<std::size_t> strides(length_);
  std::size_t stride = 1;
  for (std::size_t i = length_; i-- > 0;) {
    strides[i] = stride;
    stride *= alphabet_;
  }
  std::size_t base = 0;
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < length_; ++i) {
    const TokenId t = pattern[i];
    if (t >= 0 && static_cast<std::size_t>(t) < alphabet_) {
      base += strides[i] * static_cast<std::size_t>(t);
    } else {
      free.push_back(i);
    }
  }
  std::vector<double> terms;
  std::vector<std::size_t> digit(free.size(), 0);
  while (true) {
    std::size_t idx = base;
    for (std::size_t f = 0; f < free.size(); ++f) idx += digit[f] * strides[free[f]];
    terms.push_back(logp_[idx]);
    std::size_t f = 0;
    for (; f < free.size(); ++f) {
      if (++digit[f] < alphabet_) break;
      digit[f] = 0;
    }
    if (f == free.size()) break;
  }
  return log_sum_exp(terms);
}

std::vector<Sequence> JointTable::sample(std::size_t count,
                                         std::uint64_t seed) const {
  std::vector<double> cdf(logp_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logp_.size(); ++i) {
    acc += std::exp(logp_[i]);
    cdf[i] = acc;
  }
  Rng rng(derive_seed({seed, 0x202}));
  std::vector<Sequence> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto idx = std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
    out.push_back(sequence_at(idx));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ExactMarginalModel

ExactMarginalModel::ExactMarginalModel(JointTable joint, double mask_mass)
    : joint_(std::move(joint)),
      mask_mass_(mask_mass),
      vocab_(Vocab::synthetic(joint_.alphabet_size())) {
  if (!(mask_mass_ > 0.0 && mask_mass_ < 1.0)) {
    throw InvalidInput("mask mass must lie in (0, 1)");
  }
}

void ExactMarginalModel::check_query(std::span<const TokenId> context,
                                     std::size_t position) const {
  if (context.size() != joint_.length()) {
    throw InvalidQuery("context length " + std::to_string(context.size()) +
                       " != model length " +
                       std::to_string(joint_.length()));
  }
  if (position >= context.size()) throw InvalidQuery("position out of range");
  for (TokenId t : context) {
    if (!vocab_.contains(t)) throw InvalidQuery("token outside vocabulary");
  }
}

std::vector<double> ExactMarginalModel::content_conditional(
    std::span<const TokenId> context, std::size_t position) const {
  check_query(context, position);
  const auto alphabet = joint_.alphabet_size();
  Sequence pattern(context.begin(), context.end());
  for (TokenId& t : pattern) {
    if (t == vocab_.mask_id()) t = kUnfilled;
  }
  std::vector<double> logp(alphabet);
  for (std::size_t a = 0; a < alphabet; ++a) {
    pattern[position] = static_cast<TokenId>(a);
    logp[a] = joint_.log_marginal(pattern);
  }
  const double lse = log_sum_exp(logp);
  for (double& v : logp) v -= lse;
  return logp;
}

CondDistribution ExactMarginalModel::conditionals(
    std::span<const TokenId> context, std::size_t position) const {
  std::vector<double> logp = content_conditional(context, position);
  const double keep = std::log1p(-mask_mass_);
  for (double& v : logp) v += keep;
  logp.push_back(std::log(mask_mass_));
  return CondDistribution::normalize(logp);
}

// ---------------------------------------------------------------------------
// PerturbedModel

PerturbedModel::PerturbedModel(std::shared_ptr<const ExactMarginalModel> base,
                               double strength, std::uint64_t seed)
    : base_(std::move(base)), strength_(strength), seed_(seed) {
  if (!base_) throw InvalidInput("perturbed model needs a base");
  if (!(strength_ >= 0.0) || !std::isfinite(strength_)) {
    throw InvalidInput("perturbation strength must be finite and >= 0");
  }
}

double PerturbedModel::shift(TokenId token, std::span<const TokenId> context,
                             std::size_t position) const {
  std::uint64_t h = derive_seed({seed_, position, context.size()});
  for (TokenId t : context) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  h = splitmix64(h ^ (0xA5A5A5A5ULL + static_cast<std::uint64_t>(token)));
  return 2.0 * (static_cast<double>(h) /
                static_cast<double>(std::numeric_limits<std::uint64_t>::max())) -
         1.0;
}

CondDistribution PerturbedModel::conditionals(std::span<const TokenId> context,
                                              std::size_t position) const {
  CondDistribution base = base_->conditionals(context, position);
  const TokenId mask = vocab().mask_id();
  if (strength_ == 0.0 ||
      std::find(context.begin(), context.end(), mask) == context.end()) {
    return base;
  }
  std::vector<double> scores(base.logp().begin(), base.logp().end());
  for (std::size_t t = 0; t < scores.size(); ++t) {
    scores[t] += strength_ * shift(static_cast<TokenId>(t), context, position);
  }
  return CondDistribution::normalize(scores);
}

// ---------------------------------------------------------------------------
// EmpiricalMaskedEstimator

std::size_t EmpiricalMaskedEstimator::KeyHash::operator()(
    const Sequence& key) const {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (TokenId t : key) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  return static_cast<std::size_t>(h);
}

EmpiricalMaskedEstimator::EmpiricalMaskedEstimator(std::size_t alphabet_size,
                                                   std::size_t length,
                                                   EmpiricalFitOptions options)
    : vocab_(Vocab::synthetic(alphabet_size)),
      alphabet_(alphabet_size),
      length_(length),
      options_(options) {}

EmpiricalMaskedEstimator EmpiricalMaskedEstimator::fit(
    const std::vector<Sequence>& corpus, std::size_t alphabet_size,
    const EmpiricalFitOptions& options) {
  if (corpus.empty()) throw InvalidInput("empty corpus");
  if (!(options.mask_rate > 0.0 && options.mask_rate < 1.0)) {
    throw InvalidInput("mask rate must lie in (0, 1)");
  }
  if (!(options.smoothing > 0.0)) throw InvalidInput("smoothing must be > 0");
  if (!(options.mask_mass > 0.0 && options.mask_mass < 1.0)) {
    throw InvalidInput("mask mass must lie in (0, 1)");
  }
  const std::size_t length = corpus.front().size();
  if (length == 0) throw InvalidInput("corpus sequences are empty");
  for (const Sequence& seq : corpus) {
    if (seq.size() != length) throw InvalidInput("ragged corpus");
    for (TokenId t : seq) {
      if (t < 0 || static_cast<std::size_t>(t) >= alphabet_size) {
        throw InvalidToken("corpus token outside the alphabet");
      }
    }
  }

  EmpiricalMaskedEstimator est(alphabet_size, length, options);
  const auto mask = est.vocab_.mask_id();
  Rng rng(derive_seed({options.seed, 0x303}));
  Sequence masked(length);
  std::vector<std::size_t> hits;
  for (std::size_t s = 0; s < options.num_samples; ++s) {
    const Sequence& x = corpus[s % corpus.size()];
    hits.clear();
    for (std::size_t i = 0; i < length; ++i) {
      const bool m = uniform01(rng) < options.mask_rate;
      masked[i] = m ? mask : x[i];
      if (m) hits.push_back(i);
    }
    for (std::size_t i : hits) {
      Sequence key = masked;
      key.push_back(static_cast<TokenId>(i));
      auto& row = est.counts_[std::move(key)];
      if (row.empty()) row.assign(alphabet_size, 0);
      ++row[x[i]];
    }
  }
  est.num_samples_ = options.num_samples;
  return est;
}

Sequence EmpiricalMaskedEstimator::key_for(std::span<const TokenId> context,
                                           std::size_t position) const {
  if (context.size() != length_) throw InvalidQuery("context length mismatch");
  if (position >= length_) throw InvalidQuery("position out of range");
  Sequence key(context.begin(), context.end());
  for (TokenId t : key) {
    if (!vocab_.contains(t)) throw InvalidQuery("token outside vocabulary");
  }
  key[position] = vocab_.mask_id();
  key.push_back(static_cast<TokenId>(position));
  return key;
}

std::size_t EmpiricalMaskedEstimator::support(std::span<const TokenId> context,
                                              std::size_t position) const {
  auto it = counts_.find(key_for(context, position));
  if (it == counts_.end()) return 0;
  std::size_t total = 0;
  for (auto c : it->second) total += c;
  return total;
}

CondDistribution EmpiricalMaskedEstimator::conditionals(
    std::span<const TokenId> context, std::size_t position) const {
  auto it = counts_.find(key_for(context, position));
  const double alpha = options_.smoothing;
  std::vector<double> logp(alphabet_ + 1);
  double total = 0.0;
  if (it != counts_.end()) {
    for (auto c : it->second) total += c;
  }
  const double denom = std::log(total + alpha * double(alphabet_));
  const double keep = std::log1p(-options_.mask_mass);
  for (std::size_t a = 0; a < alphabet_; ++a) {
    const double c = it != counts_.end() ? it->second[a] : 0.0;
    logp[a] = std::log(c + alpha) - denom + keep;
  }
  logp[alphabet_] = std::log(options_.mask_mass);
  return CondDistribution::normalize(logp);
}

// ---------------------------------------------------------------------------
// Decorators

CondDistribution CallCountingBackend::conditionals(
    std::span<const TokenId> context, std::size_t position) const {
  ++calls_;
  return inner_->conditionals(context, position);
}

std::vector<CondDistribution> CallCountingBackend::conditionals_batch(
    std::span<const Query> queries) const {
  calls_ += queries.size();
  return inner_->conditionals_batch(queries);
}

std::size_t MemoizingBackend::KeyHash::operator()(const Sequence& key) const {
  std::uint64_t h = 0x13198a2e03707344ULL;
  for (TokenId t : key) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  return static_cast<std::size_t>(h);
}

CondDistribution MemoizingBackend::conditionals(
    std::span<const TokenId> context, std::size_t position) const {
  Sequence key(context.begin(), context.end());
  key.push_back(static_cast<TokenId>(position));
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  CondDistribution dist = inner_->conditionals(context, position);
  std::lock_guard lock(mu_);
  cache_.emplace(std::move(key), dist);
  return dist;
}

std::vector<CondDistribution> MemoizingBackend::conditionals_batch(
    std::span<const Query> queries) const {
  std::vector<std::optional<CondDistribution>> found(queries.size());
  // Distinct uncached keys, each fetched once.
  std::vector<Query> misses;
  std::vector<Sequence> miss_keys;
  std::unordered_map<Sequence, std::size_t, KeyHash> miss_slot;
  std::vector<std::pair<std::size_t, std::size_t>> pending;  // (query, miss)
  {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      Sequence key = queries[i].context;
      key.push_back(static_cast<TokenId>(queries[i].position));
      if (auto it = cache_.find(key); it != cache_.end()) {
        found[i] = it->second;
        continue;
      }
      auto [slot, inserted] = miss_slot.emplace(key, misses.size());
      if (inserted) {
        misses.push_back(queries[i]);
        miss_keys.push_back(std::move(key));
      }
      pending.emplace_back(i, slot->second);
    }
  }
  if (!misses.empty()) {
    auto fetched = inner_->conditionals_batch(misses);
    for (auto [q, m] : pending) found[q] = fetched[m];
    std::lock_guard lock(mu_);
    for (std::size_t m = 0; m < misses.size(); ++m) {
      cache_.emplace(std::move(miss_keys[m]), std::move(fetched[m]));
    }
  }
  std::vector<CondDistribution> out;
  out.reserve(queries.size());
  for (auto& d : found) out.push_back(std::move(*d));
  return out;
}

}  // namespace hcbfill
