#include "hcbfill/seqcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hcbfill/errors.hpp"

namespace hcbfill {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

Vocab::Vocab(std::vector<std::string> tokens, TokenId mask_id,
             std::vector<TokenId> special_ids)
    : tokens_(std::move(tokens)),
      mask_id_(mask_id),
      special_ids_(std::move(special_ids)) {
  if (tokens_.empty()) throw InvalidInput("vocabulary is empty");
  if (!contains(mask_id_)) throw InvalidToken("mask id out of range");
  special_.assign(tokens_.size(), false);
  for (TokenId id : special_ids_) {
    if (!contains(id)) throw InvalidToken("special id out of range");
    special_[id] = true;
  }
  if (!special_[mask_id_]) throw InvalidInput("mask id must be special");
  std::sort(special_ids_.begin(), special_ids_.end());
  special_ids_.erase(std::unique(special_ids_.begin(), special_ids_.end()),
                     special_ids_.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InvalidInput("duplicate token string '" + tokens_[i] + "'");
    }
    if (!special_[i]) content_ids_.push_back(static_cast<TokenId>(i));
  }
}

Vocab Vocab::synthetic(std::size_t alphabet_size) {
  if (alphabet_size < 1) throw InvalidInput("alphabet must be nonempty");
  std::vector<std::string> tokens;
  tokens.reserve(alphabet_size + 1);
  for (std::size_t i = 0; i < alphabet_size; ++i) {
    tokens.push_back("t" + std::to_string(i));
  }
  tokens.emplace_back("[MASK]");
  const auto mask = static_cast<TokenId>(alphabet_size);
  return Vocab(std::move(tokens), mask, {mask});
}

Vocab Vocab::anonymous(std::size_t size, TokenId mask_id,
                       std::vector<TokenId> special_ids) {
  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    tokens.push_back("<" + std::to_string(i) + ">");
  }
  if (std::find(special_ids.begin(), special_ids.end(), mask_id) ==
      special_ids.end()) {
    special_ids.push_back(mask_id);
  }
  return Vocab(std::move(tokens), mask_id, std::move(special_ids));
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains(id)) throw InvalidToken("token id out of range");
  return tokens_[id];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

GapTask::GapTask(Sequence tokens, std::size_t span_start, std::size_t span_end,
                 TokenId mask_id)
    : tokens_(std::move(tokens)),
      span_start_(span_start),
      span_end_(span_end),
      mask_id_(mask_id) {
  if (!(span_start_ < span_end_ && span_end_ <= tokens_.size())) {
    throw InvalidInput("gap must satisfy 0 <= start < end <= length");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const bool is_mask = tokens_[i] == mask_id_;
    if (in_gap(i) != is_mask) {
      throw InvalidInput("mask tokens must occupy exactly the gap (position " +
                         std::to_string(i) + ")");
    }
  }
}

GapTask GapTask::mask_span(const Sequence& full, std::size_t start,
                           std::size_t end, TokenId mask_id) {
  Sequence tokens = full;
  if (end > tokens.size() || start >= end) {
    throw InvalidInput("span out of range");
  }
  std::fill(tokens.begin() + start, tokens.begin() + end, mask_id);
  return GapTask(std::move(tokens), start, end, mask_id);
}

CondDistribution CondDistribution::normalize(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw InvalidDistribution("a distribution needs at least two entries");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw InvalidDistribution("non-finite score");
  }
  const double lse = log_sum_exp(scores);
  std::vector<double> logp(scores.begin(), scores.end());
  for (double& v : logp) v -= lse;
  return CondDistribution(std::move(logp));
}

CondDistribution CondDistribution::from_normalized(std::vector<double> logp,
                                                   double tolerance) {
  if (logp.size() < 2) {
    throw InvalidDistribution("a distribution needs at least two entries");
  }
  for (double v : logp) {
    if (!std::isfinite(v)) throw InvalidDistribution("non-finite log-prob");
  }
  const double lse = log_sum_exp(logp);
  if (std::abs(lse) > tolerance) {
    throw InvalidDistribution("log-probs not normalized (logsumexp = " +
                              std::to_string(lse) + ")");
  }
  return CondDistribution(std::move(logp));
}

TokenId CondDistribution::argmax() const {
  return static_cast<TokenId>(std::max_element(logp_.begin(), logp_.end()) -
                              logp_.begin());
}

Hypothesis::Hypothesis(const GapTask& task)
    : span_start_(task.span_start()), span_(task.gap_length(), kUnfilled) {}

std::optional<TokenId> Hypothesis::filled(std::size_t pos) const {
  if (pos < span_start_ || pos >= span_start_ + span_.size()) {
    return std::nullopt;
  }
  const TokenId t = span_[pos - span_start_];
  if (t == kUnfilled) return std::nullopt;
  return t;
}

std::vector<std::size_t> Hypothesis::unfilled_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < span_.size(); ++i) {
    if (span_[i] == kUnfilled) out.push_back(span_start_ + i);
  }
  return out;
}

Hypothesis Hypothesis::fill(std::size_t pos, TokenId token,
                            double step_score) const {
  if (pos < span_start_ || pos >= span_start_ + span_.size()) {
    throw InvalidInput("fill position outside the gap");
  }
  if (token < 0) throw InvalidToken("negative token id");
  if (is_filled(pos)) throw InvalidInput("position already filled");
  Hypothesis next = *this;
  next.span_[pos - span_start_] = token;
  next.fill_order_.push_back(pos);
  next.step_scores_.push_back(step_score);
  next.score_ += step_score;
  return next;
}

namespace {

void check_consistent(const GapTask& task, const Hypothesis& hyp) {
  if (hyp.span_start() != task.span_start() ||
      hyp.gap_length() != task.gap_length()) {
    throw InvalidInput("hypothesis does not match the task's gap");
  }
}

}  // namespace

Sequence realize(const GapTask& task, const Hypothesis& hyp, TokenId filler,
                 std::size_t vocab_size) {
  if (filler < 0 || static_cast<std::size_t>(filler) >= vocab_size) {
    throw InvalidToken("filler out of vocabulary range");
  }
  const std::vector<TokenId> fillers(task.gap_length(), filler);
  return realize(task, hyp, fillers, vocab_size);
}

Sequence realize(const GapTask& task, const Hypothesis& hyp,
                 std::span<const TokenId> fillers, std::size_t vocab_size) {
  check_consistent(task, hyp);
  if (fillers.size() != task.gap_length()) {
    throw InvalidInput("filler length must equal the gap length");
  }
  Sequence out = task.tokens();
  const Sequence& span = hyp.span();
  for (std::size_t i = 0; i < span.size(); ++i) {
    TokenId t = span[i] != kUnfilled ? span[i] : fillers[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
      throw InvalidToken("token out of vocabulary range");
    }
    out[task.span_start() + i] = t;
  }
  return out;
}

}  // namespace hcbfill
