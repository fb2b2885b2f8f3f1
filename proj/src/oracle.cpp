#include "hcbfill/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "hcbfill/errors.hpp"

namespace hcbfill {

std::vector<ScoredSpan> enumerate_gap(const JointTable& joint,
                                      const GapTask& task) {
  if (task.length() != joint.length()) {
    throw InvalidInput("task length does not match the joint");
  }
  const Vocab vocab = Vocab::synthetic(joint.alphabet_size());
  const auto spans = all_completions(vocab, task.gap_length(), 1'000'000);

  Sequence pattern = task.tokens();
  for (std::size_t i = task.span_start(); i < task.span_end(); ++i) {
    pattern[i] = kUnfilled;
  }
  const double context_mass = joint.log_marginal(pattern);

  std::vector<ScoredSpan> out;
  out.reserve(spans.size());
  for (const auto& span : spans) {
    std::copy(span.begin(), span.end(), pattern.begin() + task.span_start());
    out.push_back({span, joint.log_prob(pattern) - context_mass});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.logp, a.span, b.logp, b.span);
  });
  return out;
}

namespace {

// log p(z_i = token | z_-i) under the joint.
double full_conditional(const JointTable& joint, Sequence z, std::size_t i,
                        TokenId token) {
  std::vector<double> row(joint.alphabet_size());
  for (std::size_t a = 0; a < row.size(); ++a) {
    z[i] = static_cast<TokenId>(a);
    row[a] = joint.log_prob(z);
  }
  return row[token] - log_sum_exp(row);
}

}  // namespace

double hcb_identity_check(const JointTable& joint, const Sequence& x,
                          const Sequence& y) {
  const std::size_t n = joint.length();
  if (x.size() != n || y.size() != n) {
    throw InvalidInput("sequences must match the joint's length");
  }
  double telescoped = 0.0;
  Sequence z = y;
  for (std::size_t i = 0; i < n; ++i) {
    // z = (x_<i, ?, y_>i)
    telescoped += full_conditional(joint, z, i, x[i]) -
                  full_conditional(joint, z, i, y[i]);
    z[i] = x[i];
  }
  return std::abs(joint.log_prob(x) - joint.log_prob(y) - telescoped);
}

namespace {

std::vector<double> content_logp(const CondDistribution& dist,
                                  const Vocab& vocab) {
  std::vector<double> out;
  for (TokenId t : vocab.content_ids()) out.push_back(dist[t]);
  const double lse = log_sum_exp(out);
  for (double& v : out) v -= lse;
  return out;
}

}  // namespace

CiResidual ci_residual(const ConditionalBackend& backend,
                       const ExactMarginalModel& reference,
                       std::span<const LabeledTask> tasks) {
  if (backend.vocab().size() != reference.vocab().size() ||
      backend.vocab().mask_id() != reference.vocab().mask_id()) {
    throw InvalidInput("backend and reference vocabularies differ");
  }
  CiResidual out;
  double sum_mean = 0.0;
  double sum_kl = 0.0;
  for (const auto& lt : tasks) {
    const GapTask& task = lt.task;
    if (lt.truth.size() != task.gap_length()) {
      throw InvalidInput("truth length does not match the gap");
    }
    Sequence context = task.tokens();
    for (std::size_t i = task.span_start(); i < task.span_end(); ++i) {
      const auto got = content_logp(backend.conditionals(context, i),
                                    backend.vocab());
      const auto want = content_logp(reference.conditionals(context, i),
                                     reference.vocab());
      double sum = 0.0;
      double kl = 0.0;
      for (std::size_t t = 0; t < got.size(); ++t) {
        const double d = std::abs(got[t] - want[t]);
        sum += d;
        out.max = std::max(out.max, d);
        kl += std::exp(want[t]) * (want[t] - got[t]);
      }
      sum_mean += sum / double(got.size());
      sum_kl += std::max(kl, 0.0);
      ++out.num_queries;
      context[i] = lt.truth[i - task.span_start()];
    }
  }
  if (out.num_queries > 0) {
    out.mean = sum_mean / double(out.num_queries);
    out.mean_kl = sum_kl / double(out.num_queries);
  }
  return out;
}

double pivot_spread(const ConditionalBackend& backend, const GapTask& task,
                    std::span<const Sequence> pivots,
                    std::span<const Sequence> completions) {
  if (pivots.size() < 2 || completions.empty()) return 0.0;
  std::vector<std::vector<double>> centered;
  for (const auto& pivot : pivots) {
    const auto mode = ScoringMode::hcb_pivot(pivot);
    std::vector<double> scores;
    scores.reserve(completions.size());
    for (const auto& c : completions) {
      scores.push_back(score_path(backend, task, c, mode).score());
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= double(scores.size());
    for (double& s : scores) s -= mean;
    centered.push_back(std::move(scores));
  }
  double spread = 0.0;
  for (std::size_t c = 0; c < completions.size(); ++c) {
    double lo = centered[0][c];
    double hi = lo;
    for (const auto& v : centered) {
      lo = std::min(lo, v[c]);
      hi = std::max(hi, v[c]);
    }
    spread = std::max(spread, hi - lo);
  }
  return spread;
}

}  // namespace hcbfill
