#pragma once

#include <span>
#include <utility>
#include <vector>

#include "hcbfill/backends.hpp"
#include "hcbfill/search.hpp"

namespace hcbfill {

struct CiResidual {
  double mean = 0.0;     // mean over queries of the per-token mean |diff|
  double max = 0.0;      // max over queries and tokens of |diff|
  double mean_kl = 0.0;  // mean over queries of KL(reference || backend)
  std::size_t num_queries = 0;
};

struct ResidualReport {
  CiResidual ci_residual;
  double pivot_spread = 0.0;
};

struct ScoredSpan {
  Sequence span;
  double logp;
};

// Exact log p(span | context) for every completion of the task's gap, ranked
// with the beam's tie-break. Throws TooLarge past 10^6 completions.
std::vector<ScoredSpan> enumerate_gap(const JointTable& joint,
                                      const GapTask& task);

// |log p(x) - log p(y) - sum_i [log p(x_i | x_<i, y_>i) - log p(y_i | x_<i, y_>i)]|
// with conditionals taken from the joint.
double hcb_identity_check(const JointTable& joint, const Sequence& x,
                          const Sequence& y);

// For every task and gap position i, fills gap positions before i with the
// truth, masks i and everything after it in the gap, and compares the
// backend's content conditional at i with the reference's. Content
// log-probs are renormalized over content tokens before comparing, so a
// differing mask mass does not register.
CiResidual ci_residual(const ConditionalBackend& backend,
                       const ExactMarginalModel& reference,
                       std::span<const LabeledTask> tasks);

// Left-to-right HcbPivot cumulative score of every completion, one vector per
// pivot; each vector is mean-centered, and the result is the largest spread
// (max - min across pivots) over completions.
double pivot_spread(const ConditionalBackend& backend, const GapTask& task,
                    std::span<const Sequence> pivots,
                    std::span<const Sequence> completions);

}  // namespace hcbfill
