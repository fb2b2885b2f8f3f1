#pragma once

#include <string>
#include <vector>

#include "hcbfill/backends.hpp"
#include "hcbfill/seqcore.hpp"

namespace hcbfill {

enum class ScoringKind { Standard, HcbMask, HcbPivot };

std::string to_string(ScoringKind kind);

struct ScoringMode {
  ScoringKind kind = ScoringKind::Standard;
  // Gap-length token sequence occupying open positions; HcbPivot only.
  Sequence pivot;
  // HcbPivot: put the mask token (rather than the pivot token) at the query
  // position itself.
  bool query_holds_mask = false;

  static ScoringMode standard() { return {}; }
  static ScoringMode hcb_mask() { return {ScoringKind::HcbMask, {}, false}; }
  static ScoringMode hcb_pivot(Sequence pivot) {
    return {ScoringKind::HcbPivot, std::move(pivot), false};
  }

  // Throws ConfigError when the pivot is missing, has the wrong length, or
  // holds ids outside the vocabulary.
  void validate(const GapTask& task, const Vocab& vocab) const;
};

// The context the scoring function queries at `position`.
Query scoring_query(const GapTask& task, const Hypothesis& hyp,
                    std::size_t position, const ScoringMode& mode,
                    const Vocab& vocab);

// Applies the mode's correction to a distribution obtained for `query`.
// Standard returns logp; HcbMask subtracts the backend's correction term;
// HcbPivot subtracts logp[pivot token at `query.position`].
std::vector<double> apply_scoring(const ConditionalBackend& backend,
                                  const GapTask& task, const Query& query,
                                  const CondDistribution& dist,
                                  const ScoringMode& mode);

// One backend call: per-token step scores f(.) at an open gap position.
std::vector<double> step_scores(const ConditionalBackend& backend,
                                const GapTask& task, const Hypothesis& hyp,
                                std::size_t position, const ScoringMode& mode);

}  // namespace hcbfill
