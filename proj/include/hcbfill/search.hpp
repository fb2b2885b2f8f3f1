#pragma once

#include <cstddef>
#include <vector>

#include "hcbfill/backends.hpp"
#include "hcbfill/scoring.hpp"
#include "hcbfill/seqcore.hpp"

namespace hcbfill {

enum class OrderKind { LeftToRight, BestToWorst };

struct OrderPolicy {
  OrderKind kind = OrderKind::LeftToRight;
  // BestToWorst only. When false, one position is chosen per step for the
  // whole beam (highest confidence over all hypotheses).
  bool per_hypothesis = true;
  // BestToWorst only. Probe with the scoring mode's realization instead of
  // masks in every open slot.
  bool mode_consistent = false;

  static OrderPolicy left_to_right() { return {}; }
  static OrderPolicy best_to_worst() { return {OrderKind::BestToWorst}; }
};

struct BeamConfig {
  std::size_t beam_size = 5;
  ScoringMode mode;
  OrderPolicy order;
};

struct Completion {
  Sequence tokens;  // full sequence, gap filled
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  double score = 0.0;
  std::vector<std::size_t> fill_order;
  std::vector<double> step_scores;

  Sequence span() const {
    return Sequence(tokens.begin() + span_start, tokens.begin() + span_end);
  }
};

struct SearchStats {
  // Backend queries issued to score expansions, one entry per step.
  std::vector<std::size_t> scoring_calls_per_step;
  // Confidence probes issued by BestToWorst position selection.
  std::size_t probe_calls = 0;

  std::size_t scoring_calls() const;
  std::size_t total_calls() const { return scoring_calls() + probe_calls; }
};

struct SearchResult {
  std::vector<Completion> ranked;
  SearchStats stats;
};

// Beam order: higher score first, then lexicographically smaller gap tokens
// (open slots sort before any token).
bool ranks_before(double score_a, const Sequence& span_a, double score_b,
                  const Sequence& span_b);

// LeftToRight: smallest open position. BestToWorst: the open position whose
// probe distribution has the largest max over content tokens, ties to the
// smallest index. `probe_calls`, when given, is incremented per probe issued.
std::size_t select_next_position(const ConditionalBackend& backend,
                                 const GapTask& task, const Hypothesis& hyp,
                                 const OrderPolicy& order,
                                 const ScoringMode& mode = {},
                                 std::size_t* probe_calls = nullptr);

SearchResult infill_beam_search(const ConditionalBackend& backend,
                                const GapTask& task, const BeamConfig& cfg);

// Beam search over a sequence that is entirely gap, filled left to right with
// standard scores.
SearchResult autoregressive_beam_search(const ConditionalBackend& backend,
                                        std::size_t length,
                                        std::size_t beam_size);

// Scores one completion along the path the search would take to reach it
// (position choices follow `order`). Returns the completed hypothesis.
Hypothesis score_path(const ConditionalBackend& backend, const GapTask& task,
                      const Sequence& span, const ScoringMode& mode,
                      const OrderPolicy& order = {});

// Every content-token assignment to a gap of `gap_length`, in lexicographic
// order. Throws TooLarge beyond `limit` completions.
std::vector<Sequence> all_completions(const Vocab& vocab,
                                      std::size_t gap_length,
                                      std::size_t limit = 1'000'000);

}  // namespace hcbfill
