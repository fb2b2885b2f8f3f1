#include "hcbfill/scoring.hpp"

#include "hcbfill/errors.hpp"

namespace hcbfill {

std::string to_string(ScoringKind kind) {
  switch (kind) {
    case ScoringKind::Standard:
      return "standard";
    case ScoringKind::HcbMask:
      return "hcb";
    case ScoringKind::HcbPivot:
      return "hcb-pivot";
  }
  return "?";
}

void ScoringMode::validate(const GapTask& task, const Vocab& vocab) const {
  if (kind != ScoringKind::HcbPivot) return;
  if (pivot.empty()) throw ConfigError("hcb-pivot scoring requires a pivot");
  if (pivot.size() != task.gap_length()) {
    throw ConfigError("pivot length " + std::to_string(pivot.size()) +
                      " != gap length " + std::to_string(task.gap_length()));
  }
  for (TokenId t : pivot) {
    if (!vocab.contains(t)) throw ConfigError("pivot token outside vocabulary");
  }
}

Query scoring_query(const GapTask& task, const Hypothesis& hyp,
                    std::size_t position, const ScoringMode& mode,
                    const Vocab& vocab) {
  if (!task.in_gap(position) || hyp.is_filled(position)) {
    throw InvalidQuery("scoring position must be an open gap position");
  }
  Query q;
  q.position = position;
  if (mode.kind == ScoringKind::HcbPivot) {
    mode.validate(task, vocab);
    q.context = realize(task, hyp, mode.pivot, vocab.size());
    if (mode.query_holds_mask) q.context[position] = vocab.mask_id();
  } else {
    q.context = realize(task, hyp, vocab.mask_id(), vocab.size());
  }
  return q;
}

std::vector<double> apply_scoring(const ConditionalBackend& backend,
                                  const GapTask& task, const Query& query,
                                  const CondDistribution& dist,
                                  const ScoringMode& mode) {
  std::vector<double> scores(dist.logp().begin(), dist.logp().end());
  double correction = 0.0;
  switch (mode.kind) {
    case ScoringKind::Standard:
      return scores;
    case ScoringKind::HcbMask:
      correction = backend.correction_logp(query.context, query.position, dist);
      break;
    case ScoringKind::HcbPivot:
      correction = dist[mode.pivot[query.position - task.span_start()]];
      break;
  }
  for (double& s : scores) s -= correction;
  return scores;
}

std::vector<double> step_scores(const ConditionalBackend& backend,
                                const GapTask& task, const Hypothesis& hyp,
                                std::size_t position, const ScoringMode& mode) {
  const Query q = scoring_query(task, hyp, position, mode, backend.vocab());
  const CondDistribution dist = backend.conditionals(q.context, q.position);
  return apply_scoring(backend, task, q, dist, mode);
}

}  // namespace hcbfill
