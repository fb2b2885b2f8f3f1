#include "hcbfill/search.hpp"

#include <algorithm>
#include <limits>

#include "hcbfill/errors.hpp"

namespace hcbfill {

std::size_t SearchStats::scoring_calls() const {
  std::size_t total = 0;
  for (auto c : scoring_calls_per_step) total += c;
  return total;
}

bool ranks_before(double score_a, const Sequence& span_a, double score_b,
                  const Sequence& span_b) {
  if (score_a != score_b) return score_a > score_b;
  return span_a < span_b;
}

namespace {

double max_content(const CondDistribution& dist, const Vocab& vocab) {
  double best = -std::numeric_limits<double>::infinity();
  for (TokenId t : vocab.content_ids()) best = std::max(best, dist[t]);
  return best;
}

Query probe_query(const GapTask& task, const Hypothesis& hyp,
                  std::size_t position, const OrderPolicy& order,
                  const ScoringMode& mode, const Vocab& vocab) {
  if (order.mode_consistent) {
    return scoring_query(task, hyp, position, mode, vocab);
  }
  return Query{realize(task, hyp, vocab.mask_id(), vocab.size()), position};
}

// Confidence of every open position of `hyp`, in ascending position order.
std::vector<double> confidences(const ConditionalBackend& backend,
                                const GapTask& task, const Hypothesis& hyp,
                                const std::vector<std::size_t>& open,
                                const OrderPolicy& order,
                                const ScoringMode& mode,
                                std::size_t* probe_calls) {
  std::vector<Query> probes;
  probes.reserve(open.size());
  for (std::size_t p : open) {
    probes.push_back(probe_query(task, hyp, p, order, mode, backend.vocab()));
  }
  const auto dists = backend.conditionals_batch(probes);
  if (probe_calls) *probe_calls += probes.size();
  std::vector<double> conf;
  conf.reserve(open.size());
  for (const auto& d : dists) conf.push_back(max_content(d, backend.vocab()));
  return conf;
}

struct Candidate {
  double score;
  std::uint32_t parent;
  TokenId token;
};

}  // namespace

std::size_t select_next_position(const ConditionalBackend& backend,
                                 const GapTask& task, const Hypothesis& hyp,
                                 const OrderPolicy& order,
                                 const ScoringMode& mode,
                                 std::size_t* probe_calls) {
  const auto open = hyp.unfilled_positions();
  if (open.empty()) throw InvalidInput("hypothesis is already complete");
  if (order.kind == OrderKind::LeftToRight || open.size() == 1) {
    return open.front();
  }
  const auto conf =
      confidences(backend, task, hyp, open, order, mode, probe_calls);
  std::size_t best = 0;
  for (std::size_t i = 1; i < conf.size(); ++i) {
    if (conf[i] > conf[best]) best = i;
  }
  return open[best];
}

SearchResult infill_beam_search(const ConditionalBackend& backend,
                                const GapTask& task, const BeamConfig& cfg) {
  if (cfg.beam_size == 0) throw ConfigError("beam size must be >= 1");
  const Vocab& vocab = backend.vocab();
  cfg.mode.validate(task, vocab);
  if (task.mask_id() != vocab.mask_id()) {
    throw ConfigError("task mask id does not match the backend vocabulary");
  }
  const auto& content = vocab.content_ids();
  if (content.empty()) throw ConfigError("vocabulary has no content tokens");

  SearchResult result;
  std::vector<Hypothesis> beam{Hypothesis(task)};
  const bool b2w = cfg.order.kind == OrderKind::BestToWorst;

  for (std::size_t step = 0; step < task.gap_length(); ++step) {
    std::vector<std::size_t> positions(beam.size());
    if (b2w && !cfg.order.per_hypothesis) {
      const auto open = beam.front().unfilled_positions();
      std::vector<double> best(open.size(),
                               -std::numeric_limits<double>::infinity());
      if (open.size() > 1) {
        for (const auto& hyp : beam) {
          const auto conf = confidences(backend, task, hyp, open, cfg.order,
                                        cfg.mode, &result.stats.probe_calls);
          for (std::size_t i = 0; i < open.size(); ++i) {
            best[i] = std::max(best[i], conf[i]);
          }
        }
      }
      std::size_t pick = 0;
      for (std::size_t i = 1; i < open.size(); ++i) {
        if (best[i] > best[pick]) pick = i;
      }
      std::fill(positions.begin(), positions.end(), open[pick]);
    } else {
      for (std::size_t h = 0; h < beam.size(); ++h) {
        positions[h] = select_next_position(backend, task, beam[h], cfg.order,
                                            cfg.mode,
                                            &result.stats.probe_calls);
      }
    }

    std::vector<Query> queries;
    queries.reserve(beam.size());
    for (std::size_t h = 0; h < beam.size(); ++h) {
      queries.push_back(
          scoring_query(task, beam[h], positions[h], cfg.mode, vocab));
    }
    const auto dists = backend.conditionals_batch(queries);
    result.stats.scoring_calls_per_step.push_back(queries.size());

    // Scores are applied in hypothesis order so stateful correction sources
    // see a reproducible call sequence.
    std::vector<Candidate> cands;
    cands.reserve(beam.size() * content.size());
    std::vector<std::vector<double>> step_values(beam.size());
    for (std::size_t h = 0; h < beam.size(); ++h) {
      step_values[h] = apply_scoring(backend, task, queries[h], dists[h], cfg.mode);
      for (TokenId v : content) {
        cands.push_back({beam[h].score() + step_values[h][v],
                         static_cast<std::uint32_t>(h), v});
      }
    }

    auto token_at = [&](const Candidate& c, std::size_t offset) {
      if (task.span_start() + offset == positions[c.parent]) return c.token;
      return beam[c.parent].span()[offset];
    };
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      for (std::size_t o = 0; o < task.gap_length(); ++o) {
        const TokenId ta = token_at(a, o);
        const TokenId tb = token_at(b, o);
        if (ta != tb) return ta < tb;
      }
      return false;
    };
    const std::size_t keep = std::min(cfg.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(), better);

    std::vector<Hypothesis> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      next.push_back(beam[c.parent].fill(positions[c.parent], c.token,
                                         step_values[c.parent][c.token]));
    }
    beam = std::move(next);
  }

  result.ranked.reserve(beam.size());
  for (const auto& hyp : beam) {
    Completion c;
    c.tokens = realize(task, hyp, vocab.mask_id(), vocab.size());
    c.span_start = task.span_start();
    c.span_end = task.span_end();
    c.score = hyp.score();
    c.fill_order = hyp.fill_order();
    c.step_scores = hyp.step_scores();
    result.ranked.push_back(std::move(c));
  }
  return result;
}

SearchResult autoregressive_beam_search(const ConditionalBackend& backend,
                                        std::size_t length,
                                        std::size_t beam_size) {
  if (length == 0) throw InvalidInput("length must be >= 1");
  const TokenId mask = backend.vocab().mask_id();
  GapTask task(Sequence(length, mask), 0, length, mask);
  return infill_beam_search(backend, task,
                            BeamConfig{beam_size, ScoringMode::standard(),
                                       OrderPolicy::left_to_right()});
}

Hypothesis score_path(const ConditionalBackend& backend, const GapTask& task,
                      const Sequence& span, const ScoringMode& mode,
                      const OrderPolicy& order) {
  if (span.size() != task.gap_length()) {
    throw InvalidInput("completion length must equal the gap length");
  }
  Hypothesis hyp(task);
  while (!hyp.complete()) {
    const std::size_t pos =
        select_next_position(backend, task, hyp, order, mode);
    const TokenId tok = span[pos - task.span_start()];
    const auto scores = step_scores(backend, task, hyp, pos, mode);
    hyp = hyp.fill(pos, tok, scores.at(tok));
  }
  return hyp;
}

std::vector<Sequence> all_completions(const Vocab& vocab,
                                      std::size_t gap_length,
                                      std::size_t limit) {
  const auto& content = vocab.content_ids();
  std::size_t total = 1;
  for (std::size_t i = 0; i < gap_length; ++i) {
    if (total > limit / std::max<std::size_t>(content.size(), 1)) {
      throw TooLarge("too many completions to enumerate");
    }
    total *= content.size();
  }
  if (total > limit) throw TooLarge("too many completions to enumerate");
  std::vector<Sequence> out;
  out.reserve(total);
  std::vector<std::size_t> digit(gap_length, 0);
  for (std::size_t n = 0; n < total; ++n) {
    Sequence s(gap_length);
    for (std::size_t i = 0; i < gap_length; ++i) s[i] = content[digit[i]];
    out.push_back(std::move(s));
    for (std::size_t i = gap_length; i-- > 0;) {
      if (++digit[i] < content.size()) break;
      digit[i] = 0;
    }
  }
  return out;
}

}  // namespace hcbfill
