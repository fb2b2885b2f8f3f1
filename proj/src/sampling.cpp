#include "hcbfill/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hcbfill/errors.hpp"
#include "hcbfill/rng.hpp"

namespace hcbfill {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be > 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw ConfigError("nucleus p must lie in (0, 1]");
  }
  if (num_candidates == 0) throw ConfigError("num_candidates must be >= 1");
}

CondDistribution transform(const CondDistribution& dist,
                           const SamplerConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case SamplerKind::Pure:
      return dist;
    case SamplerKind::Temperature: {
      if (cfg.temperature == 1.0) return dist;
      std::vector<double> scaled(dist.logp().begin(), dist.logp().end());
      for (double& v : scaled) v /= cfg.temperature;
      return CondDistribution::normalize(scaled);
    }
    case SamplerKind::Nucleus: {
      std::vector<std::size_t> order(dist.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        return dist.logp()[a] > dist.logp()[b];
      });
      std::vector<double> kept(dist.size(), kLogFloor);
      double mass = 0.0;
      for (std::size_t idx : order) {
        kept[idx] = dist.logp()[idx];
        mass += std::exp(dist.logp()[idx]);
        if (mass >= cfg.top_p) break;
      }
      return CondDistribution::normalize(kept);
    }
  }
  return dist;
}

namespace {

TokenId draw_content(const CondDistribution& dist, const Vocab& vocab,
                     Rng& rng) {
  const auto& content = vocab.content_ids();
  double top = kLogFloor;
  for (TokenId t : content) top = std::max(top, dist[t]);
  std::vector<double> cdf(content.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < content.size(); ++i) {
    acc += std::exp(dist[content[i]] - top);
    cdf[i] = acc;
  }
  const double u = uniform01(rng) * acc;
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return content[std::min<std::size_t>(it - cdf.begin(), content.size() - 1)];
}

}  // namespace

SampleResult sample_infill(const ConditionalBackend& backend,
                           const GapTask& task, const SamplerConfig& cfg) {
  cfg.validate();
  const Vocab& vocab = backend.vocab();
  if (vocab.content_ids().empty()) {
    throw ConfigError("vocabulary has no content tokens");
  }
  std::vector<Hypothesis> cands(cfg.num_candidates, Hypothesis(task));
  SampleResult result;
  for (std::size_t step = 0; step < task.gap_length(); ++step) {
    const std::size_t pos = task.span_start() + step;
    std::vector<Query> queries;
    queries.reserve(cands.size());
    for (const auto& h : cands) {
      queries.push_back({realize(task, h, vocab.mask_id(), vocab.size()), pos});
    }
    const auto dists = backend.conditionals_batch(queries);
    result.calls_per_step.push_back(queries.size());
    for (std::size_t c = 0; c < cands.size(); ++c) {
      Rng rng(derive_seed({cfg.seed, c, step}));
      const TokenId tok = draw_content(transform(dists[c], cfg), vocab, rng);
      cands[c] = cands[c].fill(pos, tok, dists[c][tok]);
    }
  }

  std::stable_sort(cands.begin(), cands.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return ranks_before(a.score(), a.span(), b.score(),
                                         b.span());
                   });
  for (const auto& h : cands) {
    Completion c;
    c.tokens = realize(task, h, vocab.mask_id(), vocab.size());
    c.span_start = task.span_start();
    c.span_end = task.span_end();
    c.score = h.score();
    c.fill_order = h.fill_order();
    c.step_scores = h.step_scores();
    result.ranked.push_back(std::move(c));
  }
  return result;
}

std::vector<Completion> collapse_duplicates(std::vector<Completion> ranked) {
  std::set<Sequence> seen;
  std::vector<Completion> out;
  for (auto& c : ranked) {
    if (seen.insert(c.span()).second) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace hcbfill
