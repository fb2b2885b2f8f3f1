#include "hcbfill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hcbfill/errors.hpp"

namespace hcbfill {

bool top_k_hit(std::span<const Sequence> ranked, const Sequence& truth,
               std::size_t k) {
  if (k == 0) throw InvalidInput("k must be >= 1");
  const auto r = hit_rank(ranked, truth);
  return r && *r <= k;
}

std::optional<std::size_t> hit_rank(std::span<const Sequence> ranked,
                                    const Sequence& truth) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i] == truth) return i + 1;
  }
  return std::nullopt;
}

double bleu_k(const Sequence& candidate, const Sequence& reference) {
  if (candidate.empty() || reference.empty()) {
    throw InvalidInput("BLEU needs nonempty spans");
  }
  if (candidate.size() != reference.size()) {
    throw InvalidInput("BLEU-k expects equal-length spans");
  }
  const std::size_t max_n = std::min<std::size_t>(4, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::map<Sequence, int> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[Sequence(reference.begin() + i, reference.begin() + i + n)];
    }
    std::map<Sequence, int> cand_counts;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
      ++cand_counts[Sequence(candidate.begin() + i, candidate.begin() + i + n)];
    }
    int clipped = 0;
    int total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(double(clipped) / double(total));
  }
  return 100.0 * std::exp(log_sum / double(max_n));
}

EvalRecord evaluate(std::size_t task_id, std::string method,
                    const Sequence& truth, std::vector<Sequence> ranked) {
  EvalRecord rec;
  rec.task_id = task_id;
  rec.method = std::move(method);
  rec.truth = truth;
  rec.hit_rank = hit_rank(ranked, truth);
  rec.bleu = ranked.empty() ? 0.0 : bleu_k(ranked.front(), truth);
  rec.predictions = std::move(ranked);
  return rec;
}

}  // namespace hcbfill
