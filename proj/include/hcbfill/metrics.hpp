#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcbfill/seqcore.hpp"

namespace hcbfill {

struct EvalRecord {
  std::size_t task_id = 0;
  std::string method;
  Sequence truth;
  std::vector<Sequence> predictions;  // ranked, best first
  std::optional<std::size_t> hit_rank;  // 1-based
  double bleu = 0.0;                    // top-1 vs truth, in [0, 100]
};

// True iff one of the first k predictions equals `truth` exactly.
bool top_k_hit(std::span<const Sequence> ranked, const Sequence& truth,
               std::size_t k);

// 1-based rank of the first exact match, if any.
std::optional<std::size_t> hit_rank(std::span<const Sequence> ranked,
                                    const Sequence& truth);

// Unsmoothed BLEU-k for equal-length spans, k = min(4, length), scaled to
// [0, 100]. Brevity penalty is 1.
double bleu_k(const Sequence& candidate, const Sequence& reference);

EvalRecord evaluate(std::size_t task_id, std::string method,
                    const Sequence& truth, std::vector<Sequence> ranked);

}  // namespace hcbfill
