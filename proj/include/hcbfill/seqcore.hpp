#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hcbfill {

using TokenId = std::int32_t;
using Sequence = std::vector<TokenId>;

// Stand-in for log(0). Entries at this value carry no mass but stay finite.
inline constexpr double kLogFloor = -1e9;

// Placeholder for a gap position that has not been filled yet.
inline constexpr TokenId kUnfilled = -1;

double log_sum_exp(std::span<const double> values);

class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, TokenId mask_id,
        std::vector<TokenId> special_ids);

  // Content tokens "t0".."t{A-1}" followed by "[MASK]" at id A.
  static Vocab synthetic(std::size_t alphabet_size);
  // Vocabulary known only by its size (remote models); token strings are
  // generated as "<id>".
  static Vocab anonymous(std::size_t size, TokenId mask_id,
                         std::vector<TokenId> special_ids);

  std::size_t size() const { return tokens_.size(); }
  TokenId mask_id() const { return mask_id_; }
  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }
  bool is_special(TokenId id) const { return special_[id]; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<TokenId>& special_ids() const { return special_ids_; }
  // Ascending ids of all non-special tokens; the only legal infill values.
  const std::vector<TokenId>& content_ids() const { return content_ids_; }

 private:
  std::vector<std::string> tokens_;
  TokenId mask_id_;
  std::vector<TokenId> special_ids_;
  std::vector<bool> special_;
  std::vector<TokenId> content_ids_;
  std::unordered_map<std::string, TokenId> index_;
};

// A sequence with one contiguous run [span_start, span_end) of mask tokens.
class GapTask {
 public:
  GapTask(Sequence tokens, std::size_t span_start, std::size_t span_end,
          TokenId mask_id);

  // Masks [start, end) of a fully observed sequence.
  static GapTask mask_span(const Sequence& full, std::size_t start,
                           std::size_t end, TokenId mask_id);

  const Sequence& tokens() const { return tokens_; }
  std::size_t length() const { return tokens_.size(); }
  std::size_t span_start() const { return span_start_; }
  std::size_t span_end() const { return span_end_; }
  std::size_t gap_length() const { return span_end_ - span_start_; }
  bool in_gap(std::size_t pos) const {
    return pos >= span_start_ && pos < span_end_;
  }
  TokenId mask_id() const { return mask_id_; }

 private:
  Sequence tokens_;
  std::size_t span_start_;
  std::size_t span_end_;
  TokenId mask_id_;
};

// A gap task together with the tokens that were removed from it.
struct LabeledTask {
  GapTask task;
  Sequence truth;
};

class CondDistribution {
 public:
  // Softmax of raw log-scores. Throws InvalidDistribution on non-finite input
  // or fewer than two entries.
  static CondDistribution normalize(std::span<const double> scores);
  // Accepts an already normalized vector; throws if logsumexp deviates from 0
  // by more than `tolerance` or an entry is not finite.
  static CondDistribution from_normalized(std::vector<double> logp,
                                          double tolerance = 1e-9);

  double operator[](TokenId id) const { return logp_[id]; }
  std::size_t size() const { return logp_.size(); }
  std::span<const double> logp() const { return logp_; }
  TokenId argmax() const;

  friend bool operator==(const CondDistribution&,
                         const CondDistribution&) = default;

 private:
  explicit CondDistribution(std::vector<double> logp)
      : logp_(std::move(logp)) {}
  std::vector<double> logp_;
};

// A partial infill. Values are immutable; fill() returns an extended copy.
class Hypothesis {
 public:
  explicit Hypothesis(const GapTask& task);

  std::size_t span_start() const { return span_start_; }
  std::size_t gap_length() const { return span_.size(); }
  std::optional<TokenId> filled(std::size_t pos) const;
  bool is_filled(std::size_t pos) const {
    return span_[pos - span_start_] != kUnfilled;
  }
  bool complete() const { return fill_order_.size() == span_.size(); }
  std::vector<std::size_t> unfilled_positions() const;

  // Gap tokens in position order, kUnfilled where open.
  const Sequence& span() const { return span_; }
  const std::vector<std::size_t>& fill_order() const { return fill_order_; }
  const std::vector<double>& step_scores() const { return step_scores_; }
  double score() const { return score_; }

  Hypothesis fill(std::size_t pos, TokenId token, double step_score) const;

 private:
  std::size_t span_start_;
  Sequence span_;
  std::vector<std::size_t> fill_order_;
  std::vector<double> step_scores_;
  double score_ = 0.0;
};

// Context for a query: task tokens with the hypothesis' fills substituted and
// every still-open gap position set to `filler`.
Sequence realize(const GapTask& task, const Hypothesis& hyp, TokenId filler,
                 std::size_t vocab_size);
// Same, with a per-gap-position filler (indexed by offset into the gap).
Sequence realize(const GapTask& task, const Hypothesis& hyp,
                 std::span<const TokenId> fillers, std::size_t vocab_size);

}  // namespace hcbfill
