#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hcbfill/backends.hpp"
#include "hcbfill/metrics.hpp"
#include "hcbfill/rng.hpp"
#include "hcbfill/sampling.hpp"
#include "hcbfill/search.hpp"

namespace hcbfill {

class RemoteBackend;

// ---------------------------------------------------------------------------
// Ablations

// Ring buffer of the most recent mask log-probabilities.
class MaskProbBuffer {
 public:
  static constexpr std::size_t kCapacity = 1000;

  void push(double value);
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  double at(std::size_t i) const { return values_[i]; }
  double sample(Rng& rng) const;

 private:
  std::array<double, kCapacity> values_{};
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
};

// Context Scramble: each correction read records the true mask log-prob and
// answers with a uniformly drawn entry of the last 1,000 recorded values.
class ContextScrambleBackend : public BackendDecorator {
 public:
  ContextScrambleBackend(BackendPtr inner, std::uint64_t seed);

  double correction_logp(std::span<const TokenId> context,
                         std::size_t position,
                         const CondDistribution& dist) const override;

  std::size_t buffered() const;

 private:
  mutable std::mutex mu_;
  mutable MaskProbBuffer buffer_;
  mutable Rng rng_;
};

// Random Token Swap: the correction reads log p(y | .) for a fresh uniformly
// drawn content token y instead of log p([MASK] | .).
class TokenSwapBackend : public BackendDecorator {
 public:
  TokenSwapBackend(BackendPtr inner, std::uint64_t seed,
                   std::optional<TokenId> forced_token = std::nullopt);

  double correction_logp(std::span<const TokenId> context,
                         std::size_t position,
                         const CondDistribution& dist) const override;

  std::vector<TokenId> drawn() const;

 private:
  std::optional<TokenId> forced_;
  mutable std::mutex mu_;
  mutable Rng rng_;
  mutable std::vector<TokenId> drawn_;
};

BackendPtr ablation1_wrap(BackendPtr backend, std::uint64_t seed);
BackendPtr ablation2_wrap(BackendPtr backend, std::uint64_t seed);

// Running mean/variance of p([MASK] | .) over every distribution returned.
struct MaskProbStats {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double p);
  void merge(const MaskProbStats& other);
  double variance() const { return count > 1 ? m2 / double(count - 1) : 0.0; }
};

class MaskProbRecorder : public BackendDecorator {
 public:
  using BackendDecorator::BackendDecorator;

  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;
  std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const override;

  MaskProbStats stats() const;

 private:
  mutable std::mutex mu_;
  mutable MaskProbStats stats_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class BackendKind { Exact, Empirical, Perturbed, Remote };
enum class Ablation { None, ContextScramble, TokenSwap };

std::string to_string(BackendKind kind);
std::string to_string(Ablation ablation);

struct BackendSpec {
  BackendKind kind = BackendKind::Exact;
  // Synthetic joint.
  std::size_t alphabet = 3;
  std::size_t length = 6;
  std::uint64_t joint_seed = 1;
  double concentration = 1.0;
  double mask_mass = 1e-4;
  // PerturbedModel.
  double strength = 1.0;
  std::uint64_t perturb_seed = 7;
  // EmpiricalMaskedEstimator.
  double mask_rate = 0.15;
  std::size_t num_samples = 100000;
  double smoothing = 0.5;
  // RemoteBackend; empty endpoint falls back to the environment.
  std::string endpoint;
  std::chrono::milliseconds timeout{30000};
  std::size_t batch_size = 64;
};

struct MethodSpec {
  enum class Type { Beam, Sampler };
  Type type = Type::Beam;
  BeamConfig beam;
  SamplerConfig sampler;
  Ablation ablation = Ablation::None;
  // HcbPivot pivot; a single token is broadcast to the gap length.
  Sequence pivot_pattern;

  std::string label() const;
};

struct ExperimentConfig {
  BackendSpec backend;
  std::optional<std::string> dataset_path;
  std::size_t gap_min = 2;
  std::size_t gap_max = 2;
  std::size_t num_examples = 100;
  std::vector<MethodSpec> methods;
  std::vector<Sequence> pivots;
  std::uint64_t seed = 0;
  std::vector<std::size_t> top_k{1, 5};
  std::size_t workers = 1;
  // Compare top-1 against the exact argmax when the backend is synthetic.
  bool oracle_agreement = true;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::size_t task_id = 0;
  std::size_t method_index = 0;
  std::string method;
  std::size_t gap = 0;
  EvalRecord record;
  std::vector<double> scores;
  std::optional<bool> oracle_agree;
  double millis = 0.0;
  std::size_t scoring_calls = 0;
  std::size_t probe_calls = 0;
  std::optional<std::string> error;
};

struct MethodSummary {
  std::string method;
  std::size_t tasks = 0;
  std::size_t errors = 0;
  std::vector<std::pair<std::size_t, double>> top_k_accuracy;  // percent
  double mean_bleu = 0.0;
  std::optional<double> oracle_agreement;  // percent
  std::size_t scoring_calls = 0;
  std::size_t probe_calls = 0;
  MaskProbStats mask_prob;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<MethodSummary> summary;
  std::size_t skipped_examples = 0;
  bool aborted = false;
};

struct PivotRow {
  Sequence pivot;
  MethodSummary summary;
};

// ---------------------------------------------------------------------------
// Operations

struct BuiltBackend {
  BackendPtr backend;
  // Set for synthetic backends.
  std::shared_ptr<const ExactMarginalModel> exact;
  std::shared_ptr<const RemoteBackend> remote;
};

BuiltBackend make_backend(const BackendSpec& spec);

// Synthetic datasets: one sequence per line, space-separated token ids.
// Remote datasets: one raw text per line, tokenized by the server.
std::vector<Sequence> load_dataset(const std::string& path,
                                   const BuiltBackend& backend);

std::vector<LabeledTask> generate_tasks(const std::vector<Sequence>& dataset,
                                        const Vocab& vocab,
                                        std::size_t gap_min,
                                        std::size_t gap_max,
                                        std::size_t num_examples,
                                        std::uint64_t seed,
                                        std::size_t* skipped = nullptr);

// Runs every method on every task. Backend failures become error rows; more
// than 10% failed rows marks the result aborted.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
// Same, over prebuilt tasks and backend.
ExperimentResult run_methods(const ExperimentConfig& cfg,
                             const BuiltBackend& backend,
                             const std::vector<LabeledTask>& tasks);

// Recomputes per-method summaries from rows, matched to `methods` by
// method_index (mask statistics are not recoverable from rows and are left
// empty).
std::vector<MethodSummary> summarize(const std::vector<ResultRow>& rows,
                                     const std::vector<std::string>& methods,
                                     const std::vector<std::size_t>& top_k);

// HcbPivot beam search once per pivot over a shared task set; sorted by
// top-1 accuracy (descending, stable).
std::vector<PivotRow> pivot_sweep(const ExperimentConfig& cfg);

void write_rows_jsonl(std::ostream& out, const std::vector<ResultRow>& rows);
void write_rows_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void write_summary_csv(std::ostream& out,
                       const std::vector<MethodSummary>& summary);

}  // namespace hcbfill
