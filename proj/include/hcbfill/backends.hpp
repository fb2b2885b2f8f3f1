#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hcbfill/seqcore.hpp"

namespace hcbfill {

struct Query {
  Sequence context;
  std::size_t position = 0;
};

// Source of per-position conditionals p(. | context). Implementations must be
// deterministic in (context, position).
class ConditionalBackend {
 public:
  virtual ~ConditionalBackend() = default;

  virtual const Vocab& vocab() const = 0;
  virtual std::string name() const = 0;

  virtual CondDistribution conditionals(std::span<const TokenId> context,
                                        std::size_t position) const = 0;

  // One result per query, in query order.
  virtual std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const;

  // The value subtracted as the mask correction in HCB scoring, read from a
  // distribution this backend already produced for (context, position).
  virtual double correction_logp(std::span<const TokenId> context,
                                 std::size_t position,
                                 const CondDistribution& dist) const;
};

using BackendPtr = std::shared_ptr<const ConditionalBackend>;

// Explicit joint distribution over A^n content sequences, stored in log space
// with row-major indexing (position 0 most significant).
class JointTable {
 public:
  JointTable(std::size_t alphabet_size, std::size_t length,
             std::vector<double> logp);

  // Dirichlet(concentration) draw over all A^n cells.
  static JointTable random(std::size_t alphabet_size, std::size_t length,
                           std::uint64_t seed, double concentration = 1.0);
  static JointTable uniform(std::size_t alphabet_size, std::size_t length);
  // All mass on `seq`; every other cell sits at kLogFloor.
  static JointTable point_mass(std::size_t alphabet_size,
                               const Sequence& seq);

  std::size_t alphabet_size() const { return alphabet_; }
  std::size_t length() const { return length_; }
  std::size_t num_cells() const { return logp_.size(); }
  std::span<const double> logp() const { return logp_; }

  std::size_t index_of(std::span<const TokenId> seq) const;
  Sequence sequence_at(std::size_t index) const;
  double log_prob(std::span<const TokenId> seq) const {
    return logp_[index_of(seq)];
  }
  // log of the total mass of cells matching `pattern`; entries outside
  // [0, A) are wildcards.
  double log_marginal(std::span<const TokenId> pattern) const;

  std::vector<Sequence> sample(std::size_t count, std::uint64_t seed) const;

 private:
  std::size_t alphabet_;
  std::size_t length_;
  std::vector<double> logp_;
};

// Conditionals of a known joint: observed (non-mask) context positions are
// conditioned on, masked ones are summed out. Mask tokens therefore carry no
// information, and the mask itself receives constant mass `mask_mass`.
class ExactMarginalModel : public ConditionalBackend {
 public:
  explicit ExactMarginalModel(JointTable joint, double mask_mass = 1e-4);

  const Vocab& vocab() const override { return vocab_; }
  std::string name() const override { return "exact"; }
  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;

  // log p(x_position = a | observed context) for each content token a,
  // without the mask mixture.
  std::vector<double> content_conditional(std::span<const TokenId> context,
                                          std::size_t position) const;

  const JointTable& joint() const { return joint_; }
  double mask_mass() const { return mask_mass_; }

 private:
  void check_query(std::span<const TokenId> context,
                   std::size_t position) const;

  JointTable joint_;
  double mask_mass_;
  Vocab vocab_;
};

// Wraps an ExactMarginalModel and distorts every query whose context holds a
// mask token anywhere. Mask-free queries pass through untouched.
class PerturbedModel : public ConditionalBackend {
 public:
  PerturbedModel(std::shared_ptr<const ExactMarginalModel> base,
                 double strength, std::uint64_t seed);

  const Vocab& vocab() const override { return base_->vocab(); }
  std::string name() const override { return "perturbed"; }
  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;

  // Deterministic value in [-1, 1].
  double shift(TokenId token, std::span<const TokenId> context,
               std::size_t position) const;

  const ExactMarginalModel& base() const { return *base_; }
  double strength() const { return strength_; }

 private:
  std::shared_ptr<const ExactMarginalModel> base_;
  double strength_;
  std::uint64_t seed_;
};

struct EmpiricalFitOptions {
  double mask_rate = 0.15;
  std::size_t num_samples = 0;
  double smoothing = 0.5;
  double mask_mass = 1e-4;
  std::uint64_t seed = 0;
};

// Count-based minimizer of the masked-token log loss. Contexts are keyed by
// the exact masked sequence; unseen contexts answer uniformly over content.
class EmpiricalMaskedEstimator : public ConditionalBackend {
 public:
  // Draws `num_samples` masked training examples, cycling through `corpus`.
  static EmpiricalMaskedEstimator fit(const std::vector<Sequence>& corpus,
                                      std::size_t alphabet_size,
                                      const EmpiricalFitOptions& options);

  const Vocab& vocab() const override { return vocab_; }
  std::string name() const override { return "empirical"; }
  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;

  std::size_t num_samples() const { return num_samples_; }
  std::size_t num_contexts() const { return counts_.size(); }
  // Number of training targets seen for this (context, position); the query
  // position is treated as masked regardless of what it holds.
  std::size_t support(std::span<const TokenId> context,
                      std::size_t position) const;

 private:
  struct KeyHash {
    std::size_t operator()(const Sequence& key) const;
  };

  EmpiricalMaskedEstimator(std::size_t alphabet_size, std::size_t length,
                           EmpiricalFitOptions options);
  Sequence key_for(std::span<const TokenId> context,
                   std::size_t position) const;

  Vocab vocab_;
  std::size_t alphabet_;
  std::size_t length_;
  EmpiricalFitOptions options_;
  std::size_t num_samples_ = 0;
  // Key: masked sequence followed by the query position.
  std::unordered_map<Sequence, std::vector<std::uint32_t>, KeyHash> counts_;
};

// Forwards everything to an inner backend.
class BackendDecorator : public ConditionalBackend {
 public:
  explicit BackendDecorator(BackendPtr inner) : inner_(std::move(inner)) {}

  const Vocab& vocab() const override { return inner_->vocab(); }
  std::string name() const override { return inner_->name(); }
  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override {
    return inner_->conditionals(context, position);
  }
  std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const override {
    return inner_->conditionals_batch(queries);
  }
  double correction_logp(std::span<const TokenId> context,
                         std::size_t position,
                         const CondDistribution& dist) const override {
    return inner_->correction_logp(context, position, dist);
  }

  const ConditionalBackend& inner() const { return *inner_; }

 protected:
  BackendPtr inner_;
};

// Counts queries (one per conditional requested, batched or not).
class CallCountingBackend : public BackendDecorator {
 public:
  using BackendDecorator::BackendDecorator;

  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;
  std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const override;

  std::size_t calls() const { return calls_.load(); }
  void reset() { calls_ = 0; }

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

// Memoizes conditionals per (context, position) for the lifetime of the
// object.
class MemoizingBackend : public BackendDecorator {
 public:
  using BackendDecorator::BackendDecorator;

  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;
  std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const override;

 private:
  struct KeyHash {
    std::size_t operator()(const Sequence& key) const;
  };
  mutable std::mutex mu_;
  mutable std::unordered_map<Sequence, CondDistribution, KeyHash> cache_;
};

}  // namespace hcbfill
