#pragma once

#include <cstdint>
#include <vector>

#include "hcbfill/backends.hpp"
#include "hcbfill/search.hpp"

namespace hcbfill {

enum class SamplerKind { Pure, Temperature, Nucleus };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Pure;
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t num_candidates = 5;
  std::uint64_t seed = 0;

  static SamplerConfig pure(std::size_t b, std::uint64_t seed = 0) {
    return {SamplerKind::Pure, 1.0, 1.0, b, seed};
  }
  static SamplerConfig with_temperature(double t, std::size_t b,
                                        std::uint64_t seed = 0) {
    return {SamplerKind::Temperature, t, 1.0, b, seed};
  }
  static SamplerConfig nucleus(double p, std::size_t b,
                               std::uint64_t seed = 0) {
    return {SamplerKind::Nucleus, 1.0, p, b, seed};
  }

  void validate() const;
};

CondDistribution transform(const CondDistribution& dist,
                           const SamplerConfig& cfg);

struct SampleResult {
  // All num_candidates completions, ranked by untransformed cumulative
  // log-probability (duplicates kept).
  std::vector<Completion> ranked;
  std::vector<std::size_t> calls_per_step;
};

// Left-to-right sampling of num_candidates independent infills; each step
// issues exactly one query per candidate.
SampleResult sample_infill(const ConditionalBackend& backend,
                           const GapTask& task, const SamplerConfig& cfg);

// Keeps the first occurrence of each gap span, preserving order.
std::vector<Completion> collapse_duplicates(std::vector<Completion> ranked);

}  // namespace hcbfill
