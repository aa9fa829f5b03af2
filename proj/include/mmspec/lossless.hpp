// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmspec/verifier.hpp"

namespace mmspec {

/// Sampler that walks every outcome of a deterministic procedure by replay.
/// Run the procedure, read weight(), then call advance() and run it again
/// until advance() returns false. Branch weights are taken literally, so a
/// Bernoulli probability outside [0, 1] yields a negative branch weight and
/// is also reported through probability_violation().
class EnumerationSampler final : public Sampler {
 public:
  std::size_t categorical(std::span<const double> dist) override;
  bool bernoulli(double p_true) override;

  double weight() const { return weight_; }
  bool probability_violation() const { return violation_; }
  /// Moves to the next unexplored path; false once all paths are done.
  bool advance();

 private:
  struct Choice {
    std::vector<std::pair<std::size_t, double>> options;
    std::size_t index = 0;
  };
  std::size_t take(std::vector<std::pair<std::size_t, double>> options);

  std::vector<Choice> trail_;
  std::size_t pos_ = 0;
  double weight_ = 1.0;
  bool violation_ = false;
};

/// Complete outputs (ending in EOS or at the length limit) with probabilities.
using OutputDistribution = std::map<std::vector<std::size_t>, double>;

double total_variation(const OutputDistribution& a, const OutputDistribution& b);

/// Reference distribution: every continuation scored by a fresh, uncached
/// target forward over the full sequence.
OutputDistribution autoregressive_distribution(const AssembledSequence& prompt, const TargetParams& target,
                                               const ModelConfig& config, double temperature, std::size_t max_len);

/// Exact distribution of speculative_generate, enumerated cycle by cycle with
/// memoization over committed prefixes.
OutputDistribution speculative_distribution(const AssembledSequence& prompt, const TargetParams& target,
                                            const DraftParams& draft, const ModelConfig& config,
                                            const GenerationConfig& gen, std::size_t max_len,
                                            bool* probability_violation = nullptr);

struct LosslessInstance {
  std::uint64_t seed = 0;
  std::size_t vocab = 4;
  double temperature = 1.0;
  DraftMode mode = DraftMode::Chain;
  std::size_t gamma = 1;
  std::vector<std::size_t> plan{2, 1};
  FusionMode fusion = FusionMode::Decoupled;
  std::size_t max_len = 3;
};

/// Tiny seeded target + unrelated draft + a [system | one patch | instruction] prompt.
struct TinyModels {
  ModelConfig config;
  TargetParams target;
  DraftParams draft;
  AssembledSequence prompt;
};
TinyModels make_tiny_models(std::uint64_t seed, std::size_t vocab, FusionMode fusion);

struct InstanceResult {
  LosslessInstance instance;
  double tv = 0.0;
  std::size_t outcomes = 0;
  bool probability_violation = false;
  bool passed = false;
};

struct CertificationReport {
  VerifyRule rule = VerifyRule::Standard;
  double tolerance = 1e-9;
  std::vector<InstanceResult> results;
  double max_tv = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

/// vocab {4,5,6} x T {0.7, 1.0} x {chain 1, chain 2, tree [2,1]} x seeds.
std::vector<LosslessInstance> default_lossless_grid(std::uint64_t seed, std::size_t seeds_per_cell = 3);

InstanceResult certify_instance(const LosslessInstance& instance, VerifyRule rule, double tolerance = 1e-9);
CertificationReport certify_grid(const std::vector<LosslessInstance>& grid, VerifyRule rule, double tolerance = 1e-9);

nlohmann::json to_json(const CertificationReport& report);

}  // namespace mmspec
