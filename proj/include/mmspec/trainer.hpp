// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmspec/autodiff.hpp"
#include "mmspec/datagen.hpp"
#include "mmspec/model.hpp"

namespace mmspec {

/// One example with its frozen-teacher signals.
struct TrainExample {
  AssembledSequence seq;                     // prompt + reference answer
  Matrix hidden;                             // teacher h, one row per position
  std::vector<std::size_t> teacher_tokens;   // argmax of teacher p per position
  std::vector<std::size_t> loss_positions;   // draft positions i that are scored (predicting h_{i+1})
};

/// Text positions i >= system_end with a successor; visual positions never.
std::vector<std::size_t> loss_positions(const AssembledSequence& seq);
TrainExample make_train_example(const InstructionExample& ex, const TargetParams& target, const ModelConfig& config);
std::vector<TrainExample> make_train_examples(const std::vector<InstructionExample>& corpus,
                                              const TargetParams& target, const ModelConfig& config);

/// Teacher signals cached on disk, keyed by target fingerprint and corpus
/// contents. Recomputed (and rewritten) when the key does not match.
std::vector<TrainExample> cached_train_examples(const std::filesystem::path& cache_file,
                                                const std::vector<InstructionExample>& corpus,
                                                const TargetParams& target, const ModelConfig& config);

struct DraftVars {
  ad::Var fuse_w, fuse_b;
  ad::BlockVars block;
  std::vector<ad::Var> flat;  // DraftParams::for_each order
};
DraftVars bind_draft(ad::Tape& t, const DraftParams& params, bool trainable);

/// Draft inputs for positions 0..L-2 under `mode`, then the draft block.
/// Returns predicted features, one row per position 0..L-2.
ad::Var draft_tape_features(ad::Tape& t, const DraftVars& v, const TrainExample& ex, FusionMode mode,
                            const ModelConfig& config);

/// smooth-L1(pred h_{i+1}, teacher h_{i+1}) + w * CE(pred logits, teacher argmax at i+1),
/// averaged over the loss positions. Throws on an empty mask.
ad::Var draft_loss(ad::Tape& t, const DraftVars& v, const TrainExample& ex, const TargetParams& target,
                   const ModelConfig& config, FusionMode mode, double ce_weight);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Matrix> grads;  // DraftParams::for_each order
};
LossAndGrads draft_loss_and_grads(const DraftParams& draft, const TrainExample& ex, const TargetParams& target,
                                  const ModelConfig& config, double ce_weight);
double mean_draft_loss(const DraftParams& draft, const std::vector<TrainExample>& examples,
                       const TargetParams& target, const ModelConfig& config, double ce_weight);

/// ((T - t) / T, t / T). Throws when t > T or T == 0.
std::pair<double, double> mix_fractions(std::size_t t, std::size_t total);

enum class Source { Text, Visual };
struct EpochItem {
  Source source = Source::Text;
  std::size_t index = 0;
};
struct EpochPlan {
  std::vector<EpochItem> items;
  std::size_t text_count = 0;
  std::size_t visual_count = 0;
  bool with_replacement = false;
};

/// round(size * text fraction) text items, the rest visual, drawn without
/// replacement unless a source is too small (then flagged), and shuffled.
/// Both sources index one shared permutation stream, so identical sources
/// give identical epochs for every t.
EpochPlan build_epoch_dataset(std::size_t text_size, std::size_t visual_size, std::size_t t, std::size_t total,
                              std::size_t epoch_size, const RngState& rng);

enum class Strategy { VisionOnly, TextOnly, TwoStageGradual, TwoStageDirect, Vision1Vision2 };
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct TrainConfig {
  std::size_t stage1_epochs = 10;
  std::size_t stage2_epochs = 20;
  std::size_t epoch_size = 0;  // 0: the size of the larger training source
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t batch = 16;
  double ce_weight = 0.1;
  double clip = 5.0;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::TwoStageGradual;
  FusionMode fusion = FusionMode::Decoupled;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLoss {
  std::size_t epoch = 0;  // global, 1-based
  std::size_t stage = 1;
  double text_fraction = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  DraftParams draft;
  std::vector<EpochLoss> curve;
};

/// Trains one draft variant. `visual2` is only used by Vision1Vision2.
/// The target is never modified.
TrainResult train_two_stage(const DraftParams& init, const TargetParams& target, const ModelConfig& config,
                            const std::vector<TrainExample>& text, const std::vector<TrainExample>& visual,
                            const std::vector<TrainExample>& visual2, const TrainConfig& tc,
                            const std::function<void(const EpochLoss&)>& on_epoch = {});

std::string loss_curve_csv(const std::vector<EpochLoss>& curve);

}  // namespace mmspec
