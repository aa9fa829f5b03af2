// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmspec/autodiff.hpp"
#include "mmspec/datagen.hpp"
#include "mmspec/model.hpp"

namespace mmspec {

/// Target parameters bound to a tape. `flat` follows TargetParams::for_each order.
struct TargetVars {
  ad::Var token_embedding, position_embedding, patch_in_w, patch_in_b, vision_position;
  std::vector<ad::BlockVars> vision_blocks;
  ad::Var vision_ln_gain, vision_ln_bias, proj_w1, proj_b1, proj_w2, proj_b2;
  std::vector<ad::BlockVars> blocks;
  ad::Var final_ln_gain, final_ln_bias, lm_head;
  std::vector<ad::Var> flat;
};

TargetVars bind_target(ad::Tape& t, const TargetParams& params, bool trainable);
std::vector<Matrix> collect_grads(const ad::Tape& t, const std::vector<ad::Var>& flat);

/// Full target forward of prompt + reference answer on the tape; returns logits
/// (one row per position) and the prompt length through `prompt_length`.
ad::Var target_tape_logits(ad::Tape& t, const TargetVars& v, const InstructionExample& ex, const ModelConfig& config,
                           std::size_t* prompt_length);
/// Mean next-token cross-entropy over the answer tokens.
ad::Var target_answer_loss(ad::Tape& t, const TargetVars& v, const InstructionExample& ex, const ModelConfig& config);

struct PretrainConfig {
  std::size_t max_epochs = 30;
  std::size_t batch = 16;
  double lr = 3e-3;
  double clip = 1.0;
  double accuracy_gate = 0.9;
  std::size_t eval_examples = 200;
  std::size_t text_per_epoch = 1000;
  std::size_t visual_per_epoch = 2000;
  std::uint64_t seed = 1;
};

struct PretrainReport {
  std::size_t epochs = 0;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  double untrained_accuracy = 0.0;
  double accuracy = 0.0;          // held-out cell-color greedy accuracy
  double count_accuracy = 0.0;    // held-out counting accuracy (informational)
  double ablated_accuracy = 0.0;  // same, with the visual span masked out
  bool reached_gate = false;
};

/// Greedy-decodes each example's answer and checks the first key-kind
/// token against the reference. Only examples of `kind` are scored.
double visual_accuracy(const TargetParams& params, const ModelConfig& config,
                       const std::vector<InstructionExample>& examples, QuestionKind kind, bool ignore_visual,
                       std::size_t max_examples);

/// Trains the toy target with Adam until held-out cell-color accuracy reaches
/// the gate. Throws with a diagnostic if the epoch budget runs out first.
TargetParams pretrain_target(const ModelConfig& config, const std::vector<InstructionExample>& text_train,
                             const std::vector<InstructionExample>& visual_train,
                             const std::vector<InstructionExample>& visual_held_out, const PretrainConfig& pc,
                             PretrainReport* report = nullptr,
                             const std::function<void(const std::string&)>& log = {});

}  // namespace mmspec
