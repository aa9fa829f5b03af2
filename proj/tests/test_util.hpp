// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmspec/datagen.hpp"
#include "mmspec/kernels.hpp"
#include "mmspec/model.hpp"
#include "mmspec/rng.hpp"
#include "mmspec/target.hpp"
#include "mmspec/trainer.hpp"

// Seeded generators for property tests. Each case derives its own stream
// from (suite seed, case index) so failures are reproducible by index.
namespace mmspec::testing {

inline RngState case_rng(std::uint64_t suite, std::size_t index) { return RngState(suite).derive(index); }

inline Matrix random_matrix(std::size_t rows, std::size_t cols, RngState& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline std::vector<double> random_logits(std::size_t n, RngState& rng, double scale = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

/// Strictly positive distribution.
inline std::vector<double> random_distribution(std::size_t n, RngState& rng) {
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) {
    x = 0.05 + rng.uniform();
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Small random model shape, valid for everything the engine does.
inline ModelConfig small_config(RngState& rng) {
  ModelConfig c;
  c.vocab = 6 + rng.below(10);
  c.heads = 1 + rng.below(2);
  c.dim = c.heads * (2 + rng.below(4));
  c.target_depth = 1 + rng.below(2);
  c.vision_depth = 1;
  c.grid_side = 1 + rng.below(2);
  c.patch_dim = 3 + rng.below(4);
  c.mlp_hidden = 4 + rng.below(8);
  c.max_positions = 40;
  return c;
}

/// [system | optional grid | instruction] built from raw ids and random patches.
inline AssembledSequence random_prompt(const TargetParams& t, const ModelConfig& c, RngState& rng, bool with_image,
                                       std::size_t min_len = 2) {
  std::vector<std::size_t> sys(1 + rng.below(2)), ins(rng.below(3));
  for (auto& x : sys) x = 1 + rng.below(c.vocab - 1);
  for (auto& x : ins) x = 1 + rng.below(c.vocab - 1);
  const auto sys_t = make_tokens(sys, TextRole::System);
  auto ins_t = make_tokens(ins, TextRole::Instruction);
  ImagePatchGrid grid;
  if (with_image) {
    grid.side = c.grid_side;
    grid.patches = random_matrix(grid.patch_count(), c.patch_dim, rng);
  }
  while (sys_t.size() + ins_t.size() + (with_image ? grid.patch_count() : 0) < min_len) {
    ins_t.push_back({1 + static_cast<std::size_t>(rng.below(c.vocab - 1)), TextRole::Instruction});
  }
  return assemble_sequence(sys_t, with_image ? &grid : nullptr, ins_t, t, c);
}

/// Prompt plus a random answer, labelled by a frozen random target.
inline TrainExample random_train_example(const TargetParams& t, const ModelConfig& c, RngState& rng, bool with_image) {
  TrainExample te;
  te.seq = random_prompt(t, c, rng, with_image);
  const std::size_t answer = 2 + rng.below(3);  // at least one scored position
  for (std::size_t i = 0; i < answer; ++i) te.seq.append_text(1 + rng.below(c.vocab - 1), t);
  TargetCache cache;
  const auto out = target_forward(te.seq, t, c, cache);
  te.hidden = out.hidden;
  for (std::size_t i = 0; i < out.logits.rows(); ++i) te.teacher_tokens.push_back(argmax(out.logits.row(i)));
  te.loss_positions = loss_positions(te.seq);
  return te;
}

/// Worst relative error between tape gradients and central differences over
/// `entries` random coordinates of each draft parameter group.
inline double draft_gradient_error(const DraftParams& d, const TrainExample& ex, const TargetParams& t,
                                   const ModelConfig& c, double ce_weight, std::size_t entries, RngState& rng,
                                   std::size_t* groups_checked = nullptr) {
  const double h = 1e-5;
  const LossAndGrads lg = draft_loss_and_grads(d, ex, t, c, ce_weight);
  DraftParams probe = d;
  std::vector<Matrix*> groups;
  probe.for_each([&](const std::string&, Matrix& m) { groups.push_back(&m); });
  double worst = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Matrix& m = *groups[g];
    for (std::size_t trial = 0; trial < entries; ++trial) {
      const std::size_t idx = rng.below(m.size());
      const double orig = m.data()[idx];
      m.data()[idx] = orig + h;
      const double up = draft_loss_and_grads(probe, ex, t, c, ce_weight).loss;
      m.data()[idx] = orig - h;
      const double down = draft_loss_and_grads(probe, ex, t, c, ce_weight).loss;
      m.data()[idx] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = lg.grads[g].data()[idx];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
    }
  }
  if (groups_checked) *groups_checked = groups.size();
  return worst;
}

}  // namespace mmspec::testing
