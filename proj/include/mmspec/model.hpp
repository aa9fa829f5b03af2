// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmspec/attention.hpp"
#include "mmspec/matrix.hpp"
#include "mmspec/rng.hpp"

namespace mmspec {

inline constexpr std::size_t kEosToken = 0;

struct ModelConfig {
  std::size_t vocab = 64;  // id 0 is EOS
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t target_depth = 4;
  std::size_t vision_depth = 2;
  std::size_t patch_dim = 12;  // 8 color channels + one coordinate channel per cell
  std::size_t grid_side = 2;
  std::size_t mlp_hidden = 64;
  std::size_t max_positions = 64;
  std::uint64_t seed = 0;

  std::size_t max_patches() const { return grid_side * grid_side; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// The multimodal target: token table, vision encoder + projector, causal
/// decoder, final norm and the LM head the draft shares.
struct TargetParams {
  Matrix token_embedding;     // vocab x dim
  Matrix position_embedding;  // max_positions x dim
  Matrix patch_in_w, patch_in_b;
  Matrix vision_position;     // max_patches x dim
  std::vector<BlockParams> vision_blocks;
  Matrix vision_ln_gain, vision_ln_bias;
  Matrix proj_w1, proj_b1, proj_w2, proj_b2;
  std::vector<BlockParams> blocks;
  Matrix final_ln_gain, final_ln_bias;
  Matrix lm_head;  // dim x vocab

  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }

  std::size_t parameter_count() const;
  bool operator==(const TargetParams& o) const;

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f(std::string("token_embedding"), p.token_embedding);
    f(std::string("position_embedding"), p.position_embedding);
    f(std::string("patch_in_w"), p.patch_in_w);
    f(std::string("patch_in_b"), p.patch_in_b);
    f(std::string("vision_position"), p.vision_position);
    for (std::size_t i = 0; i < p.vision_blocks.size(); ++i) {
      p.vision_blocks[i].for_each([&](const char* n, auto& m) { f("vision_blocks." + std::to_string(i) + "." + n, m); });
    }
    f(std::string("vision_ln_gain"), p.vision_ln_gain);
    f(std::string("vision_ln_bias"), p.vision_ln_bias);
    f(std::string("proj_w1"), p.proj_w1);
    f(std::string("proj_b1"), p.proj_b1);
    f(std::string("proj_w2"), p.proj_w2);
    f(std::string("proj_b2"), p.proj_b2);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      p.blocks[i].for_each([&](const char* n, auto& m) { f("blocks." + std::to_string(i) + "." + n, m); });
    }
    f(std::string("final_ln_gain"), p.final_ln_gain);
    f(std::string("final_ln_bias"), p.final_ln_bias);
    f(std::string("lm_head"), p.lm_head);
  }
};

/// How draft inputs are formed at visual positions.
enum class FusionMode : std::uint32_t {
  Decoupled = 0,       // text: f_down(concat(h_i, e_{i+1})); visual: e_i unchanged
  BaselineConcat = 1,  // every position through the concat path
};

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

/// Trainable part of the feature-level draft: fusion map and one block.
/// Token table and LM head are borrowed, frozen, from the target.
struct DraftParams {
  FusionMode mode = FusionMode::Decoupled;
  Matrix fuse_w;  // 2*dim x dim
  Matrix fuse_b;  // 1 x dim
  BlockParams block;

  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }

  std::size_t parameter_count() const;
  bool operator==(const DraftParams& o) const;

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f(std::string("fuse_w"), p.fuse_w);
    f(std::string("fuse_b"), p.fuse_b);
    p.block.for_each([&](const char* n, auto& m) { f(std::string("block.") + n, m); });
  }
};

BlockParams init_block(std::size_t dim, std::size_t hidden, std::size_t depth_scale, RngState& rng);
TargetParams init_target(const ModelConfig& config, RngState rng);
DraftParams init_draft(const ModelConfig& config, FusionMode mode, RngState rng);

/// Everything a weight file can hold.
struct WeightFile {
  ModelConfig config;
  std::optional<TargetParams> target;
  std::optional<DraftParams> draft;
};

// Layout (all integers little-endian):
//   magic "MMSPECW1" | 10 x u64 header: vocab dim heads target_depth
//   vision_depth patch_dim grid_side mlp_hidden max_positions seed
//   then zero or more sections: 4-byte tag ("TRGT" | "DRFT"), u64 value
//   count, [DRFT only: u32 fusion mode], values as raw f64 in for_each order.
void save_weights(const std::filesystem::path& path, const WeightFile& file);
/// When `expected` is given, the header must match it exactly.
WeightFile load_weights(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

/// Stable 64-bit digest of all parameter values (used to key teacher caches).
std::uint64_t fingerprint(const TargetParams& p);
std::uint64_t fingerprint(const DraftParams& p);

}  // namespace mmspec
