// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmspec/attention.hpp"
#include "mmspec/matrix.hpp"
#include "mmspec/model.hpp"
#include "mmspec/rng.hpp"

namespace mmspec {

enum class Modality : std::uint8_t { Text = 0, Visual = 1 };
enum class TextRole : std::uint8_t { System, Instruction, Output };

struct TextToken {
  std::size_t id = 0;
  TextRole role = TextRole::Instruction;
};

std::vector<TextToken> make_tokens(std::span<const std::size_t> ids, TextRole role);

/// side x side grid of raw patch feature vectors (row-major cell order).
struct ImagePatchGrid {
  std::size_t side = 0;
  Matrix patches;  // side^2 x patch_dim

  std::size_t patch_count() const { return side * side; }
};

/// Interleaved multimodal input: [system text | visual span | instruction text | outputs...].
/// Embeddings carry no positional information; positions are added by the decoder.
struct AssembledSequence {
  Matrix embeddings;
  std::vector<Modality> modality;
  /// Vocabulary id per text position; kNoToken at visual positions.
  std::vector<std::size_t> tokens;
  std::size_t system_end = 0;    // number of system tokens == visual_begin
  std::size_t visual_begin = 0;  // visual span is [visual_begin, visual_end)
  std::size_t visual_end = 0;

  static constexpr std::size_t kNoToken = static_cast<std::size_t>(-1);

  std::size_t size() const { return modality.size(); }
  std::size_t visual_count() const { return visual_end - visual_begin; }
  void append_text(std::size_t id, const TargetParams& params);
  /// Drops positions beyond n (never into the prompt's visual span bookkeeping).
  void truncate(std::size_t n);
};

std::vector<std::size_t> text_ids(const AssembledSequence& seq, std::size_t from = 0);

Matrix embed_text(std::span<const TextToken> tokens, const TargetParams& params);
/// Bidirectional vision encoder followed by the two-layer projector.
Matrix embed_image(const ImagePatchGrid& grid, const TargetParams& params, const ModelConfig& config);
AssembledSequence assemble_sequence(std::span<const TextToken> system, const ImagePatchGrid* grid,
                                    std::span<const TextToken> instruction, const TargetParams& params,
                                    const ModelConfig& config);

/// Per-position fingerprint of an input row, used to detect stale caches.
std::uint64_t row_fingerprint(std::span<const double> row, Modality modality);

/// Incremental decoding state of the target (keys/values per block plus the
/// final hidden states and logits of every processed position).
struct TargetCache {
  std::vector<LayerKv> layers;
  Matrix hidden;
  Matrix logits;
  std::vector<std::uint64_t> fingerprints;
  std::vector<Modality> modality;

  std::size_t length() const { return fingerprints.size(); }
  void clear();
  void truncate(std::size_t n);
  /// Keeps [0, prefix) and the listed rows (absolute, ascending) in that order.
  void compact(std::size_t prefix, std::span<const std::size_t> keep);
};

struct TargetOutputs {
  std::size_t offset = 0;  // first position covered
  Matrix hidden;           // h_{x_i}
  Matrix logits;
  std::vector<std::vector<double>> distributions;  // p(x_{i+1} | x_{<=i}) at the requested temperature
};

struct TargetForwardOptions {
  double temperature = 1.0;
  /// Ablation: text positions may not attend to the visual span.
  bool ignore_visual = false;
};

/// Runs the decoder over positions [cache.length(), seq.size()) and extends the cache.
/// Throws "stale cache" if the cached prefix does not match seq.
TargetOutputs target_forward(const AssembledSequence& seq, const TargetParams& params, const ModelConfig& config,
                             TargetCache& cache, const TargetForwardOptions& options = {});

/// Lower-level entry used for tree verification: appends `rows` (pre-position
/// embeddings at the given absolute positions) under an explicit mask whose
/// key range is cache.length() + rows.
TargetOutputs target_forward_rows(const Matrix& rows, std::span<const std::size_t> positions,
                                  std::span<const Modality> modality, const AttentionMask& mask,
                                  const TargetParams& params, const ModelConfig& config, TargetCache& cache,
                                  double temperature);

/// Reference (non-speculative) decoding. Stops after EOS or max_tokens.
std::vector<std::size_t> autoregressive_generate(const AssembledSequence& prompt, const TargetParams& params,
                                                 const ModelConfig& config, double temperature,
                                                 std::size_t max_tokens, Sampler& sampler,
                                                 const TargetForwardOptions& options = {});

}  // namespace mmspec
