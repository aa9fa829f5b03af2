// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/target.hpp"

#include <algorithm>
#include <cstring>

#include "mmspec/kernels.hpp"

namespace mmspec {

std::vector<TextToken> make_tokens(std::span<const std::size_t> ids, TextRole role) {
  std::vector<TextToken> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back({id, role});
  return out;
}

void AssembledSequence::append_text(std::size_t id, const TargetParams& params) {
  if (id >= params.token_embedding.rows()) throw Error("token id " + std::to_string(id) + " out of vocabulary");
  if (embeddings.cols() == 0) embeddings = Matrix(0, params.token_embedding.cols());
  embeddings.append_rows(params.token_embedding.select_rows(std::span<const std::size_t>(&id, 1)));
  modality.push_back(Modality::Text);
  tokens.push_back(id);
}

void AssembledSequence::truncate(std::size_t n) {
  if (n > size()) throw Error("AssembledSequence::truncate beyond length");
  if (n < visual_end) throw Error("AssembledSequence::truncate would cut into the prompt");
  embeddings.resize_rows(n);
  modality.resize(n);
  tokens.resize(n);
}

std::vector<std::size_t> text_ids(const AssembledSequence& seq, std::size_t from) {
  std::vector<std::size_t> out;
  for (std::size_t i = from; i < seq.size(); ++i) {
    if (seq.modality[i] == Modality::Text) out.push_back(seq.tokens[i]);
  }
  return out;
}

Matrix embed_text(std::span<const TextToken> tokens, const TargetParams& params) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.id >= params.token_embedding.rows()) {
      throw Error("token id " + std::to_string(t.id) + " out of vocabulary");
    }
    ids.push_back(t.id);
  }
  if (ids.empty()) return Matrix(0, params.token_embedding.cols());
  return params.token_embedding.select_rows(ids);
}

Matrix embed_image(const ImagePatchGrid& grid, const TargetParams& params, const ModelConfig& config) {
  const std::size_t m = grid.patch_count();
  if (grid.patches.rows() != m) throw Error("embed_image: patch count does not equal side^2");
  if (m == 0) return Matrix(0, config.dim);
  if (grid.patches.cols() != config.patch_dim) throw Error("embed_image: patch feature width mismatch");
  if (m > config.max_patches()) throw Error("embed_image: grid larger than the configured vision encoder");
  Matrix x = matmul(grid.patches, params.patch_in_w);
  add_row_bias(x, params.patch_in_b);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = x.row(i);
    auto pe = params.vision_position.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] += pe[c];
  }
  const AttentionMask mask = AttentionMask::bidirectional(m, m);
  for (const auto& block : params.vision_blocks) x = block_forward(block, x, mask, config.heads);
  x = layer_norm(x, params.vision_ln_gain, params.vision_ln_bias);
  Matrix h = matmul(x, params.proj_w1);
  add_row_bias(h, params.proj_b1);
  h = gelu(h);
  Matrix out = matmul(h, params.proj_w2);
  add_row_bias(out, params.proj_b2);
  return out;
}

AssembledSequence assemble_sequence(std::span<const TextToken> system, const ImagePatchGrid* grid,
                                    std::span<const TextToken> instruction, const TargetParams& params,
                                    const ModelConfig& config) {
  AssembledSequence seq;
  seq.embeddings = Matrix(0, config.dim);
  seq.embeddings.append_rows(embed_text(system, params));
  for (const auto& t : system) {
    seq.modality.push_back(Modality::Text);
    seq.tokens.push_back(t.id);
  }
  seq.system_end = seq.visual_begin = seq.size();
  if (grid != nullptr && grid->patch_count() > 0) {
    seq.embeddings.append_rows(embed_image(*grid, params, config));
    for (std::size_t i = 0; i < grid->patch_count(); ++i) {
      seq.modality.push_back(Modality::Visual);
      seq.tokens.push_back(AssembledSequence::kNoToken);
    }
  }
  seq.visual_end = seq.size();
  seq.embeddings.append_rows(embed_text(instruction, params));
  for (const auto& t : instruction) {
    seq.modality.push_back(Modality::Text);
    seq.tokens.push_back(t.id);
  }
  return seq;
}

std::uint64_t row_fingerprint(std::span<const double> row, Modality modality) {
  return hash_bytes({reinterpret_cast<const unsigned char*>(row.data()), row.size() * sizeof(double)},
                    static_cast<std::uint64_t>(modality) + 1);
}

void TargetCache::clear() { *this = TargetCache{}; }

void TargetCache::truncate(std::size_t n) {
  if (n > length()) throw Error("TargetCache::truncate beyond cached length");
  for (auto& l : layers) l.truncate(n);
  hidden.resize_rows(n);
  logits.resize_rows(n);
  fingerprints.resize(n);
  modality.resize(n);
}

void TargetCache::compact(std::size_t prefix, std::span<const std::size_t> keep) {
  for (auto& l : layers) l.compact(prefix, keep);
  std::vector<std::size_t> rows(prefix);
  for (std::size_t i = 0; i < prefix; ++i) rows[i] = i;
  rows.insert(rows.end(), keep.begin(), keep.end());
  hidden = hidden.select_rows(rows);
  logits = logits.select_rows(rows);
  std::vector<std::uint64_t> fp;
  std::vector<Modality> mod;
  for (std::size_t r : rows) {
    fp.push_back(fingerprints.at(r));
    mod.push_back(modality.at(r));
  }
  fingerprints = std::move(fp);
  modality = std::move(mod);
}

TargetOutputs target_forward_rows(const Matrix& rows, std::span<const std::size_t> positions,
                                  std::span<const Modality> modality, const AttentionMask& mask,
                                  const TargetParams& params, const ModelConfig& config, TargetCache& cache,
                                  double temperature) {
  const std::size_t n = rows.rows();
  if (positions.size() != n || modality.size() != n) throw Error("target_forward_rows: row metadata mismatch");
  if (cache.layers.empty()) cache.layers.resize(params.blocks.size());
  if (cache.hidden.cols() == 0) {
    cache.hidden = Matrix(0, config.dim);
    cache.logits = Matrix(0, config.vocab);
  }
  Matrix x = rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (positions[i] >= config.max_positions) {
      throw Error("sequence exceeds max_positions (" + std::to_string(config.max_positions) + ")");
    }
    auto r = x.row(i);
    auto pe = params.position_embedding.row(positions[i]);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] += pe[c];
  }
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = block_forward(params.blocks[b], x, mask, config.heads, &cache.layers[b]);
  }
  TargetOutputs out;
  out.offset = cache.length();
  out.hidden = layer_norm(x, params.final_ln_gain, params.final_ln_bias);
  out.logits = matmul(out.hidden, params.lm_head);
  require_finite(out.logits, "target logits");
  out.distributions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.distributions.push_back(softmax_with_temperature(out.logits.row(i), temperature));
  cache.hidden.append_rows(out.hidden);
  cache.logits.append_rows(out.logits);
  for (std::size_t i = 0; i < n; ++i) {
    cache.fingerprints.push_back(row_fingerprint(rows.row(i), modality[i]));
    cache.modality.push_back(modality[i]);
  }
  return out;
}

TargetOutputs target_forward(const AssembledSequence& seq, const TargetParams& params, const ModelConfig& config,
                             TargetCache& cache, const TargetForwardOptions& options) {
  const std::size_t start = cache.length();
  if (start > seq.size()) throw Error("stale cache");
  for (std::size_t i = 0; i < start; ++i) {
    if (cache.fingerprints[i] != row_fingerprint(seq.embeddings.row(i), seq.modality[i])) throw Error("stale cache");
  }
  const std::size_t n = seq.size() - start;
  AttentionMask mask = AttentionMask::causal(n, seq.size());
  if (options.ignore_visual) {
    for (std::size_t q = 0; q < n; ++q) {
      if (seq.modality[start + q] != Modality::Text) continue;
      for (std::size_t k = seq.visual_begin; k < seq.visual_end; ++k) mask.disallow(q, k);
    }
  }
  std::vector<std::size_t> rows_idx(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) rows_idx[i] = positions[i] = start + i;
  const Matrix rows = seq.embeddings.select_rows(rows_idx);
  const std::span<const Modality> mod(seq.modality.data() + start, n);
  return target_forward_rows(rows, positions, mod, mask, params, config, cache, options.temperature);
}

std::vector<std::size_t> autoregressive_generate(const AssembledSequence& prompt, const TargetParams& params,
                                                 const ModelConfig& config, double temperature,
                                                 std::size_t max_tokens, Sampler& sampler,
                                                 const TargetForwardOptions& options) {
  AssembledSequence seq = prompt;
  TargetCache cache;
  TargetForwardOptions opts = options;
  opts.temperature = temperature;
  std::vector<std::size_t> out;
  auto step = target_forward(seq, params, config, cache, opts);
  while (out.size() < max_tokens) {
    const std::size_t token = sampler.categorical(step.distributions.back());
    out.push_back(token);
    if (token == kEosToken || out.size() == max_tokens) break;
    seq.append_text(token, params);
    step = target_forward(seq, params, config, cache, opts);
  }
  return out;
}

}  // namespace mmspec
