// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmspec/attention.hpp"
#include "mmspec/model.hpp"
#include "mmspec/rng.hpp"
#include "mmspec/target.hpp"

namespace mmspec {

/// Per-position draft inputs f_{x_i}.
struct DraftInput {
  std::size_t offset = 0;  // absolute position of the first row
  Matrix fused;
  std::vector<Modality> modality;
};

/// f for a single position: the identity branch for visual positions in
/// Decoupled mode, otherwise f_down(concat(feature, next_embedding)).
std::vector<double> fuse_position(std::span<const double> feature, std::span<const double> own_embedding,
                                  std::span<const double> next_embedding, Modality modality, FusionMode mode,
                                  const DraftParams& draft);

/// Builds f for positions [first, hidden.rows()). Position i pairs hidden row i
/// with the next assembled embedding e_{i+1}; the last row pairs with the most
/// recently committed token. Throws when seq has no successor for the last row.
DraftInput build_draft_inputs(const AssembledSequence& seq, const Matrix& target_hidden, const DraftParams& draft,
                              FusionMode mode, std::size_t first = 0);
inline DraftInput build_draft_inputs(const AssembledSequence& seq, const Matrix& target_hidden,
                                     const DraftParams& draft, std::size_t first = 0) {
  return build_draft_inputs(seq, target_hidden, draft, draft.mode, first);
}

struct DraftCache {
  LayerKv kv;
  Matrix features;  // predicted h_{x_{i+1}} per processed position
  Matrix logits;
  std::vector<std::uint64_t> fingerprints;

  std::size_t length() const { return fingerprints.size(); }
  void clear() { *this = DraftCache{}; }
  void truncate(std::size_t n);
};

struct DraftOutputs {
  Matrix features;
  Matrix logits;
  std::vector<std::vector<double>> distributions;  // q, at the requested temperature
};

/// Runs the draft block over inputs rows not yet cached (positions
/// [cache.length(), offset + rows)). Rows before cache.length() must match the
/// cache or "stale cache" is thrown.
DraftOutputs draft_forward(const DraftInput& inputs, const DraftParams& draft, const TargetParams& target,
                           const ModelConfig& config, DraftCache& cache, double temperature = 1.0);

/// Appends explicit rows under an explicit mask (tree passes).
DraftOutputs draft_forward_rows(const Matrix& fused, const AttentionMask& mask, const DraftParams& draft,
                                const TargetParams& target, const ModelConfig& config, DraftCache& cache,
                                double temperature);

/// Applies the shared, frozen LM head to a feature row.
std::vector<double> lm_head_logits(std::span<const double> feature, const TargetParams& target);

struct DraftNode {
  std::size_t token = 0;
  int parent = -1;
  std::size_t depth = 0;
  double q = 1.0;                      // probability of `token` under the parent's child distribution
  std::vector<double> child_dist;      // q the children were drawn from (empty for unexpanded leaves)
  std::vector<std::size_t> draws;      // child node indices in draw order (repeats for duplicate draws)
  std::vector<std::size_t> children;   // distinct children in creation order
};

/// Node 0 is the root (last committed token). Nodes are stored breadth-first.
struct DraftTree {
  std::vector<DraftNode> nodes;
  std::vector<std::size_t> plan;
  std::size_t forward_passes = 0;

  std::size_t candidate_count() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  std::size_t depth() const;
};

struct DraftChain {
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> q;  // q[s] is the distribution tokens[s] was drawn from
  std::size_t forward_passes = 0;
};

class DecodeSession;

DraftChain draft_chain(DecodeSession& session, std::size_t gamma, double temperature, Sampler& sampler);
DraftTree draft_tree(DecodeSession& session, std::span<const std::size_t> plan, double temperature, Sampler& sampler);

}  // namespace mmspec
