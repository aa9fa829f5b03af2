// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmspec/matrix.hpp"

namespace mmspec {

enum class MaskKind { Causal, Bidirectional, TreeStructured };

/// Boolean query x key visibility matrix. Queries are always the trailing
/// positions of the key range (keys = cached prefix + the new rows).
class AttentionMask {
 public:
  AttentionMask() = default;

  /// Query i sits at key position (keys - queries + i) and sees keys j <= that.
  static AttentionMask causal(std::size_t queries, std::size_t keys);
  static AttentionMask causal(std::size_t n) { return causal(n, n); }
  static AttentionMask bidirectional(std::size_t queries, std::size_t keys);
  /// `parents` lists every tree row appended after a shared prefix of length
  /// `prefix` (parent index within the tree rows, or -1 when the row hangs off
  /// the prefix directly). The mask covers the last `queries` tree rows; each
  /// sees the whole prefix plus its ancestors-or-self among the tree rows.
  static AttentionMask tree(std::size_t prefix, std::span<const int> parents, std::size_t queries);

  MaskKind kind() const { return kind_; }
  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool allowed(std::size_t q, std::size_t k) const { return allowed_[q * keys_ + k] != 0; }
  void disallow(std::size_t q, std::size_t k) { allowed_[q * keys_ + k] = 0; }

 private:
  AttentionMask(MaskKind kind, std::size_t queries, std::size_t keys)
      : kind_(kind), queries_(queries), keys_(keys), allowed_(queries * keys, 0) {}

  MaskKind kind_ = MaskKind::Causal;
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(x)) with GELU.
struct BlockParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;

  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }

  std::size_t dim() const { return wq.rows(); }

 private:
  template <class Self, class F>
  static void visit(Self& b, F& f) {
    f("ln1_gain", b.ln1_gain);
    f("ln1_bias", b.ln1_bias);
    f("wq", b.wq);
    f("wk", b.wk);
    f("wv", b.wv);
    f("wo", b.wo);
    f("ln2_gain", b.ln2_gain);
    f("ln2_bias", b.ln2_bias);
    f("w1", b.w1);
    f("b1", b.b1);
    f("w2", b.w2);
    f("b2", b.b2);
  }
};

/// Cached keys and values of one block, one row per position.
struct LayerKv {
  Matrix keys;
  Matrix values;

  std::size_t length() const { return keys.rows(); }
  void truncate(std::size_t n);
  /// Keeps rows [0, prefix) plus the listed rows (absolute indices), in order.
  void compact(std::size_t prefix, std::span<const std::size_t> keep);
};

/// Per-head attention weights, query x key (zero where masked).
struct AttentionProbs {
  std::vector<Matrix> per_head;
};

/// Multi-head scaled dot-product attention, scores scaled by 1/sqrt(d_head).
Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionMask& mask,
                            std::size_t heads, AttentionProbs* probs = nullptr);

/// Inference forward of one block. With a cache, the new keys/values are
/// appended and attention runs over the whole cache; the mask must then be
/// sized queries x (cached + new).
Matrix block_forward(const BlockParams& params, const Matrix& x, const AttentionMask& mask, std::size_t heads,
                     LayerKv* cache = nullptr);

}  // namespace mmspec
