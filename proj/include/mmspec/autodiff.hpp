// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mmspec/attention.hpp"
#include "mmspec/matrix.hpp"

// Reverse-mode differentiation over whole matrices. Every op reuses the
// inference kernels for its forward value, so a recorded forward pass is
// numerically identical to the cached inference path.
namespace mmspec::ad {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  /// A value that never receives a gradient.
  Var constant(Matrix value);
  /// A value whose gradient is wanted (parameters).
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Zero-shaped gradient if nothing flowed into v.
  Matrix grad(Var v) const;
  /// Accumulates g into v's gradient (used by op backward functions).
  void accumulate(Var v, const Matrix& g);
  Matrix& grad_buffer(Var v);

  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(Var scalar_output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var add_bias(Tape& t, Var x, Var bias);
Var scale(Tape& t, Var x, double s);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
Var gelu(Tape& t, Var x);
Var attention(Tape& t, Var q, Var k, Var v, const AttentionMask& mask, std::size_t heads);
Var gather_rows(Tape& t, Var table, std::vector<std::size_t> indices);
Var select_rows(Tape& t, Var x, std::vector<std::size_t> indices);
Var concat_cols(Tape& t, Var a, Var b);
Var concat_rows(Tape& t, std::span<const Var> parts);
/// Row r comes from `a` when take_a[r], else from `b`.
Var choose_rows(Tape& t, Var a, Var b, std::vector<bool> take_a);

/// Mean over rows of the per-row mean smooth-L1 (beta = 1) distance to target. 1x1.
Var smooth_l1(Tape& t, Var pred, const Matrix& target);
/// Mean over rows of -log softmax(logits)[target]. 1x1.
Var cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets);

/// Inference block replayed on the tape.
struct BlockVars {
  Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
};
BlockVars bind_block(Tape& t, const BlockParams& p, bool trainable);
Var block(Tape& t, const BlockVars& p, Var x, const AttentionMask& mask, std::size_t heads);
/// Collects gradients of a bound block into a BlockParams-shaped holder.
BlockParams block_grads(const Tape& t, const BlockVars& v);

}  // namespace mmspec::ad
