// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/attention.hpp"

#include <algorithm>
#include <cmath>

#include "mmspec/kernels.hpp"

namespace mmspec {

AttentionMask AttentionMask::causal(std::size_t queries, std::size_t keys) {
  if (queries > keys) throw Error("causal mask: more queries than keys");
  AttentionMask m(MaskKind::Causal, queries, keys);
  const std::size_t offset = keys - queries;
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t k = 0; k <= offset + q; ++k) m.allowed_[q * keys + k] = 1;
  }
  return m;
}

AttentionMask AttentionMask::bidirectional(std::size_t queries, std::size_t keys) {
  AttentionMask m(MaskKind::Bidirectional, queries, keys);
  std::fill(m.allowed_.begin(), m.allowed_.end(), std::uint8_t{1});
  return m;
}

AttentionMask AttentionMask::tree(std::size_t prefix, std::span<const int> parents, std::size_t queries) {
  const std::size_t rows = parents.size();
  if (queries > rows) throw Error("tree mask: more queries than tree rows");
  AttentionMask m(MaskKind::TreeStructured, queries, prefix + rows);
  const std::size_t first = rows - queries;
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t k = 0; k < prefix; ++k) m.allowed_[q * m.keys_ + k] = 1;
    int node = static_cast<int>(first + q);
    while (node >= 0) {
      if (static_cast<std::size_t>(node) >= rows || (parents[node] >= node)) {
        throw Error("tree mask: parent must precede child");
      }
      m.allowed_[q * m.keys_ + prefix + static_cast<std::size_t>(node)] = 1;
      node = parents[node];
    }
  }
  return m;
}

void LayerKv::truncate(std::size_t n) {
  if (n > length()) throw Error("LayerKv::truncate beyond cached length");
  keys.resize_rows(n);
  values.resize_rows(n);
}

void LayerKv::compact(std::size_t prefix, std::span<const std::size_t> keep) {
  std::vector<std::size_t> rows(prefix);
  for (std::size_t i = 0; i < prefix; ++i) rows[i] = i;
  rows.insert(rows.end(), keep.begin(), keep.end());
  keys = keys.select_rows(rows);
  values = values.select_rows(rows);
}

Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionMask& mask,
                            std::size_t heads, AttentionProbs* probs) {
  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t dim = q.cols();
  if (k.cols() != dim || v.cols() != dim || v.rows() != nk) throw Error("attention: q/k/v shape mismatch");
  if (mask.queries() != nq || mask.keys() != nk) {
    throw Error("attention: mask is " + std::to_string(mask.queries()) + "x" + std::to_string(mask.keys()) +
                " but inputs need " + std::to_string(nq) + "x" + std::to_string(nk));
  }
  if (heads == 0 || dim % heads != 0) throw Error("attention: dim not divisible by head count");
  const std::size_t dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out(nq, dim);
  if (probs) probs->per_head.assign(heads, Matrix(nq, nk));
  std::vector<double> scores(nk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < nq; ++i) {
      const double* qi = q.row(i).data() + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask.allowed(i, j)) continue;
        const double* kj = k.row(j).data() + off;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      if (mx == -INFINITY) continue;  // nothing visible: zero output
      double denom = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask.allowed(i, j)) continue;
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      double* o = out.row(i).data() + off;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask.allowed(i, j)) continue;
        const double w = scores[j] / denom;
        if (probs) probs->per_head[h](i, j) = w;
        const double* vj = v.row(j).data() + off;
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * vj[c];
      }
    }
  }
  return out;
}

Matrix block_forward(const BlockParams& p, const Matrix& x, const AttentionMask& mask, std::size_t heads,
                     LayerKv* cache) {
  if (x.cols() != p.dim()) throw Error("block_forward: input width " + shape_string(x) + " does not match block");
  const Matrix a = layer_norm(x, p.ln1_gain, p.ln1_bias);
  const Matrix q = matmul(a, p.wq);
  Matrix k = matmul(a, p.wk);
  Matrix v = matmul(a, p.wv);
  Matrix att;
  if (cache) {
    if (mask.queries() != x.rows() || mask.keys() != cache->length() + x.rows()) {
      throw Error("block_forward: mask does not cover cached + new positions");
    }
    if (cache->keys.cols() == 0) {
      cache->keys = Matrix(0, k.cols());
      cache->values = Matrix(0, v.cols());
    }
    cache->keys.append_rows(k);
    cache->values.append_rows(v);
    att = multi_head_attention(q, cache->keys, cache->values, mask, heads);
  } else {
    att = multi_head_attention(q, k, v, mask, heads);
  }
  Matrix h = x;
  add_inplace(h, matmul(att, p.wo));
  const Matrix b = layer_norm(h, p.ln2_gain, p.ln2_bias);
  Matrix m = matmul(b, p.w1);
  add_row_bias(m, p.b1);
  m = gelu(m);
  Matrix m2 = matmul(m, p.w2);
  add_row_bias(m2, p.b2);
  add_inplace(h, m2);
  return h;
}

}  // namespace mmspec
