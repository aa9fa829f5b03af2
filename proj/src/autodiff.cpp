// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/autodiff.hpp"

#include <cmath>
#include <memory>

#include "mmspec/kernels.hpp"

namespace mmspec::ad {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, nullptr});
  return Var{nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!nodes_.at(v.id).needs_grad) return;
  add_inplace(grad_buffer(v), g);
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : nullptr});
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var out) {
  Node& o = nodes_.at(out.id);
  if (o.value.rows() != 1 || o.value.cols() != 1) throw Error("backward: output must be 1x1");
  if (!o.needs_grad) return;
  grad_buffer(out)(0, 0) += 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.has_grad) continue;
    // The closure may push gradients into earlier nodes only, so a copy of
    // this node's gradient is stable for the duration of the call.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = mmspec::matmul(t.value(a), t.value(b));
  const Var in[] = {a, b};
  return t.push(std::move(out), in, [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
  });
}

Var add(Tape& t, Var a, Var b) {
  Matrix out = t.value(a);
  add_inplace(out, t.value(b));
  const Var in[] = {a, b};
  return t.push(std::move(out), in, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var add_bias(Tape& t, Var x, Var bias) {
  Matrix out = t.value(x);
  add_row_bias(out, t.value(bias));
  const Var in[] = {x, bias};
  return t.push(std::move(out), in, [x, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.needs_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      }
      tp.accumulate(bias, gb);
    }
  });
}

Var scale(Tape& t, Var x, double s) {
  Matrix out = t.value(x);
  for (double& v : out.data()) v *= s;
  const Var in[] = {x};
  return t.push(std::move(out), in, [x, s](Tape& tp, const Matrix& g) {
    Matrix gx = g;
    for (double& v : gx.data()) v *= s;
    tp.accumulate(x, gx);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  auto stats = std::make_shared<LayerNormStats>();
  Matrix out = mmspec::layer_norm(t.value(x), t.value(gain), t.value(bias), stats.get());
  const Var in[] = {x, gain, bias};
  return t.push(std::move(out), in, [x, gain, bias, stats](Tape& tp, const Matrix& g) {
    const Matrix& xhat = stats->normalized;
    const Matrix& gv = tp.value(gain);
    const std::size_t n = g.cols();
    if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
      Matrix gg(1, n), gb(1, n);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          gg(0, c) += g(r, c) * xhat(r, c);
          gb(0, c) += g(r, c);
        }
      }
      tp.accumulate(gain, gg);
      tp.accumulate(bias, gb);
    }
    if (tp.needs_grad(x)) {
      Matrix gx(g.rows(), n);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double d = g(r, c) * gv(0, c);
          sum_d += d;
          sum_dx += d * xhat(r, c);
        }
        const double inv = stats->inv_std[r];
        for (std::size_t c = 0; c < n; ++c) {
          const double d = g(r, c) * gv(0, c);
          gx(r, c) = inv * (d - sum_d / static_cast<double>(n) - xhat(r, c) * sum_dx / static_cast<double>(n));
        }
      }
      tp.accumulate(x, gx);
    }
  });
}

Var gelu(Tape& t, Var x) {
  Matrix out = mmspec::gelu(t.value(x));
  const Var in[] = {x};
  return t.push(std::move(out), in, [x](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(x);
    Matrix gx = g;
    auto d = gx.data();
    auto xs = xv.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= gelu_derivative(xs[i]);
    tp.accumulate(x, gx);
  });
}

Var attention(Tape& t, Var q, Var k, Var v, const AttentionMask& mask, std::size_t heads) {
  auto probs = std::make_shared<AttentionProbs>();
  Matrix out = multi_head_attention(t.value(q), t.value(k), t.value(v), mask, heads, probs.get());
  const Var in[] = {q, k, v};
  return t.push(std::move(out), in, [q, k, v, heads, probs](Tape& tp, const Matrix& g) {
    const Matrix& qv = tp.value(q);
    const Matrix& kv = tp.value(k);
    const Matrix& vv = tp.value(v);
    const std::size_t nq = qv.rows(), nk = kv.rows(), dim = qv.cols(), dh = dim / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix gq(nq, dim), gk(nk, dim), gv(nk, dim);
    std::vector<double> dp(nk);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& P = probs->per_head[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < nq; ++i) {
        const double* gi = g.row(i).data() + off;
        double dot = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const double pij = P(i, j);
          if (pij == 0.0) {
            dp[j] = 0.0;
            continue;
          }
          const double* vj = vv.row(j).data() + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
          dp[j] = s;
          dot += s * pij;
          double* gvj = gv.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) gvj[c] += pij * gi[c];
        }
        const double* qi = qv.row(i).data() + off;
        double* gqi = gq.row(i).data() + off;
        for (std::size_t j = 0; j < nk; ++j) {
          const double pij = P(i, j);
          if (pij == 0.0) continue;
          const double ds = pij * (dp[j] - dot) * sc;
          const double* kj = kv.row(j).data() + off;
          double* gkj = gk.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) {
            gqi[c] += ds * kj[c];
            gkj[c] += ds * qi[c];
          }
        }
      }
    }
    tp.accumulate(q, gq);
    tp.accumulate(k, gk);
    tp.accumulate(v, gv);
  });
}

Var gather_rows(Tape& t, Var table, std::vector<std::size_t> indices) {
  Matrix out = t.value(table).select_rows(indices);
  const Var in[] = {table};
  return t.push(std::move(out), in, [table, idx = std::move(indices)](Tape& tp, const Matrix& g) {
    Matrix& gt = tp.grad_buffer(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = gt.row(idx[r]);
      auto src = g.row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

Var select_rows(Tape& t, Var x, std::vector<std::size_t> indices) { return gather_rows(t, x, std::move(indices)); }

Var concat_cols(Tape& t, Var a, Var b) {
  Matrix out = mmspec::concat_cols(t.value(a), t.value(b));
  const Var in[] = {a, b};
  return t.push(std::move(out), in, [a, b](Tape& tp, const Matrix& g) {
    const std::size_t ca = tp.value(a).cols();
    const std::size_t cb = tp.value(b).cols();
    if (tp.needs_grad(a)) {
      Matrix ga(g.rows(), ca);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < ca; ++c) ga(r, c) = g(r, c);
      }
      tp.accumulate(a, ga);
    }
    if (tp.needs_grad(b)) {
      Matrix gb(g.rows(), cb);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < cb; ++c) gb(r, c) = g(r, ca + c);
      }
      tp.accumulate(b, gb);
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  Matrix out;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    offsets.push_back(out.rows());
    out.append_rows(t.value(p));
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [ins, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (!tp.needs_grad(ins[i])) continue;
      const Matrix& v = tp.value(ins[i]);
      Matrix gi(v.rows(), v.cols());
      for (std::size_t r = 0; r < v.rows(); ++r) {
        std::copy(g.row(offsets[i] + r).begin(), g.row(offsets[i] + r).end(), gi.row(r).begin());
      }
      tp.accumulate(ins[i], gi);
    }
  });
}

Var choose_rows(Tape& t, Var a, Var b, std::vector<bool> take_a) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols() || take_a.size() != av.rows()) {
    throw Error("choose_rows: shape mismatch");
  }
  Matrix out = bv;
  for (std::size_t r = 0; r < take_a.size(); ++r) {
    if (take_a[r]) std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
  }
  const Var in[] = {a, b};
  return t.push(std::move(out), in, [a, b, sel = std::move(take_a)](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
    for (std::size_t r = 0; r < sel.size(); ++r) {
      Matrix& dst = sel[r] ? ga : gb;
      std::copy(g.row(r).begin(), g.row(r).end(), dst.row(r).begin());
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

Var smooth_l1(Tape& t, Var pred, const Matrix& target) {
  const Matrix& p = t.value(pred);
  if (p.rows() != target.rows() || p.cols() != target.cols()) throw Error("smooth_l1: shape mismatch");
  if (p.rows() == 0) throw Error("smooth_l1: no rows");
  const double norm = 1.0 / static_cast<double>(p.size());
  double loss = 0.0;
  Matrix dl(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p.data()[i] - target.data()[i];
    const double ad = std::abs(d);
    if (ad < 1.0) {
      loss += 0.5 * d * d;
      dl.data()[i] = d * norm;
    } else {
      loss += ad - 0.5;
      dl.data()[i] = (d > 0 ? 1.0 : -1.0) * norm;
    }
  }
  const Var in[] = {pred};
  return t.push(Matrix(1, 1, loss * norm), in, [pred, dl = std::move(dl)](Tape& tp, const Matrix& g) {
    Matrix gp = dl;
    for (double& v : gp.data()) v *= g(0, 0);
    tp.accumulate(pred, gp);
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets) {
  const Matrix& l = t.value(logits);
  if (l.rows() != targets.size()) throw Error("cross_entropy: target count mismatch");
  if (l.rows() == 0) throw Error("cross_entropy: no rows");
  const double norm = 1.0 / static_cast<double>(l.rows());
  double loss = 0.0;
  Matrix dl(l.rows(), l.cols());
  for (std::size_t r = 0; r < l.rows(); ++r) {
    if (targets[r] >= l.cols()) throw Error("cross_entropy: target out of range");
    const auto row = l.row(r);
    const double lse = log_sum_exp(row);
    loss += lse - row[targets[r]];
    for (std::size_t c = 0; c < row.size(); ++c) dl(r, c) = std::exp(row[c] - lse) * norm;
    dl(r, targets[r]) -= norm;
  }
  const Var in[] = {logits};
  return t.push(Matrix(1, 1, loss * norm), in, [logits, dl = std::move(dl)](Tape& tp, const Matrix& g) {
    Matrix gl = dl;
    for (double& v : gl.data()) v *= g(0, 0);
    tp.accumulate(logits, gl);
  });
}

BlockVars bind_block(Tape& t, const BlockParams& p, bool trainable) {
  auto bind = [&](const Matrix& m) { return trainable ? t.leaf(m) : t.constant(m); };
  return BlockVars{bind(p.ln1_gain), bind(p.ln1_bias), bind(p.wq),       bind(p.wk),
                   bind(p.wv),       bind(p.wo),       bind(p.ln2_gain), bind(p.ln2_bias),
                   bind(p.w1),       bind(p.b1),       bind(p.w2),       bind(p.b2)};
}

Var block(Tape& t, const BlockVars& p, Var x, const AttentionMask& mask, std::size_t heads) {
  const Var a = layer_norm(t, x, p.ln1_gain, p.ln1_bias);
  const Var q = matmul(t, a, p.wq);
  const Var k = matmul(t, a, p.wk);
  const Var v = matmul(t, a, p.wv);
  const Var att = attention(t, q, k, v, mask, heads);
  const Var h = add(t, x, matmul(t, att, p.wo));
  const Var b = layer_norm(t, h, p.ln2_gain, p.ln2_bias);
  const Var m = gelu(t, add_bias(t, matmul(t, b, p.w1), p.b1));
  const Var m2 = add_bias(t, matmul(t, m, p.w2), p.b2);
  return add(t, h, m2);
}

BlockParams block_grads(const Tape& t, const BlockVars& v) {
  return BlockParams{t.grad(v.ln1_gain), t.grad(v.ln1_bias), t.grad(v.wq),       t.grad(v.wk),
                     t.grad(v.wv),       t.grad(v.wo),       t.grad(v.ln2_gain), t.grad(v.ln2_bias),
                     t.grad(v.w1),       t.grad(v.b1),       t.grad(v.w2),       t.grad(v.b2)};
}

}  // namespace mmspec::ad
