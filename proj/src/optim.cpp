// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/optim.hpp"

#include <cmath>
#include <numbers>

namespace mmspec {

namespace {

void check_shapes(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw Error("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
      throw Error("optimizer: gradient shape " + shape_string(grads[i]) + " does not match parameter " +
                  shape_string(*params[i]));
    }
  }
}

std::vector<Matrix> zeros_like(const std::vector<Matrix*>& params) {
  std::vector<Matrix> out;
  for (const Matrix* p : params) out.emplace_back(p->rows(), p->cols());
  return out;
}

}  // namespace

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.data()) v *= s;
    }
  }
  return norm;
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double x = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

void SgdMomentum::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr) {
  check_shapes(params, grads);
  if (velocity_.empty()) velocity_ = zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = velocity_[i].data();
    auto g = grads[i].data();
    auto p = params[i]->data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr) {
  check_shapes(params, grads);
  if (m_.empty()) {
    m_ = zeros_like(params);
    v_ = zeros_like(params);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto g = grads[i].data();
    auto p = params[i]->data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

}  // namespace mmspec
