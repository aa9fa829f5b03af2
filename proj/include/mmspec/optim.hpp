// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "mmspec/matrix.hpp"

namespace mmspec {

/// Collects pointers to every parameter matrix of a params struct, in for_each order.
template <class P>
std::vector<Matrix*> parameter_list(P& params) {
  std::vector<Matrix*> out;
  params.for_each([&](const auto&, Matrix& m) { out.push_back(&m); });
  return out;
}

/// Scales grads so their global L2 norm is at most max_norm; returns the norm before scaling.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

/// lr at `step` of `total`: base * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(double base, std::size_t step, std::size_t total);

class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr);

 private:
  double momentum_;
  std::vector<Matrix> velocity_;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace mmspec
