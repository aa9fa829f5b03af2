// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "mmspec/matrix.hpp"

namespace mmspec {

inline constexpr double kLayerNormEps = 1e-5;

// Dense products. Summation order is fixed (row-major, k ascending) so that
// results are reproducible bit-for-bit.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

void add_inplace(Matrix& dst, const Matrix& src);
/// Adds a 1xC bias row to every row of x.
void add_row_bias(Matrix& x, const Matrix& bias);
Matrix concat_cols(const Matrix& a, const Matrix& b);

/// Per-row normalization statistics kept for the backward pass.
struct LayerNormStats {
  Matrix normalized;                // x_hat
  std::vector<double> inv_std;      // one per row
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormStats* stats = nullptr,
                  double eps = kLayerNormEps);

double gelu(double x);
double gelu_derivative(double x);
Matrix gelu(const Matrix& x);

/// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// Softmax of logits / temperature. Temperature 0 yields a one-hot on the argmax.
std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature);

/// log(sum(exp(v))), numerically stabilized.
double log_sum_exp(std::span<const double> values);

}  // namespace mmspec
