// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mmspec/attention.hpp"
#include "mmspec/kernels.hpp"
#include "mmspec/model.hpp"
#include "mmspec/rng.hpp"
#include "test_util.hpp"

using namespace mmspec;
using mmspec::testing::case_rng;
using mmspec::testing::random_matrix;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

BlockParams random_block(std::size_t dim, std::size_t hidden, RngState& rng) {
  BlockParams b = init_block(dim, hidden, 1, rng);
  // perturb the norms so they are not the identity
  for (double& v : b.ln1_gain.data()) v += 0.2 * rng.normal();
  for (double& v : b.ln2_bias.data()) v += 0.2 * rng.normal();
  return b;
}

}  // namespace

TEST(Softmax, UniformOnEqualLogits) {
  const auto p = softmax_with_temperature(std::vector<double>{0.0, 0.0}, 1.0);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
  const auto p = softmax_with_temperature(std::vector<double>{std::log(2.0), 0.0}, 1.0);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ZeroTemperatureIsArgmaxOneHot) {
  const auto p = softmax_with_temperature(std::vector<double>{1.0, 3.0}, 0.0);
  EXPECT_EQ(p, (std::vector<double>{0.0, 1.0}));
}

TEST(Softmax, ZeroTemperatureTieTakesLowestIndex) {
  const auto p = softmax_with_temperature(std::vector<double>{2.0, 5.0, 5.0}, 0.0);
  EXPECT_EQ(p, (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Softmax, EmptyThrows) {
  EXPECT_THROW(softmax_with_temperature(std::vector<double>{}, 1.0), Error);
}

TEST(Softmax, NegativeTemperatureThrows) {
  EXPECT_THROW(softmax_with_temperature(std::vector<double>{1.0}, -0.5), Error);
}

TEST(Softmax, PropertyNormalizedAndShiftInvariant) {
  for (std::size_t i = 0; i < 200; ++i) {
    RngState rng = case_rng(101, i);
    const std::size_t n = 1 + rng.below(20);
    auto logits = mmspec::testing::random_logits(n, rng, 5.0);
    const double temp = 0.1 + 2.0 * rng.uniform();
    const auto p = softmax_with_temperature(logits, temp);
    EXPECT_NEAR(sum(p), 1.0, 1e-12) << "case " << i;
    const double shift = 100.0 * rng.normal();
    for (double& x : logits) x += shift;
    const auto p2 = softmax_with_temperature(logits, temp);
    EXPECT_LE(mmspec::testing::max_abs_diff(p, p2), 1e-12) << "case " << i;
  }
}

TEST(SampleCategorical, DeterministicSupport) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngState rng(seed);
    EXPECT_EQ(sample_categorical(std::vector<double>{1.0, 0.0, 0.0}, rng), 0u);
    EXPECT_EQ(sample_categorical(std::vector<double>{0.0, 1.0}, rng), 1u);
  }
}

TEST(SampleCategorical, AdvancesOneDraw) {
  RngState rng(7);
  const auto before = rng.position();
  sample_categorical(std::vector<double>{0.2, 0.3, 0.5}, rng);
  EXPECT_EQ(rng.position(), before + 1);
}

TEST(SampleCategorical, FairCoinWithinThreeSigma) {
  RngState rng(12345);
  const std::vector<double> dist{0.5, 0.5};
  std::size_t zeros = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) zeros += sample_categorical(dist, rng) == 0 ? 1 : 0;
  const double f = static_cast<double>(zeros) / static_cast<double>(n);
  EXPECT_GE(f, 0.485);
  EXPECT_LE(f, 0.515);
}

TEST(SampleCategorical, RejectsBadDistributions) {
  RngState rng(1);
  EXPECT_THROW(sample_categorical(std::vector<double>{0.0, 0.0}, rng), Error);
  EXPECT_THROW(sample_categorical(std::vector<double>{0.5, 0.6}, rng), Error);
  EXPECT_THROW(sample_categorical(std::vector<double>{}, rng), Error);
}

TEST(RngState, SameSeedAndPositionReplay) {
  RngState a(99, 5), b(99, 5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  RngState c(99);
  for (int i = 0; i < 5; ++i) c.next_u64();
  EXPECT_EQ(c, RngState(99, 5));
}

TEST(RngState, DerivedStreamsDiffer) {
  const RngState root(3);
  RngState a = root.derive("a"), b = root.derive("b");
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_EQ(root.position(), 0u);
}

TEST(AttentionMask, Shapes) {
  const auto c = AttentionMask::causal(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(c.allowed(i, j), j <= i);
  }
  const auto b = AttentionMask::bidirectional(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_TRUE(b.allowed(i, j));
  }
  // prefix 2, tree rows: 0 (root) <- 1, 0 <- 2, 1 <- 3
  const std::vector<int> parents{-1, 0, 0, 1};
  const auto t = AttentionMask::tree(2, parents, 4);
  EXPECT_EQ(t.kind(), MaskKind::TreeStructured);
  const std::vector<std::vector<int>> expect{{1, 1, 1, 0, 0, 0}, {1, 1, 1, 1, 0, 0}, {1, 1, 1, 0, 1, 0}, {1, 1, 1, 1, 0, 1}};
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(t.allowed(q, k), expect[q][k] == 1) << q << "," << k;
  }
}

TEST(AttentionBlock, SingleTokenAnyMask) {
  RngState rng(5);
  const BlockParams b = random_block(8, 16, rng);
  const Matrix x = random_matrix(1, 8, rng);
  EXPECT_EQ(block_forward(b, x, AttentionMask::causal(1), 2).rows(), 1u);
  EXPECT_EQ(block_forward(b, x, AttentionMask::bidirectional(1, 1), 2).rows(), 1u);
  const std::vector<int> parents{-1};
  EXPECT_EQ(block_forward(b, x, AttentionMask::tree(0, parents, 1), 2).rows(), 1u);
}

TEST(AttentionBlock, DimensionMismatchThrows) {
  RngState rng(6);
  const BlockParams b = random_block(8, 16, rng);
  EXPECT_THROW(block_forward(b, random_matrix(3, 8, rng), AttentionMask::causal(2), 2), Error);
  EXPECT_THROW(block_forward(b, random_matrix(3, 6, rng), AttentionMask::causal(3), 2), Error);
}

TEST(AttentionBlock, PropertyCausalityBitExact) {
  for (std::size_t i = 0; i < 120; ++i) {
    RngState rng = case_rng(202, i);
    const std::size_t heads = 1 + rng.below(2);
    const std::size_t dim = heads * (2 + rng.below(4));
    const std::size_t n = 2 + rng.below(7);
    const BlockParams b = random_block(dim, 2 * dim, rng);
    Matrix x = random_matrix(n, dim, rng);
    const Matrix y = block_forward(b, x, AttentionMask::causal(n), heads);
    const std::size_t k = 1 + rng.below(n - 1);
    for (double& v : x.row(k)) v += 1.0 + rng.normal();
    const Matrix y2 = block_forward(b, x, AttentionMask::causal(n), heads);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < dim; ++c) ASSERT_EQ(y(r, c), y2(r, c)) << "case " << i << " row " << r;
    }
  }
}

TEST(AttentionBlock, BidirectionalSeesTheFuture) {
  RngState rng(7);
  const BlockParams b = random_block(8, 16, rng);
  Matrix x = random_matrix(4, 8, rng);
  const Matrix y = block_forward(b, x, AttentionMask::bidirectional(4, 4), 2);
  // a constant shift would vanish under layer norm
  for (double& v : x.row(3)) v += rng.normal();
  const Matrix y2 = block_forward(b, x, AttentionMask::bidirectional(4, 4), 2);
  double diff = 0.0;
  for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(y(0, c) - y2(0, c)));
  EXPECT_GT(diff, 1e-6);
}

TEST(AttentionBlock, CachedIncrementalMatchesFullForward) {
  for (std::size_t i = 0; i < 50; ++i) {
    RngState rng = case_rng(303, i);
    const std::size_t dim = 8, n = 2 + rng.below(8);
    const BlockParams b = random_block(dim, 16, rng);
    const Matrix x = random_matrix(n, dim, rng);
    const Matrix full = block_forward(b, x, AttentionMask::causal(n), 2);
    LayerKv cache;
    const std::size_t split = 1 + rng.below(n - 1);
    std::vector<std::size_t> head(split), tail(n - split);
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), split);
    Matrix a = block_forward(b, x.select_rows(head), AttentionMask::causal(split), 2, &cache);
    const Matrix c = block_forward(b, x.select_rows(tail), AttentionMask::causal(n - split, n), 2, &cache);
    a.append_rows(c);
    EXPECT_LE(mmspec::testing::max_abs_diff(a.data(), full.data()), 1e-10) << "case " << i;
  }
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  RngState rng(8);
  const Matrix x = random_matrix(3, 16, rng, 3.0);
  const Matrix y = layer_norm(x, Matrix(1, 16, 1.0), Matrix(1, 16, 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v / 16.0;
    for (double v : y.row(r)) var += (v - mean) * (v - mean) / 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Matrix, NonFiniteDetected) {
  Matrix m(1, 2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(require_finite(m, "test"), Error);
}
