// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mmspec/lossless.hpp"
#include "test_util.hpp"

using namespace mmspec;

TEST(EnumerationSampler, WeightsSumToOne) {
  const std::vector<double> d{0.2, 0.0, 0.5, 0.3};
  EnumerationSampler s;
  double total = 0.0;
  std::size_t paths = 0;
  do {
    const std::size_t a = s.categorical(d);
    EXPECT_NE(a, 1u);  // zero-mass outcomes are never visited
    if (a == 2) s.bernoulli(0.25);
    total += s.weight();
    ++paths;
  } while (s.advance());
  EXPECT_EQ(paths, 4u);
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(EnumerationSampler, FlagsOutOfRangeProbability) {
  EnumerationSampler s;
  s.bernoulli(1.5);
  EXPECT_TRUE(s.probability_violation());
}

TEST(TotalVariation, Basics) {
  const OutputDistribution a{{{0}, 0.5}, {{1}, 0.5}}, b{{{0}, 1.0}};
  EXPECT_DOUBLE_EQ(total_variation(a, a), 0.0);
  EXPECT_DOUBLE_EQ(total_variation(a, b), 0.5);
  EXPECT_DOUBLE_EQ(total_variation(b, a), 0.5);
}

TEST(Lossless, GridShape) {
  const auto grid = default_lossless_grid(1, 3);
  EXPECT_GE(grid.size(), 50u);
  for (const auto& g : grid) {
    EXPECT_LE(g.vocab, 6u);
    EXPECT_LE(g.max_len, 3u);
    EXPECT_TRUE(g.temperature == 0.7 || g.temperature == 1.0);
  }
}

TEST(Lossless, SampleOfGridCertifies) {
  const auto grid = default_lossless_grid(7, 1);
  for (std::size_t i = 0; i < grid.size(); i += 3) {
    const auto r = certify_instance(grid[i], VerifyRule::Standard);
    EXPECT_TRUE(r.passed) << i << " tv " << r.tv;
    EXPECT_LE(r.tv, 1e-9);
    EXPECT_GT(r.outcomes, 1u);
  }
}

TEST(Lossless, AutoregressiveLawIsNormalized) {
  const TinyModels m = make_tiny_models(3, 4, FusionMode::Decoupled);
  const auto law = autoregressive_distribution(m.prompt, m.target, m.config, 1.0, 3);
  double total = 0.0;
  for (const auto& [seq, w] : law) {
    EXPECT_LE(seq.size(), 3u);
    total += w;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Lossless, CorruptedRulesFail) {
  const auto grid = default_lossless_grid(7, 1);
  const auto uncapped = certify_grid(grid, VerifyRule::UncappedRatio);
  EXPECT_FALSE(uncapped.passed);
  const auto resample = certify_grid(grid, VerifyRule::ResampleFromTarget);
  EXPECT_FALSE(resample.passed);
  EXPECT_GT(resample.max_tv, 1e-3);
}

// Monte Carlo cross-check of the first generated token at temperature 1.
TEST(Lossless, SampledFirstTokenMatchesTarget) {
  const TinyModels m = make_tiny_models(11, 4, FusionMode::Decoupled);
  const auto law = autoregressive_distribution(m.prompt, m.target, m.config, 1.0, 1);
  std::vector<double> p(4, 0.0);
  for (const auto& [seq, w] : law) p[seq.at(0)] += w;

  GenerationConfig g;
  g.mode = DraftMode::Chain;
  g.gamma = 2;
  g.temperature = 1.0;
  g.max_tokens = 1;
  const std::size_t runs = 100000;
  std::vector<double> counts(4, 0.0);
  RngState root(5);
  DecodeSession base(m.target, m.draft, m.config, m.prompt);
  for (std::size_t i = 0; i < runs; ++i) {
    DecodeSession s = base;
    RngState rng = root.derive(i);
    RngSampler sampler(rng);
    counts[speculative_generate(s, g, sampler).tokens.at(0)] += 1.0;
  }
  for (std::size_t x = 0; x < 4; ++x) {
    const double sd = std::sqrt(p[x] * (1.0 - p[x]) / runs);
    EXPECT_NEAR(counts[x] / runs, p[x], 3.0 * sd + 1e-12) << "token " << x;
  }
}
