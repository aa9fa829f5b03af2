// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "mmspec/kernels.hpp"
#include "mmspec/model.hpp"
#include "mmspec/target.hpp"
#include "test_util.hpp"

using namespace mmspec;
using mmspec::testing::case_rng;
using mmspec::testing::max_abs_diff;
using mmspec::testing::random_matrix;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab = 8;
  c.dim = 8;
  c.heads = 2;
  c.target_depth = 2;
  c.vision_depth = 1;
  c.patch_dim = 4;
  c.grid_side = 2;
  c.mlp_hidden = 16;
  c.max_positions = 32;
  return c;
}

ImagePatchGrid random_grid(std::size_t side, std::size_t patch_dim, RngState& rng) {
  ImagePatchGrid g;
  g.side = side;
  g.patches = random_matrix(side * side, patch_dim, rng);
  return g;
}

}  // namespace

TEST(EmbedText, EmptyAndLookup) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(1));
  EXPECT_EQ(embed_text({}, t).rows(), 0u);
  const std::vector<std::size_t> same{3, 3};
  const Matrix e = embed_text(make_tokens(same, TextRole::Instruction), t);
  ASSERT_EQ(e.rows(), 2u);
  EXPECT_EQ(std::vector<double>(e.row(0).begin(), e.row(0).end()), std::vector<double>(e.row(1).begin(), e.row(1).end()));
}

TEST(EmbedText, DistinctIdsDistinctRows) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(2));
  std::vector<std::size_t> ids(8);
  std::iota(ids.begin(), ids.end(), 0);
  const Matrix e = embed_text(make_tokens(ids, TextRole::Instruction), t);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = i + 1; j < 8; ++j) EXPECT_GT(max_abs_diff(e.row(i), e.row(j)), 1e-6);
  }
}

TEST(EmbedText, OutOfRangeThrows) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(3));
  const std::vector<std::size_t> bad{8};
  EXPECT_THROW(embed_text(make_tokens(bad, TextRole::Instruction), t), Error);
}

TEST(EmbedImage, SinglePatchAndDeterminism) {
  ModelConfig c = tiny();
  c.grid_side = 1;
  const TargetParams t = init_target(c, RngState(4));
  RngState rng(5);
  const ImagePatchGrid g = random_grid(1, c.patch_dim, rng);
  const Matrix a = embed_image(g, t, c), b = embed_image(g, t, c);
  EXPECT_EQ(a.rows(), 1u);
  EXPECT_EQ(a.cols(), c.dim);
  EXPECT_EQ(a, b);
}

TEST(EmbedImage, BidirectionalDependence) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(6));
  RngState rng(7);
  ImagePatchGrid g = random_grid(2, c.patch_dim, rng);
  const Matrix a = embed_image(g, t, c);
  // swap patches 0 and 1, look at patch 3
  for (std::size_t k = 0; k < c.patch_dim; ++k) std::swap(g.patches(0, k), g.patches(1, k));
  const Matrix b = embed_image(g, t, c);
  EXPECT_GT(max_abs_diff(a.row(3), b.row(3)), 1e-8);
}

TEST(EmbedImage, MismatchThrows) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(8));
  RngState rng(9);
  ImagePatchGrid g = random_grid(2, c.patch_dim + 1, rng);
  EXPECT_THROW(embed_image(g, t, c), Error);
  g = random_grid(2, c.patch_dim, rng);
  g.side = 3;
  EXPECT_THROW(embed_image(g, t, c), Error);
}

TEST(AssembleSequence, LayoutExample) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(10));
  RngState rng(11);
  const ImagePatchGrid g = random_grid(2, c.patch_dim, rng);
  const std::vector<std::size_t> sys{1, 2}, ins{3, 4, 5};
  const auto seq = assemble_sequence(make_tokens(sys, TextRole::System), &g, make_tokens(ins, TextRole::Instruction), t, c);
  EXPECT_EQ(seq.size(), 9u);
  EXPECT_EQ(seq.system_end, 2u);
  EXPECT_EQ(seq.visual_begin, 2u);
  EXPECT_EQ(seq.visual_end, 6u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(seq.modality[i] == Modality::Visual, i >= 2 && i <= 5) << i;
  }
  const Matrix img = embed_image(g, t, c);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(max_abs_diff(seq.embeddings.row(2 + i), img.row(i)), 0.0);
}

TEST(AssembleSequence, EmptyInstructionAndNoImage) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(12));
  RngState rng(13);
  const ImagePatchGrid g = random_grid(2, c.patch_dim, rng);
  const std::vector<std::size_t> sys{1};
  auto seq = assemble_sequence(make_tokens(sys, TextRole::System), &g, {}, t, c);
  EXPECT_EQ(seq.visual_end, seq.size());
  const std::vector<std::size_t> ins{2, 3};
  seq = assemble_sequence(make_tokens(sys, TextRole::System), nullptr, make_tokens(ins, TextRole::Instruction), t, c);
  EXPECT_EQ(seq.visual_count(), 0u);
  EXPECT_EQ(seq.size(), 3u);
  for (auto m : seq.modality) EXPECT_EQ(m, Modality::Text);
}

TEST(TargetForward, DistributionsNormalized) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(14));
  RngState rng(15);
  const auto seq = mmspec::testing::random_prompt(t, c, rng, true);
  TargetCache cache;
  const auto out = target_forward(seq, t, c, cache);
  for (const auto& d : out.distributions) EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-9);
}

TEST(TargetForward, PropertyPrefillIncrementalEquivalence) {
  for (std::size_t i = 0; i < 100; ++i) {
    RngState rng = case_rng(404, i);
    const ModelConfig c = mmspec::testing::small_config(rng);
    const TargetParams t = init_target(c, rng.derive("w"));
    AssembledSequence seq = mmspec::testing::random_prompt(t, c, rng, rng.below(2) == 1);
    TargetCache inc;
    target_forward(seq, t, c, inc);
    const std::size_t extra = 1 + rng.below(4);
    for (std::size_t k = 0; k < extra; ++k) {
      seq.append_text(rng.below(c.vocab), t);
      target_forward(seq, t, c, inc);
    }
    TargetCache full;
    const auto ref = target_forward(seq, t, c, full);
    ASSERT_LE(max_abs_diff(inc.hidden.data(), ref.hidden.data()), 1e-10) << "case " << i;
    ASSERT_LE(max_abs_diff(inc.logits.data(), ref.logits.data()), 1e-10) << "case " << i;
  }
}

TEST(TargetForward, AppendingLeavesEarlierStatesUnchanged) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(16));
  RngState rng(17);
  AssembledSequence seq = mmspec::testing::random_prompt(t, c, rng, true);
  TargetCache a;
  const auto before = target_forward(seq, t, c, a);
  seq.append_text(5, t);
  TargetCache b;
  const auto after = target_forward(seq, t, c, b);
  for (std::size_t r = 0; r < before.hidden.rows(); ++r) {
    EXPECT_EQ(max_abs_diff(before.hidden.row(r), after.hidden.row(r)), 0.0);
  }
}

TEST(TargetForward, StaleCacheThrows) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(18));
  RngState rng(19);
  AssembledSequence seq = mmspec::testing::random_prompt(t, c, rng, false, 3);
  TargetCache cache;
  target_forward(seq, t, c, cache);
  seq.embeddings(0, 0) += 1.0;
  try {
    target_forward(seq, t, c, cache);
    FAIL() << "expected stale cache";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "stale cache");
  }
}

TEST(AutoregressiveGenerate, GreedyDeterministicAndLength) {
  const ModelConfig c = tiny();
  const TargetParams t = init_target(c, RngState(20));
  RngState rng(21);
  const auto prompt = mmspec::testing::random_prompt(t, c, rng, true);
  RngState r1(1), r2(2);
  RngSampler s1(r1), s2(r2);
  const auto a = autoregressive_generate(prompt, t, c, 0.0, 8, s1);
  const auto b = autoregressive_generate(prompt, t, c, 0.0, 8, s2);
  EXPECT_EQ(a, b);
  RngState r3(3);
  RngSampler s3(r3);
  EXPECT_EQ(autoregressive_generate(prompt, t, c, 1.0, 1, s3).size(), 1u);
}

TEST(Weights, RoundTripAndHeaderCheck) {
  const ModelConfig c = tiny();
  WeightFile f;
  f.config = c;
  f.target = init_target(c, RngState(22));
  f.draft = init_draft(c, FusionMode::BaselineConcat, RngState(23));
  const auto path = std::filesystem::temp_directory_path() / "mmspec_weights_roundtrip.bin";
  save_weights(path, f);
  const WeightFile g = load_weights(path, c);
  ASSERT_TRUE(g.target && g.draft);
  EXPECT_TRUE(*g.target == *f.target);
  EXPECT_TRUE(*g.draft == *f.draft);
  ModelConfig other = c;
  other.dim = 16;
  EXPECT_THROW(load_weights(path, other), Error);
  std::filesystem::remove(path);
}
