// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "mmspec/datagen.hpp"
#include "mmspec/kernels.hpp"
#include "test_util.hpp"

using namespace mmspec;

TEST(Grammar, SameSeedSameSuccessors) {
  const Grammar a(3), b(3), c(4);
  const std::size_t w = vocab::kFirstWord;
  EXPECT_EQ(a.successors(w, w + 1), b.successors(w, w + 1));
  bool differs = false;
  for (std::size_t i = 0; i < 5 && !differs; ++i) differs = a.successors(w + i, w + i + 1) != c.successors(w + i, w + i + 1);
  EXPECT_TRUE(differs);
}

TEST(Grammar, SentenceLengthBounds) {
  const Grammar g(5);
  for (std::size_t k = 0; k < 200; ++k) {
    RngState rng = mmspec::testing::case_rng(77, k);
    const auto s = g.sentence(vocab::kFirstWord, vocab::kFirstWord + 1, 3, 6, rng);
    ASSERT_GE(s.size(), 3u);
    ASSERT_LE(s.size(), 6u);
    for (std::size_t t : s) ASSERT_TRUE(vocab::is_word(t));
    if (s.size() == 6) EXPECT_EQ(s.back(), vocab::kPeriod);
  }
}

TEST(TextCorpus, DeterministicAndImageFree) {
  const CorpusConfig cfg;
  const auto a = gen_text_corpus(50, cfg, 9), b = gen_text_corpus(50, cfg, 9), c = gen_text_corpus(50, cfg, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& ex : a) {
    EXPECT_FALSE(ex.image.has_value());
    EXPECT_EQ(ex.kind(), QuestionKind::Text);
    ASSERT_FALSE(ex.answer.empty());
    EXPECT_EQ(ex.answer.back(), vocab::kEos);
  }
}

TEST(TextCorpus, AnswerUnigramsAreDiverse) {
  std::set<std::size_t> seen;
  for (const auto& ex : gen_text_corpus(1000, CorpusConfig{}, 2)) seen.insert(ex.answer.begin(), ex.answer.end());
  EXPECT_GE(seen.size(), 10u);
}

TEST(VisualCorpus, CellColorAnswerContainsTheColor) {
  std::size_t color_questions = 0, count_questions = 0;
  for (const auto& ex : gen_visual_corpus(400, 2, CorpusConfig{}, 4)) {
    ASSERT_TRUE(ex.image.has_value());
    ASSERT_EQ(ex.image->colors.size(), 4u);
    const auto key = key_answer_token(ex);
    ASSERT_TRUE(key.has_value());
    EXPECT_TRUE(is_key_token(ex.kind(), *key));
    if (ex.kind() == QuestionKind::CellColor) {
      ++color_questions;
      // the instruction names the cell by digit
      std::size_t cell = 99;
      for (std::size_t t : ex.instruction) {
        if (vocab::is_digit(t)) cell = t - vocab::kFirstDigit;
      }
      ASSERT_LT(cell, 4u);
      const std::size_t color = ex.image->colors[cell];
      EXPECT_EQ(*key, color);
      EXPECT_NE(std::find(ex.answer.begin(), ex.answer.end(), color), ex.answer.end());
    } else {
      ++count_questions;
      EXPECT_EQ(ex.kind(), QuestionKind::ColorCount);
    }
  }
  EXPECT_GT(color_questions, count_questions);
  EXPECT_GT(count_questions, 0u);
}

TEST(VisualCorpus, PatchFeaturesCarryColorAndCell) {
  GridWorldImage img{2, {vocab::color_token(3), vocab::color_token(0), vocab::color_token(3), vocab::color_token(7)}};
  const auto grid = patch_features(img, vocab::kColorCount + 4);
  ASSERT_EQ(grid.patch_count(), 4u);
  const std::size_t want[] = {3, 0, 3, 7};
  for (std::size_t cell = 0; cell < 4; ++cell) {
    const auto row = grid.patches.row(cell);
    EXPECT_EQ(argmax(row.subspan(0, vocab::kColorCount)), want[cell]) << cell;
    EXPECT_EQ(argmax(row.subspan(vocab::kColorCount, 4)), cell) << cell;
  }
  EXPECT_EQ(patch_features(img, vocab::kColorCount + 4).patches, grid.patches);
}

TEST(Corpus, JsonlRoundTrip) {
  auto corpus = gen_visual_corpus(20, 2, CorpusConfig{}, 1);
  const auto text = gen_text_corpus(20, CorpusConfig{}, 1);
  corpus.insert(corpus.end(), text.begin(), text.end());
  const auto path = std::filesystem::temp_directory_path() / "mmspec_corpus_roundtrip.jsonl";
  write_jsonl(path, corpus);
  EXPECT_EQ(read_jsonl(path), corpus);
  std::filesystem::remove(path);
}

TEST(Corpus, SplitIsStableAndRoughlyNinetyTen) {
  const auto corpus = gen_text_corpus(2000, CorpusConfig{}, 3);
  const Split a = split_corpus(corpus, 8), b = split_corpus(corpus, 8);
  EXPECT_EQ(a.held_out, b.held_out);
  EXPECT_EQ(a.train.size() + a.held_out.size(), corpus.size());
  EXPECT_NEAR(static_cast<double>(a.held_out.size()) / corpus.size(), 0.1, 0.03);
}

TEST(Corpus, AssembledPromptLayout) {
  ModelConfig c;
  c.vocab = vocab::kSize;
  c.grid_side = 2;
  c.patch_dim = vocab::kColorCount + 4;
  const TargetParams t = init_target(c, RngState(1));
  const auto ex = gen_visual_corpus(1, 2, CorpusConfig{}, 5).front();
  const auto prompt = assemble_prompt(ex, t, c);
  const auto full = assemble_full(ex, t, c);
  EXPECT_EQ(prompt.size(), ex.system.size() + 4 + ex.instruction.size());
  EXPECT_EQ(full.size(), prompt.size() + ex.answer.size());
  EXPECT_EQ(prompt.visual_begin, ex.system.size());
  EXPECT_EQ(prompt.visual_count(), 4u);
}
