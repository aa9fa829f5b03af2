// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmspec/model.hpp"
#include "mmspec/rng.hpp"
#include "mmspec/target.hpp"

namespace mmspec {

/// Partition of the 64-token vocabulary used by the synthetic tasks.
namespace vocab {
inline constexpr std::size_t kEos = 0;
inline constexpr std::size_t kSystemA = 1;
inline constexpr std::size_t kSystemB = 2;
inline constexpr std::size_t kAskColor = 3;   // "what color is cell <digit>"
inline constexpr std::size_t kAskCount = 4;   // "how many cells are <color>"
inline constexpr std::size_t kAskText = 5;    // "continue: <word> <word>"
inline constexpr std::size_t kFirstColor = 8;
inline constexpr std::size_t kColorCount = 8;
inline constexpr std::size_t kFirstDigit = 16;
inline constexpr std::size_t kDigitCount = 10;
inline constexpr std::size_t kFirstWord = 26;
inline constexpr std::size_t kWordCount = 38;  // the last word is the period
inline constexpr std::size_t kPeriod = kFirstWord + kWordCount - 1;
inline constexpr std::size_t kSize = kFirstWord + kWordCount;

inline bool is_color(std::size_t t) { return t >= kFirstColor && t < kFirstColor + kColorCount; }
inline bool is_digit(std::size_t t) { return t >= kFirstDigit && t < kFirstDigit + kDigitCount; }
inline bool is_word(std::size_t t) { return t >= kFirstWord && t < kSize; }
inline std::size_t color_token(std::size_t c) { return kFirstColor + c; }
inline std::size_t digit_token(std::size_t d) { return kFirstDigit + d; }
}  // namespace vocab

/// Seeded order-2 Markov chain over word tokens. Each (previous, current)
/// context has a small skewed successor set; the period ends a sentence.
class Grammar {
 public:
  explicit Grammar(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  /// Successor distribution over word tokens (indexed by word offset).
  const std::vector<std::pair<std::size_t, double>>& successors(std::size_t prev, std::size_t cur) const;
  std::size_t next(std::size_t prev, std::size_t cur, RngState& rng) const;
  /// Continues from (prev, cur) for between min_len and max_len words. The
  /// period can end it from min_len on; a period is forced at max_len.
  std::vector<std::size_t> sentence(std::size_t prev, std::size_t cur, std::size_t min_len, std::size_t max_len,
                                    RngState& rng) const;

 private:
  std::uint64_t seed_;
  std::vector<std::vector<std::pair<std::size_t, double>>> table_;  // kWordCount^2 contexts
};

enum class QuestionKind { Text, CellColor, ColorCount };
std::string to_string(QuestionKind kind);

struct GridWorldImage {
  std::size_t side = 0;
  std::vector<std::size_t> colors;  // color token ids, row-major

  bool operator==(const GridWorldImage&) const = default;
};

/// One-hot color in dims 0..7, a one-hot cell coordinate in dims 8.. when
/// patch_dim has room for every cell, a 0.1 sin offset and N(0, 0.05) noise
/// seeded by the image contents.
ImagePatchGrid patch_features(const GridWorldImage& image, std::size_t patch_dim);

struct InstructionExample {
  std::vector<std::size_t> system;
  std::optional<GridWorldImage> image;
  std::vector<std::size_t> instruction;
  std::vector<std::size_t> answer;

  QuestionKind kind() const;
  bool operator==(const InstructionExample&) const = default;
};

struct CorpusConfig {
  std::uint64_t grammar_seed = 11;
  std::size_t text_min_words = 6;
  std::size_t text_max_words = 12;
  std::size_t prefix_words = 2;  // words before the restated subject
  std::size_t suffix_min_words = 2;
  std::size_t suffix_max_words = 4;
  double count_fraction = 0.25;  // share of counting questions in visual corpora
};

std::vector<InstructionExample> gen_text_corpus(std::size_t count, const CorpusConfig& config, std::uint64_t seed);
std::vector<InstructionExample> gen_visual_corpus(std::size_t count, std::size_t side, const CorpusConfig& config,
                                                  std::uint64_t seed);

/// Whether `token` is the kind of token that answers a `kind` question
/// (a color for cell-color, a digit for counting).
bool is_key_token(QuestionKind kind, std::size_t token);
/// First answer token of the key kind (the image-dependent one); nullopt for text.
std::optional<std::size_t> key_answer_token(const InstructionExample& ex);

AssembledSequence assemble_prompt(const InstructionExample& ex, const TargetParams& params,
                                  const ModelConfig& config);
/// Prompt followed by the reference answer.
AssembledSequence assemble_full(const InstructionExample& ex, const TargetParams& params, const ModelConfig& config);

nlohmann::json to_json(const InstructionExample& ex);
InstructionExample example_from_json(const nlohmann::json& j);
void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionExample>& corpus);
std::vector<InstructionExample> read_jsonl(const std::filesystem::path& path);

/// 90/10 split by seed-stable hash of the example index.
bool is_held_out(std::uint64_t split_seed, std::size_t index);
struct Split {
  std::vector<InstructionExample> train;
  std::vector<InstructionExample> held_out;
};
Split split_corpus(const std::vector<InstructionExample>& corpus, std::uint64_t split_seed);

}  // namespace mmspec
