// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/datagen.hpp"

#include <cmath>
#include <fstream>

namespace mmspec {

namespace {

constexpr double kSuccessorWeights[] = {0.6, 0.25, 0.15};

std::size_t word_index(std::size_t token) {
  if (!vocab::is_word(token)) throw Error("grammar context must be word tokens");
  return token - vocab::kFirstWord;
}

}  // namespace

Grammar::Grammar(std::uint64_t seed) : seed_(seed), table_(vocab::kWordCount * vocab::kWordCount) {
  const RngState root(seed);
  for (std::size_t ctx = 0; ctx < table_.size(); ++ctx) {
    RngState rng = root.derive(ctx);
    auto& succ = table_[ctx];
    while (succ.size() < std::size(kSuccessorWeights)) {
      const std::size_t w = vocab::kFirstWord + rng.below(vocab::kWordCount);
      bool dup = false;
      for (const auto& s : succ) dup = dup || s.first == w;
      if (!dup) succ.emplace_back(w, kSuccessorWeights[succ.size()]);
    }
  }
}

const std::vector<std::pair<std::size_t, double>>& Grammar::successors(std::size_t prev, std::size_t cur) const {
  return table_[word_index(prev) * vocab::kWordCount + word_index(cur)];
}

std::size_t Grammar::next(std::size_t prev, std::size_t cur, RngState& rng) const {
  const auto& succ = successors(prev, cur);
  double u = rng.uniform();
  for (const auto& [w, p] : succ) {
    if (u < p) return w;
    u -= p;
  }
  return succ.back().first;
}

namespace {

// Draws a successor, excluding the period unless allowed. Falls back to the
// most likely non-period successor when the period is the only option drawn.
std::size_t draw_word(const Grammar& g, std::size_t prev, std::size_t cur, bool allow_period, RngState& rng) {
  const std::size_t w = g.next(prev, cur, rng);
  if (allow_period || w != vocab::kPeriod) return w;
  for (const auto& [s, p] : g.successors(prev, cur)) {
    if (s != vocab::kPeriod) return s;
  }
  return vocab::kFirstWord;
}

std::vector<std::size_t> walk(const Grammar& g, std::size_t prev, std::size_t cur, std::size_t n, RngState& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t w = draw_word(g, prev, cur, false, rng);
    out.push_back(w);
    prev = cur;
    cur = w;
  }
  return out;
}

}  // namespace

std::vector<std::size_t> Grammar::sentence(std::size_t prev, std::size_t cur, std::size_t min_len,
                                           std::size_t max_len, RngState& rng) const {
  if (min_len == 0 || max_len < min_len) throw Error("Grammar::sentence: need 1 <= min_len <= max_len");
  std::vector<std::size_t> out;
  while (out.size() + 1 < max_len) {
    const std::size_t w = draw_word(*this, prev, cur, out.size() + 1 >= min_len, rng);
    out.push_back(w);
    if (w == vocab::kPeriod) return out;
    prev = cur;
    cur = w;
  }
  out.push_back(vocab::kPeriod);
  return out;
}

std::string to_string(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::Text: return "text";
    case QuestionKind::CellColor: return "cell-color";
    case QuestionKind::ColorCount: return "color-count";
  }
  return "unknown";
}

ImagePatchGrid patch_features(const GridWorldImage& image, std::size_t patch_dim) {
  const std::size_t m = image.side * image.side;
  if (image.colors.size() != m) throw Error("GridWorldImage: color count does not equal side^2");
  if (patch_dim < vocab::kColorCount) throw Error("patch_dim must be at least the number of colors");
  std::vector<unsigned char> bytes;
  for (std::size_t c : image.colors) bytes.push_back(static_cast<unsigned char>(c));
  const RngState noise(hash_bytes(bytes, image.side));
  ImagePatchGrid grid;
  grid.side = image.side;
  grid.patches = Matrix(m, patch_dim);
  for (std::size_t i = 0; i < m; ++i) {
    if (!vocab::is_color(image.colors[i])) throw Error("GridWorldImage: cell holds a non-color token");
    RngState rng = noise.derive(i);
    auto row = grid.patches.row(i);
    row[image.colors[i] - vocab::kFirstColor] = 1.0;
    // Coordinate channel: one-hot cell index when the feature is wide enough.
    if (patch_dim >= vocab::kColorCount + m) row[vocab::kColorCount + i] = 1.0;
    for (std::size_t d = 0; d < patch_dim; ++d) {
      row[d] += 0.1 * std::sin(0.7 * static_cast<double>((i + 1) * (d + 1))) + 0.05 * rng.normal();
    }
  }
  return grid;
}

QuestionKind InstructionExample::kind() const {
  if (!instruction.empty() && instruction[0] == vocab::kAskColor) return QuestionKind::CellColor;
  if (!instruction.empty() && instruction[0] == vocab::kAskCount) return QuestionKind::ColorCount;
  return QuestionKind::Text;
}

namespace {

std::size_t random_word(RngState& rng) { return vocab::kFirstWord + rng.below(vocab::kWordCount - 1); }

// Fixed opening context per question kind, so the answer prefix is a
// grammar walk the models can learn.
std::pair<std::size_t, std::size_t> opening(QuestionKind kind) {
  return kind == QuestionKind::CellColor ? std::pair{vocab::kFirstWord, vocab::kFirstWord + 1}
                                         : std::pair{vocab::kFirstWord + 2, vocab::kFirstWord + 3};
}

}  // namespace

std::vector<InstructionExample> gen_text_corpus(std::size_t count, const CorpusConfig& config, std::uint64_t seed) {
  if (count == 0) throw Error("gen_text_corpus: count must be >= 1");
  const Grammar g(config.grammar_seed);
  const RngState root = RngState(seed).derive("text-corpus");
  std::vector<InstructionExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngState rng = root.derive(i);
    InstructionExample ex;
    ex.system = {vocab::kSystemA, vocab::kSystemB};
    const std::size_t a = random_word(rng), b = random_word(rng);
    ex.instruction = {vocab::kAskText, a, b};
    ex.answer = g.sentence(a, b, config.text_min_words, config.text_max_words, rng);
    ex.answer.push_back(vocab::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<InstructionExample> gen_visual_corpus(std::size_t count, std::size_t side, const CorpusConfig& config,
                                                  std::uint64_t seed) {
  if (count == 0) throw Error("gen_visual_corpus: count must be >= 1");
  if (side == 0 || side * side > vocab::kDigitCount) throw Error("gen_visual_corpus: grid must have 1..9 cells");
  if (config.prefix_words < 2) throw Error("gen_visual_corpus: prefix needs at least two words");
  const Grammar g(config.grammar_seed);
  const RngState root = RngState(seed).derive("visual-corpus");
  std::vector<InstructionExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngState rng = root.derive(i);
    InstructionExample ex;
    ex.system = {vocab::kSystemA, vocab::kSystemB};
    GridWorldImage img;
    img.side = side;
    for (std::size_t c = 0; c < side * side; ++c) img.colors.push_back(vocab::color_token(rng.below(vocab::kColorCount)));
    const bool counting = rng.uniform() < config.count_fraction;
    // The answer restates the subject (cell digit or color) and then gives
    // the image-dependent token, wrapped in grammar words.
    std::size_t subject = 0, key = 0;
    if (counting) {
      subject = vocab::color_token(rng.below(vocab::kColorCount));
      ex.instruction = {vocab::kAskCount, subject};
      std::size_t n = 0;
      for (std::size_t c : img.colors) n += c == subject ? 1 : 0;
      key = vocab::digit_token(n);
    } else {
      const std::size_t cell = rng.below(side * side);
      subject = vocab::digit_token(cell);
      ex.instruction = {vocab::kAskColor, subject};
      key = img.colors[cell];
    }
    const auto [p0, p1] = opening(ex.kind());
    const auto prefix = walk(g, p0, p1, config.prefix_words, rng);
    ex.answer = prefix;
    ex.answer.push_back(subject);
    ex.answer.push_back(key);
    const auto suffix = g.sentence(prefix[prefix.size() - 2], prefix.back(), config.suffix_min_words,
                                   config.suffix_max_words, rng);
    ex.answer.insert(ex.answer.end(), suffix.begin(), suffix.end());
    ex.answer.push_back(vocab::kEos);
    ex.image = std::move(img);
    out.push_back(std::move(ex));
  }
  return out;
}

bool is_key_token(QuestionKind kind, std::size_t token) {
  if (kind == QuestionKind::CellColor) return vocab::is_color(token);
  if (kind == QuestionKind::ColorCount) return vocab::is_digit(token);
  return false;
}

std::optional<std::size_t> key_answer_token(const InstructionExample& ex) {
  for (std::size_t t : ex.answer) {
    if (is_key_token(ex.kind(), t)) return t;
  }
  return std::nullopt;
}

AssembledSequence assemble_prompt(const InstructionExample& ex, const TargetParams& params,
                                  const ModelConfig& config) {
  const auto sys = make_tokens(ex.system, TextRole::System);
  const auto ins = make_tokens(ex.instruction, TextRole::Instruction);
  if (!ex.image) return assemble_sequence(sys, nullptr, ins, params, config);
  const ImagePatchGrid grid = patch_features(*ex.image, config.patch_dim);
  return assemble_sequence(sys, &grid, ins, params, config);
}

AssembledSequence assemble_full(const InstructionExample& ex, const TargetParams& params, const ModelConfig& config) {
  AssembledSequence seq = assemble_prompt(ex, params, config);
  for (std::size_t t : ex.answer) seq.append_text(t, params);
  return seq;
}

nlohmann::json to_json(const InstructionExample& ex) {
  nlohmann::json j;
  j["system"] = ex.system;
  if (ex.image) {
    j["image"] = {{"side", ex.image->side}, {"colors", ex.image->colors}};
  } else {
    j["image"] = nullptr;
  }
  j["instruction"] = ex.instruction;
  j["answer"] = ex.answer;
  return j;
}

InstructionExample example_from_json(const nlohmann::json& j) {
  InstructionExample ex;
  ex.system = j.at("system").get<std::vector<std::size_t>>();
  if (!j.at("image").is_null()) {
    GridWorldImage img;
    img.side = j.at("image").at("side").get<std::size_t>();
    img.colors = j.at("image").at("colors").get<std::vector<std::size_t>>();
    if (img.colors.size() != img.side * img.side) throw Error("corpus image: color count does not equal side^2");
    ex.image = std::move(img);
  }
  ex.instruction = j.at("instruction").get<std::vector<std::size_t>>();
  ex.answer = j.at("answer").get<std::vector<std::size_t>>();
  return ex;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionExample>& corpus) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& ex : corpus) os << to_json(ex).dump() << '\n';
  if (!os) throw Error("failed writing " + path.string());
}

std::vector<InstructionExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open corpus " + path.string());
  std::vector<InstructionExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

bool is_held_out(std::uint64_t split_seed, std::size_t index) { return mix64(split_seed ^ mix64(index + 1)) % 10 == 0; }

Split split_corpus(const std::vector<InstructionExample>& corpus, std::uint64_t split_seed) {
  Split s;
  for (std::size_t i = 0; i < corpus.size(); ++i) (is_held_out(split_seed, i) ? s.held_out : s.train).push_back(corpus[i]);
  return s;
}

}  // namespace mmspec
