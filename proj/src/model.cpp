// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mmspec {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  if (vocab < 2) fail("vocab must be >= 2");
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
  if (target_depth == 0) fail("target_depth must be >= 1");
  if (patch_dim == 0 || grid_side == 0) fail("patch_dim and grid_side must be positive");
  if (mlp_hidden == 0) fail("mlp_hidden must be positive");
  if (max_positions < 2) fail("max_positions must be >= 2");
}

std::string to_string(FusionMode mode) {
  return mode == FusionMode::Decoupled ? "decoupled" : "baseline-concat";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "decoupled") return FusionMode::Decoupled;
  if (s == "baseline-concat" || s == "baseline") return FusionMode::BaselineConcat;
  throw Error("unknown fusion mode '" + s + "'");
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, RngState& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * rng.normal();
  return m;
}

Matrix ones(std::size_t cols) { return Matrix(1, cols, 1.0); }
Matrix zeros(std::size_t cols) { return Matrix(1, cols, 0.0); }

template <class P>
std::size_t count_params(const P& p) {
  std::size_t n = 0;
  p.for_each([&](const auto&, const Matrix& m) { n += m.size(); });
  return n;
}

template <class P>
bool equal_params(const P& a, const P& b) {
  std::vector<const Matrix*> lhs, rhs;
  a.for_each([&](const auto&, const Matrix& m) { lhs.push_back(&m); });
  b.for_each([&](const auto&, const Matrix& m) { rhs.push_back(&m); });
  if (lhs.size() != rhs.size()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (!(*lhs[i] == *rhs[i])) return false;
  }
  return true;
}

template <class P>
std::uint64_t digest(const P& p) {
  std::uint64_t h = 0x6d6d73706563ULL;
  p.for_each([&](const auto&, const Matrix& m) {
    auto d = m.data();
    h = hash_bytes({reinterpret_cast<const unsigned char*>(d.data()), d.size() * sizeof(double)}, h);
  });
  return h;
}

}  // namespace

BlockParams init_block(std::size_t dim, std::size_t hidden, std::size_t depth_scale, RngState& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(dim));
  const double s_out = s_in / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(depth_scale, 1)));
  BlockParams b;
  b.ln1_gain = ones(dim);
  b.ln1_bias = zeros(dim);
  b.wq = gaussian(dim, dim, s_in, rng);
  b.wk = gaussian(dim, dim, s_in, rng);
  b.wv = gaussian(dim, dim, s_in, rng);
  b.wo = gaussian(dim, dim, s_out, rng);
  b.ln2_gain = ones(dim);
  b.ln2_bias = zeros(dim);
  b.w1 = gaussian(dim, hidden, s_in, rng);
  b.b1 = zeros(hidden);
  b.w2 = gaussian(hidden, dim, s_out / std::sqrt(static_cast<double>(hidden) / static_cast<double>(dim)), rng);
  b.b2 = zeros(dim);
  return b;
}

TargetParams init_target(const ModelConfig& c, RngState rng) {
  c.validate();
  TargetParams p;
  p.token_embedding = gaussian(c.vocab, c.dim, 1.0, rng);
  p.position_embedding = gaussian(c.max_positions, c.dim, 0.3, rng);
  p.patch_in_w = gaussian(c.patch_dim, c.dim, 1.0 / std::sqrt(static_cast<double>(c.patch_dim)), rng);
  p.patch_in_b = zeros(c.dim);
  p.vision_position = gaussian(c.max_patches(), c.dim, 0.3, rng);
  for (std::size_t i = 0; i < c.vision_depth; ++i) {
    p.vision_blocks.push_back(init_block(c.dim, c.mlp_hidden, c.vision_depth, rng));
  }
  p.vision_ln_gain = ones(c.dim);
  p.vision_ln_bias = zeros(c.dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(c.dim));
  p.proj_w1 = gaussian(c.dim, c.dim, s, rng);
  p.proj_b1 = zeros(c.dim);
  p.proj_w2 = gaussian(c.dim, c.dim, s, rng);
  p.proj_b2 = zeros(c.dim);
  for (std::size_t i = 0; i < c.target_depth; ++i) {
    p.blocks.push_back(init_block(c.dim, c.mlp_hidden, c.target_depth, rng));
  }
  p.final_ln_gain = ones(c.dim);
  p.final_ln_bias = zeros(c.dim);
  p.lm_head = gaussian(c.dim, c.vocab, s, rng);
  return p;
}

DraftParams init_draft(const ModelConfig& c, FusionMode mode, RngState rng) {
  c.validate();
  DraftParams d;
  d.mode = mode;
  d.fuse_w = gaussian(2 * c.dim, c.dim, 1.0 / std::sqrt(2.0 * static_cast<double>(c.dim)), rng);
  d.fuse_b = zeros(c.dim);
  d.block = init_block(c.dim, c.mlp_hidden, 1, rng);
  return d;
}

std::size_t TargetParams::parameter_count() const { return count_params(*this); }
std::size_t DraftParams::parameter_count() const { return count_params(*this); }
bool TargetParams::operator==(const TargetParams& o) const { return equal_params(*this, o); }
bool DraftParams::operator==(const DraftParams& o) const { return mode == o.mode && equal_params(*this, o); }
std::uint64_t fingerprint(const TargetParams& p) { return digest(p); }
std::uint64_t fingerprint(const DraftParams& p) { return digest(p) ^ static_cast<std::uint64_t>(p.mode); }

// ---------------------------------------------------------------------------
// Weight file IO

namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'P', 'E', 'C', 'W', '1'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("weight file truncated");
  return v;
}

template <class P>
void write_values(std::ostream& os, const P& p) {
  p.for_each([&](const auto&, const Matrix& m) {
    os.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
}

template <class P>
void read_values(std::istream& is, P& p, std::uint64_t expected) {
  if (expected != p.parameter_count()) {
    throw Error("weight section holds " + std::to_string(expected) + " values, config implies " +
                std::to_string(p.parameter_count()));
  }
  p.for_each([&](const auto&, Matrix& m) {
    is.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw Error("weight file truncated");
  });
}

}  // namespace

void save_weights(const std::filesystem::path& path, const WeightFile& file) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open weight file for writing: " + path.string());
  const ModelConfig& c = file.config;
  os.write(kMagic, sizeof kMagic);
  for (std::uint64_t v : {c.vocab, c.dim, c.heads, c.target_depth, c.vision_depth, c.patch_dim, c.grid_side,
                          c.mlp_hidden, c.max_positions}) {
    put<std::uint64_t>(os, v);
  }
  put<std::uint64_t>(os, c.seed);
  if (file.target) {
    os.write("TRGT", 4);
    put<std::uint64_t>(os, file.target->parameter_count());
    write_values(os, *file.target);
  }
  if (file.draft) {
    os.write("DRFT", 4);
    put<std::uint64_t>(os, file.draft->parameter_count());
    put<std::uint32_t>(os, static_cast<std::uint32_t>(file.draft->mode));
    write_values(os, *file.draft);
  }
  if (!os) throw Error("failed writing weight file " + path.string());
}

WeightFile load_weights(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open weight file: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error("not an mmspec weight file: " + path.string());
  WeightFile file;
  ModelConfig& c = file.config;
  c.vocab = get<std::uint64_t>(is);
  c.dim = get<std::uint64_t>(is);
  c.heads = get<std::uint64_t>(is);
  c.target_depth = get<std::uint64_t>(is);
  c.vision_depth = get<std::uint64_t>(is);
  c.patch_dim = get<std::uint64_t>(is);
  c.grid_side = get<std::uint64_t>(is);
  c.mlp_hidden = get<std::uint64_t>(is);
  c.max_positions = get<std::uint64_t>(is);
  c.seed = get<std::uint64_t>(is);
  c.validate();
  if (expected && !(*expected == c)) throw Error("weight file header does not match the expected model config");

  char tag[4];
  while (is.read(tag, 4)) {
    const auto count = get<std::uint64_t>(is);
    if (std::memcmp(tag, "TRGT", 4) == 0) {
      TargetParams t = init_target(c, RngState(0));
      read_values(is, t, count);
      file.target = std::move(t);
    } else if (std::memcmp(tag, "DRFT", 4) == 0) {
      const auto mode = get<std::uint32_t>(is);
      if (mode > 1) throw Error("unknown fusion mode in weight file");
      DraftParams d = init_draft(c, static_cast<FusionMode>(mode), RngState(0));
      read_values(is, d, count);
      file.draft = std::move(d);
    } else {
      throw Error("unknown section tag in weight file");
    }
  }
  return file;
}

}  // namespace mmspec
