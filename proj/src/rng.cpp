// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/rng.hpp"

#include <cmath>
#include <numbers>

#include "mmspec/matrix.hpp"

namespace mmspec {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t RngState::next_u64() {
  ++position_;
  return mix64(seed_ + position_ * kGolden);
}

double RngState::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngState::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngState::below(std::uint64_t n) {
  if (n == 0) throw Error("RngState::below: empty range");
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

RngState RngState::derive(std::uint64_t stream) const {
  return RngState(mix64(seed_ ^ mix64(stream + kGolden)), 0);
}

RngState RngState::derive(std::string_view label) const { return derive(hash_string(label)); }

std::uint64_t hash_bytes(std::span<const unsigned char> bytes, std::uint64_t seed) {
  // FNV-1a, then mixed.
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::uint64_t hash_string(std::string_view s, std::uint64_t seed) {
  return hash_bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, seed);
}

std::size_t sample_categorical(std::span<const double> dist, RngState& rng) {
  if (dist.empty()) throw Error("empty distribution");
  double total = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw Error("sample_categorical: negative or NaN probability");
    total += p;
  }
  if (total == 0.0) throw Error("sample_categorical: all-zero distribution");
  if (std::abs(total - 1.0) > 1e-9) throw Error("sample_categorical: distribution not normalized");
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_positive = i;
    cum += dist[i];
    if (u < cum) return i;
  }
  return last_positive;
}

}  // namespace mmspec
