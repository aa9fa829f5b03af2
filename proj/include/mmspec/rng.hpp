// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace mmspec {

/// Counter-based generator: draw k of a stream is a pure function of (seed, k),
/// so any stream can be replayed from a recorded position.
class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed, std::uint64_t position = 0) : seed_(seed), position_(position) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution. One draw.
  double uniform();
  /// Standard normal via Box-Muller. Two draws.
  double normal();
  /// Uniform integer in [0, n). One draw.
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream; does not advance this stream.
  RngState derive(std::uint64_t stream) const;
  RngState derive(std::string_view label) const;

  bool operator==(const RngState&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t position_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_bytes(std::span<const unsigned char> bytes, std::uint64_t seed = 0);
std::uint64_t hash_string(std::string_view s, std::uint64_t seed = 0);

/// Fisher-Yates with RngState::below, so the order is the same on every
/// standard library (std::shuffle's algorithm is implementation-defined).
template <class T>
void shuffle(std::vector<T>& items, RngState& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Draws an index from a normalized distribution using exactly one uniform draw.
/// Throws on an all-zero or non-normalized (beyond 1e-9) distribution.
std::size_t sample_categorical(std::span<const double> dist, RngState& rng);

/// Source of the discrete random choices made during decoding. The production
/// implementation draws from an RngState; the losslessness certifier swaps in
/// an enumerating implementation that walks every outcome.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual std::size_t categorical(std::span<const double> dist) = 0;
  /// Returns true with probability p_true (clamped to [0, 1] by RNG-backed samplers).
  virtual bool bernoulli(double p_true) = 0;
};

class RngSampler final : public Sampler {
 public:
  explicit RngSampler(RngState& rng) : rng_(rng) {}
  std::size_t categorical(std::span<const double> dist) override { return sample_categorical(dist, rng_); }
  bool bernoulli(double p_true) override { return rng_.uniform() < p_true; }

 private:
  RngState& rng_;
};

}  // namespace mmspec
