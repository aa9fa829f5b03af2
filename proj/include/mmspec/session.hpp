// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "mmspec/draft.hpp"
#include "mmspec/model.hpp"
#include "mmspec/target.hpp"

namespace mmspec {

/// Mutable state of one generation. With C committed positions, the last
/// committed token is the drafting root: the target cache covers [0, C-1)
/// and the draft cache at most [0, C-1), built from true target features.
class DecodeSession {
 public:
  /// Runs the target over every prompt position except the last. The prompt
  /// needs at least two positions so the draft has a feature to start from.
  DecodeSession(const TargetParams& target, const DraftParams& draft, const ModelConfig& config,
                AssembledSequence prompt);

  const TargetParams& target() const { return *target_; }
  const DraftParams& draft() const { return *draft_; }
  const ModelConfig& config() const { return config_; }

  const AssembledSequence& sequence() const { return seq_; }
  std::size_t committed() const { return seq_.size(); }
  std::size_t prompt_length() const { return prompt_length_; }
  std::vector<std::size_t> generated() const;

  TargetCache& target_cache() { return target_cache_; }
  const TargetCache& target_cache() const { return target_cache_; }
  DraftCache& draft_cache() { return draft_cache_; }
  const DraftCache& draft_cache() const { return draft_cache_; }

  /// Appends committed text tokens. Caches are left for the caller to align.
  void commit(std::span<const std::size_t> tokens);
  /// Extends the target cache over any committed positions it is missing
  /// (everything but the root). Used when tokens were committed externally.
  void sync();

 private:
  const TargetParams* target_;
  const DraftParams* draft_;
  ModelConfig config_;
  AssembledSequence seq_;
  std::size_t prompt_length_ = 0;
  TargetCache target_cache_;
  DraftCache draft_cache_;
};

}  // namespace mmspec
