// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/session.hpp"

namespace mmspec {

DecodeSession::DecodeSession(const TargetParams& target, const DraftParams& draft, const ModelConfig& config,
                             AssembledSequence prompt)
    : target_(&target), draft_(&draft), config_(config), seq_(std::move(prompt)) {
  if (seq_.size() < 2) throw Error("speculative decoding needs a prompt of at least two positions");
  if (seq_.size() > config_.max_positions) throw Error("prompt exceeds max_positions");
  prompt_length_ = seq_.size();
  const std::size_t n = seq_.size() - 1;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  target_forward_rows(seq_.embeddings.select_rows(idx), idx, std::span<const Modality>(seq_.modality.data(), n),
                      AttentionMask::causal(n), target, config_, target_cache_, 1.0);
}

std::vector<std::size_t> DecodeSession::generated() const {
  return {seq_.tokens.begin() + static_cast<std::ptrdiff_t>(prompt_length_), seq_.tokens.end()};
}

void DecodeSession::commit(std::span<const std::size_t> tokens) {
  for (std::size_t t : tokens) seq_.append_text(t, *target_);
}

void DecodeSession::sync() {
  const std::size_t start = target_cache_.length();
  const std::size_t end = seq_.size() - 1;
  if (start > end) throw Error("target cache runs past the committed root");
  if (start == end) return;
  std::vector<std::size_t> idx(end - start);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
  target_forward_rows(seq_.embeddings.select_rows(idx), idx,
                      std::span<const Modality>(seq_.modality.data() + start, idx.size()),
                      AttentionMask::causal(idx.size(), end), *target_, config_, target_cache_, 1.0);
}

}  // namespace mmspec
