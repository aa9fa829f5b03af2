// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/draft.hpp"

#include <algorithm>
#include <numeric>

#include "mmspec/kernels.hpp"
#include "mmspec/session.hpp"

namespace mmspec {

std::vector<double> fuse_position(std::span<const double> feature, std::span<const double> own_embedding,
                                  std::span<const double> next_embedding, Modality modality, FusionMode mode,
                                  const DraftParams& draft) {
  const std::size_t d = draft.fuse_b.cols();
  if (modality == Modality::Visual && mode == FusionMode::Decoupled) {
    if (own_embedding.size() != d) throw Error("fuse_position: embedding width mismatch");
    return {own_embedding.begin(), own_embedding.end()};
  }
  if (feature.size() != d || next_embedding.size() != d) throw Error("fuse_position: feature width mismatch");
  std::vector<double> out(draft.fuse_b.data().begin(), draft.fuse_b.data().end());
  // Same accumulation order as matmul(concat, fuse_w) followed by the bias.
  std::vector<double> acc(d, 0.0);
  for (std::size_t k = 0; k < 2 * d; ++k) {
    const double a = k < d ? feature[k] : next_embedding[k - d];
    auto w = draft.fuse_w.row(k);
    for (std::size_t c = 0; c < d; ++c) acc[c] += a * w[c];
  }
  for (std::size_t c = 0; c < d; ++c) out[c] = acc[c] + out[c];
  return out;
}

DraftInput build_draft_inputs(const AssembledSequence& seq, const Matrix& target_hidden, const DraftParams& draft,
                              FusionMode mode, std::size_t first) {
  const std::size_t n = target_hidden.rows();
  if (first > n) throw Error("build_draft_inputs: first position beyond the hidden states");
  if (seq.size() < n + 1) throw Error("build_draft_inputs: missing successor embedding for the last position");
  DraftInput in;
  in.offset = first;
  in.fused = Matrix(0, draft.fuse_b.cols());
  for (std::size_t i = first; i < n; ++i) {
    const auto row = fuse_position(target_hidden.row(i), seq.embeddings.row(i), seq.embeddings.row(i + 1),
                                   seq.modality[i], mode, draft);
    in.fused.append_rows(Matrix(1, row.size(), row));
    in.modality.push_back(seq.modality[i]);
  }
  return in;
}

void DraftCache::truncate(std::size_t n) {
  if (n > length()) throw Error("DraftCache::truncate beyond cached length");
  kv.truncate(n);
  features.resize_rows(n);
  logits.resize_rows(n);
  fingerprints.resize(n);
}

std::vector<double> lm_head_logits(std::span<const double> feature, const TargetParams& target) {
  const Matrix row(1, feature.size(), std::vector<double>(feature.begin(), feature.end()));
  const Matrix out = matmul(row, target.lm_head);
  return {out.data().begin(), out.data().end()};
}

DraftOutputs draft_forward_rows(const Matrix& fused, const AttentionMask& mask, const DraftParams& draft,
                                const TargetParams& target, const ModelConfig& config, DraftCache& cache,
                                double temperature) {
  if (cache.features.cols() == 0) {
    cache.features = Matrix(0, config.dim);
    cache.logits = Matrix(0, config.vocab);
  }
  DraftOutputs out;
  out.features = block_forward(draft.block, fused, mask, config.heads, &cache.kv);
  out.logits = matmul(out.features, target.lm_head);
  require_finite(out.logits, "draft logits");
  for (std::size_t i = 0; i < fused.rows(); ++i) {
    out.distributions.push_back(softmax_with_temperature(out.logits.row(i), temperature));
    cache.fingerprints.push_back(row_fingerprint(fused.row(i), Modality::Text));
  }
  cache.features.append_rows(out.features);
  cache.logits.append_rows(out.logits);
  return out;
}

DraftOutputs draft_forward(const DraftInput& inputs, const DraftParams& draft, const TargetParams& target,
                           const ModelConfig& config, DraftCache& cache, double temperature) {
  const std::size_t start = cache.length();
  const std::size_t end = inputs.offset + inputs.fused.rows();
  if (inputs.offset > start) throw Error("stale cache");
  for (std::size_t i = inputs.offset; i < std::min(start, end); ++i) {
    if (cache.fingerprints[i] != row_fingerprint(inputs.fused.row(i - inputs.offset), Modality::Text)) {
      throw Error("stale cache");
    }
  }
  if (end <= start) return DraftOutputs{Matrix(0, config.dim), Matrix(0, config.vocab), {}};
  std::vector<std::size_t> idx(end - start);
  std::iota(idx.begin(), idx.end(), start - inputs.offset);
  return draft_forward_rows(inputs.fused.select_rows(idx), AttentionMask::causal(idx.size(), end), draft, target,
                            config, cache, temperature);
}

std::size_t DraftTree::depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

namespace {

struct Frontier {
  std::vector<double> feature;
  std::vector<double> logits;
  std::size_t passes = 0;
};

// Brings the draft cache up to C-1 positions and returns the predicted
// feature for the root position with its logits.
Frontier catch_up(DecodeSession& session) {
  const std::size_t c = session.committed();
  DraftCache& cache = session.draft_cache();
  if (cache.length() > c - 1) cache.truncate(c - 1);
  Frontier f;
  const DraftInput in = build_draft_inputs(session.sequence(), session.target_cache().hidden, session.draft(),
                                           cache.length());
  if (in.fused.rows() > 0) {
    draft_forward(in, session.draft(), session.target(), session.config(), cache, 1.0);
    f.passes = 1;
  }
  if (cache.length() == 0) throw Error("draft has no context to predict from");
  auto feat = cache.features.row(cache.length() - 1);
  auto logit = cache.logits.row(cache.length() - 1);
  f.feature.assign(feat.begin(), feat.end());
  f.logits.assign(logit.begin(), logit.end());
  return f;
}

std::vector<double> token_row(const TargetParams& p, std::size_t token) {
  auto r = p.token_embedding.row(token);
  return {r.begin(), r.end()};
}

std::vector<std::size_t> top_k(std::span<const double> logits, std::size_t k) {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

DraftChain draft_chain(DecodeSession& session, std::size_t gamma, double temperature, Sampler& sampler) {
  if (gamma == 0) throw Error("draft_chain: gamma must be >= 1");
  const std::size_t c = session.committed();
  const auto& seq = session.sequence();
  const DraftParams& draft = session.draft();
  Frontier f = catch_up(session);
  DraftChain chain;
  chain.forward_passes = f.passes;
  std::vector<double> prev_embedding(seq.embeddings.row(c - 1).begin(), seq.embeddings.row(c - 1).end());
  Modality prev_modality = seq.modality[c - 1];
  for (std::size_t s = 0; s < gamma; ++s) {
    auto q = softmax_with_temperature(f.logits, temperature);
    const std::size_t token = temperature == 0.0 ? argmax(f.logits) : sampler.categorical(q);
    chain.tokens.push_back(token);
    chain.q.push_back(std::move(q));
    if (s + 1 == gamma) break;
    const auto next_embedding = token_row(session.target(), token);
    const auto fused = fuse_position(f.feature, prev_embedding, next_embedding, prev_modality, draft.mode, draft);
    DraftCache& cache = session.draft_cache();
    const auto out = draft_forward_rows(Matrix(1, fused.size(), fused), AttentionMask::causal(1, cache.length() + 1),
                                        draft, session.target(), session.config(), cache, temperature);
    ++chain.forward_passes;
    f.feature.assign(out.features.row(0).begin(), out.features.row(0).end());
    f.logits.assign(out.logits.row(0).begin(), out.logits.row(0).end());
    prev_embedding = next_embedding;
    prev_modality = Modality::Text;
  }
  session.draft_cache().truncate(c - 1);
  return chain;
}

DraftTree draft_tree(DecodeSession& session, std::span<const std::size_t> plan, double temperature, Sampler& sampler) {
  if (plan.empty()) throw Error("draft_tree: plan must be non-empty");
  for (std::size_t k : plan) {
    if (k == 0) throw Error("draft_tree: plan counts must be >= 1");
  }
  const std::size_t c = session.committed();
  const auto& seq = session.sequence();
  const DraftParams& draft = session.draft();
  Frontier root = catch_up(session);

  DraftTree tree;
  tree.plan.assign(plan.begin(), plan.end());
  tree.forward_passes = root.passes;
  DraftNode r;
  r.token = seq.tokens[c - 1];
  tree.nodes.push_back(r);
  std::vector<std::vector<double>> features{root.feature}, logits{root.logits};
  std::vector<int> row_parents;  // parent tree row of each non-root node
  std::vector<std::size_t> frontier{0};

  for (std::size_t d = 1; d <= plan.size(); ++d) {
    std::vector<std::size_t> fresh;
    for (std::size_t parent : frontier) {
      auto dist = softmax_with_temperature(logits[parent], temperature);
      auto add_child = [&](std::size_t token) {
        DraftNode n;
        n.token = token;
        n.parent = static_cast<int>(parent);
        n.depth = d;
        n.q = dist[token];
        const std::size_t id = tree.nodes.size();
        tree.nodes.push_back(n);
        tree.nodes[parent].children.push_back(id);
        row_parents.push_back(parent == 0 ? -1 : static_cast<int>(parent) - 1);
        fresh.push_back(id);
        return id;
      };
      if (temperature == 0.0) {
        for (std::size_t token : top_k(logits[parent], plan[d - 1])) {
          const std::size_t id = add_child(token);
          tree.nodes[parent].draws.push_back(id);
        }
      } else {
        for (std::size_t j = 0; j < plan[d - 1]; ++j) {
          const std::size_t token = sampler.categorical(dist);
          std::size_t id = 0;
          for (std::size_t ch : tree.nodes[parent].children) {
            if (tree.nodes[ch].token == token) id = ch;
          }
          if (id == 0) id = add_child(token);
          tree.nodes[parent].draws.push_back(id);
        }
      }
      tree.nodes[parent].child_dist = std::move(dist);
    }
    if (d == plan.size()) break;

    Matrix rows(0, draft.fuse_b.cols());
    for (std::size_t id : fresh) {
      const auto& node = tree.nodes[id];
      const std::size_t parent = static_cast<std::size_t>(node.parent);
      std::vector<double> parent_embedding =
          parent == 0 ? std::vector<double>(seq.embeddings.row(c - 1).begin(), seq.embeddings.row(c - 1).end())
                      : token_row(session.target(), tree.nodes[parent].token);
      const Modality parent_modality = parent == 0 ? seq.modality[c - 1] : Modality::Text;
      const auto fused = fuse_position(features[parent], parent_embedding, token_row(session.target(), node.token),
                                       parent_modality, draft.mode, draft);
      rows.append_rows(Matrix(1, fused.size(), fused));
    }
    const auto mask = AttentionMask::tree(c - 1, row_parents, fresh.size());
    const auto out = draft_forward_rows(rows, mask, draft, session.target(), session.config(), session.draft_cache(),
                                        temperature);
    ++tree.forward_passes;
    features.resize(tree.nodes.size());
    logits.resize(tree.nodes.size());
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      features[fresh[i]].assign(out.features.row(i).begin(), out.features.row(i).end());
      logits[fresh[i]].assign(out.logits.row(i).begin(), out.logits.row(i).end());
    }
    frontier = std::move(fresh);
  }
  session.draft_cache().truncate(c - 1);
  return tree;
}

}  // namespace mmspec
