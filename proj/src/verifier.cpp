// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/verifier.hpp"

#include <algorithm>
#include <chrono>

#include "mmspec/kernels.hpp"

namespace mmspec {

double acceptance_probability(double p, double q) {
  if (!(q > 0.0)) throw Error("candidate outside draft support");
  if (p < 0.0) throw Error("acceptance_probability: negative target probability");
  return std::min(1.0, p / std::max(q, kProbabilityFloor));
}

double acceptance_for_rule(double p, double q, VerifyRule rule) {
  if (rule != VerifyRule::UncappedRatio) return acceptance_probability(p, q);
  if (!(q > 0.0)) throw Error("candidate outside draft support");
  return p / std::max(q, kProbabilityFloor);
}

std::string to_string(VerifyRule rule) {
  switch (rule) {
    case VerifyRule::Standard: return "standard";
    case VerifyRule::UncappedRatio: return "uncapped-ratio";
    case VerifyRule::ResampleFromTarget: return "resample-from-target";
  }
  return "unknown";
}

VerifyRule verify_rule_from_string(const std::string& s) {
  if (s == "standard") return VerifyRule::Standard;
  if (s == "uncapped-ratio") return VerifyRule::UncappedRatio;
  if (s == "resample-from-target") return VerifyRule::ResampleFromTarget;
  throw Error("unknown verify rule '" + s + "'");
}

std::vector<double> adjusted_distribution(std::span<const double> p, std::span<const double> q, bool* fallback) {
  if (p.size() != q.size()) throw Error("adjusted_distribution: size mismatch");
  std::vector<double> r(p.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = std::max(0.0, p[i] - q[i]);
    mass += r[i];
  }
  if (fallback != nullptr) *fallback = mass < kResidualMassFloor;
  if (mass < kResidualMassFloor) return {p.begin(), p.end()};
  for (double& v : r) v /= mass;
  return r;
}

std::string to_string(CorrectionKind kind) {
  switch (kind) {
    case CorrectionKind::Resample: return "resample";
    case CorrectionKind::Bonus: return "bonus";
    case CorrectionKind::Fallback: return "fallback";
  }
  return "unknown";
}

std::vector<std::size_t> VerificationResult::appended() const {
  std::vector<std::size_t> out = accepted;
  out.push_back(correction);
  return out;
}

namespace {

// Draws the correction after a rejection.
std::size_t draw_correction(std::span<const double> residual_source, std::span<const double> q, VerifyRule rule,
                            Sampler& sampler, CorrectionKind& kind, std::vector<double>* residual_out = nullptr) {
  if (rule == VerifyRule::ResampleFromTarget) {
    kind = CorrectionKind::Resample;
    return sampler.categorical(residual_source);
  }
  bool fallback = false;
  auto residual = adjusted_distribution(residual_source, q, &fallback);
  kind = fallback ? CorrectionKind::Fallback : CorrectionKind::Resample;
  const std::size_t token = sampler.categorical(residual);
  if (residual_out != nullptr) *residual_out = std::move(residual);
  return token;
}

}  // namespace

VerificationResult verify_chain(std::span<const std::size_t> candidates, const std::vector<std::vector<double>>& q,
                                const std::vector<std::vector<double>>& p, double temperature, Sampler& sampler,
                                VerifyRule rule) {
  const std::size_t gamma = candidates.size();
  if (q.size() != gamma || p.size() != gamma + 1) throw Error("verify_chain: expected gamma q and gamma+1 p vectors");
  VerificationResult r;
  for (std::size_t s = 0; s < gamma; ++s) {
    const std::size_t x = candidates[s];
    CandidateFlag flag{s + 1, s + 1, x, false};
    if (temperature == 0.0) {
      flag.accepted = x == argmax(p[s]);
    } else {
      flag.accepted = sampler.bernoulli(acceptance_for_rule(p[s].at(x), q[s].at(x), rule));
    }
    r.flags.push_back(flag);
    if (flag.accepted) {
      r.accepted.push_back(x);
      r.path.push_back(s + 1);
      continue;
    }
    if (temperature == 0.0) {
      r.correction = argmax(p[s]);
      r.kind = CorrectionKind::Resample;
    } else {
      r.correction = draw_correction(p[s], q[s], rule, sampler, r.kind);
    }
    return r;
  }
  r.kind = CorrectionKind::Bonus;
  r.correction = temperature == 0.0 ? argmax(p[gamma]) : sampler.categorical(p[gamma]);
  return r;
}

VerificationResult verify_tree(const DraftTree& tree, const std::vector<std::vector<double>>& p, double temperature,
                               Sampler& sampler, VerifyRule rule) {
  if (tree.nodes.empty()) throw Error("verify_tree: empty tree");
  if (p.size() != tree.nodes.size()) throw Error("verify_tree: need one target distribution per node");
  VerificationResult r;
  std::size_t cur = 0;
  bool fallback_seen = false;
  while (true) {
    const DraftNode& node = tree.nodes[cur];
    if (node.draws.empty()) {
      r.kind = CorrectionKind::Bonus;
      r.correction = temperature == 0.0 ? argmax(p[cur]) : sampler.categorical(p[cur]);
      return r;
    }
    std::size_t next = 0;
    if (temperature == 0.0) {
      const std::size_t best = argmax(p[cur]);
      for (std::size_t child : node.children) {
        const bool hit = tree.nodes[child].token == best;
        r.flags.push_back({child, tree.nodes[child].depth, tree.nodes[child].token, hit});
        if (hit) {
          next = child;
          break;
        }
      }
      if (next == 0) {
        r.kind = CorrectionKind::Resample;
        r.correction = best;
        return r;
      }
    } else {
      std::vector<double> residual = p[cur];
      for (std::size_t child : node.draws) {
        const std::size_t x = tree.nodes[child].token;
        const bool ok = sampler.bernoulli(acceptance_for_rule(residual.at(x), node.child_dist.at(x), rule));
        r.flags.push_back({child, tree.nodes[child].depth, x, ok});
        if (ok) {
          next = child;
          break;
        }
        if (rule != VerifyRule::ResampleFromTarget) {
          bool fb = false;
          residual = adjusted_distribution(residual, node.child_dist, &fb);
          fallback_seen = fallback_seen || fb;
        }
      }
      if (next == 0) {
        r.correction = sampler.categorical(residual);
        r.kind = fallback_seen ? CorrectionKind::Fallback : CorrectionKind::Resample;
        return r;
      }
    }
    r.accepted.push_back(tree.nodes[next].token);
    r.path.push_back(next);
    cur = next;
    fallback_seen = false;
  }
}

std::string to_string(DraftMode mode) { return mode == DraftMode::Chain ? "chain" : "tree"; }

DraftMode draft_mode_from_string(const std::string& s) {
  if (s == "chain") return DraftMode::Chain;
  if (s == "tree") return DraftMode::Tree;
  throw Error("unknown draft mode '" + s + "'");
}

nlohmann::json to_json(const CycleTrace& t) {
  nlohmann::json flags = nlohmann::json::array();
  for (const auto& f : t.flags) {
    flags.push_back({{"node", f.node}, {"depth", f.depth}, {"token", f.token}, {"accepted", f.accepted}});
  }
  return {{"cycle", t.cycle},
          {"mode", to_string(t.mode)},
          {"candidates", t.candidates},
          {"parents", t.parents},
          {"flags", flags},
          {"accepted", t.accepted},
          {"appended", t.appended},
          {"correction", to_string(t.correction)},
          {"correction_token", t.correction_token},
          {"truncated", t.truncated},
          {"draft_passes", t.draft_passes},
          {"draft_ms", t.draft_ms},
          {"verify_ms", t.verify_ms}};
}

CycleTrace cycle_trace_from_json(const nlohmann::json& j) {
  CycleTrace t;
  t.cycle = j.at("cycle").get<std::size_t>();
  t.mode = draft_mode_from_string(j.at("mode").get<std::string>());
  t.candidates = j.at("candidates").get<std::vector<std::size_t>>();
  t.parents = j.value("parents", std::vector<int>{});
  for (const auto& f : j.at("flags")) {
    t.flags.push_back({f.at("node").get<std::size_t>(), f.at("depth").get<std::size_t>(),
                       f.at("token").get<std::size_t>(), f.at("accepted").get<bool>()});
  }
  t.accepted = j.at("accepted").get<std::size_t>();
  t.appended = j.at("appended").get<std::size_t>();
  const auto kind = j.at("correction").get<std::string>();
  if (kind == "resample") t.correction = CorrectionKind::Resample;
  else if (kind == "bonus") t.correction = CorrectionKind::Bonus;
  else if (kind == "fallback") t.correction = CorrectionKind::Fallback;
  else throw Error("unknown correction kind '" + kind + "'");
  t.correction_token = j.at("correction_token").get<std::size_t>();
  t.truncated = j.value("truncated", false);
  t.draft_passes = j.value("draft_passes", std::size_t{0});
  t.draft_ms = j.value("draft_ms", 0.0);
  t.verify_ms = j.value("verify_ms", 0.0);
  return t;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

Proposal propose(DecodeSession& session, const GenerationConfig& config, Sampler& sampler) {
  session.sync();
  const std::size_t c = session.committed();
  const ModelConfig& mc = session.config();
  if (c >= mc.max_positions) throw Error("sequence exceeds max_positions (" + std::to_string(mc.max_positions) + ")");
  // Verification places candidates at positions c .. c-1+depth.
  const std::size_t depth_room = mc.max_positions - c;
  Proposal prop;
  prop.mode = config.mode;
  prop.committed = c;
  const auto t0 = Clock::now();
  if (config.mode == DraftMode::Chain) {
    const std::size_t gamma = std::min(config.gamma, depth_room);
    prop.chain = draft_chain(session, gamma, config.temperature, sampler);
    prop.draft_passes = prop.chain.forward_passes;
  } else {
    std::vector<std::size_t> plan = config.plan;
    if (plan.size() > depth_room) plan.resize(depth_room);
    prop.tree = draft_tree(session, plan, config.temperature, sampler);
    prop.draft_passes = prop.tree.forward_passes;
  }
  prop.draft_ms = elapsed_ms(t0);
  return prop;
}

std::vector<std::vector<double>> score_proposal(DecodeSession& session, const Proposal& prop, double temperature) {
  const std::size_t c = prop.committed;
  if (session.committed() != c || session.target_cache().length() != c - 1) {
    throw Error("score_proposal: session moved since the proposal was drafted");
  }
  const auto& seq = session.sequence();
  Matrix rows = seq.embeddings.select_rows(std::vector<std::size_t>{c - 1});
  std::vector<std::size_t> positions{c - 1};
  std::vector<Modality> mod{seq.modality[c - 1]};
  auto add = [&](std::size_t token, std::size_t depth) {
    rows.append_rows(session.target().token_embedding.select_rows(std::vector<std::size_t>{token}));
    positions.push_back(c - 1 + depth);
    mod.push_back(Modality::Text);
  };
  if (prop.mode == DraftMode::Chain) {
    for (std::size_t s = 0; s < prop.chain.tokens.size(); ++s) add(prop.chain.tokens[s], s + 1);
    const std::size_t n = rows.rows();
    return target_forward_rows(rows, positions, mod, AttentionMask::causal(n, c - 1 + n), session.target(),
                               session.config(), session.target_cache(), temperature)
        .distributions;
  }
  std::vector<int> parents{-1};
  for (std::size_t i = 1; i < prop.tree.nodes.size(); ++i) {
    add(prop.tree.nodes[i].token, prop.tree.nodes[i].depth);
    parents.push_back(prop.tree.nodes[i].parent);
  }
  return target_forward_rows(rows, positions, mod, AttentionMask::tree(c - 1, parents, parents.size()),
                             session.target(), session.config(), session.target_cache(), temperature)
      .distributions;
}

VerificationResult verify_proposal(const Proposal& prop, const std::vector<std::vector<double>>& p,
                                   const GenerationConfig& config, Sampler& sampler) {
  if (prop.mode == DraftMode::Chain) {
    return verify_chain(prop.chain.tokens, prop.chain.q, p, config.temperature, sampler, config.rule);
  }
  return verify_tree(prop.tree, p, config.temperature, sampler, config.rule);
}

std::vector<std::size_t> committed_block(const VerificationResult& vr, std::size_t budget) {
  std::vector<std::size_t> block = vr.appended();
  std::size_t cut = block.size();
  for (std::size_t i = 0; i < block.size(); ++i) {
    if (block[i] == kEosToken) {
      cut = i + 1;
      break;
    }
  }
  block.resize(std::min(cut, budget));
  return block;
}

CycleTrace commit_cycle(DecodeSession& session, const Proposal& prop, const VerificationResult& vr,
                        std::size_t budget) {
  const std::size_t c = prop.committed;
  TargetCache& tcache = session.target_cache();
  if (prop.mode == DraftMode::Chain) {
    tcache.truncate(c + vr.accepted_count());
  } else {
    std::vector<std::size_t> kept{c - 1};
    for (std::size_t n : vr.path) kept.push_back(c - 1 + n);
    tcache.compact(c - 1, kept);
  }
  CycleTrace trace;
  trace.mode = prop.mode;
  trace.draft_passes = prop.draft_passes;
  trace.draft_ms = prop.draft_ms;
  if (prop.mode == DraftMode::Chain) {
    trace.candidates = prop.chain.tokens;
  } else {
    for (std::size_t i = 1; i < prop.tree.nodes.size(); ++i) {
      trace.candidates.push_back(prop.tree.nodes[i].token);
      trace.parents.push_back(prop.tree.nodes[i].parent);
    }
  }
  trace.flags = vr.flags;
  trace.correction = vr.kind;
  trace.correction_token = vr.correction;
  const auto block = committed_block(vr, budget);
  trace.truncated = block.size() < vr.accepted_count() + 1;
  trace.appended = block.size();
  trace.accepted = std::min(vr.accepted_count(), block.size());
  session.commit(block);
  if (tcache.length() > session.committed() - 1) tcache.truncate(session.committed() - 1);
  return trace;
}

CycleTrace run_cycle(DecodeSession& session, const GenerationConfig& config, std::size_t budget, Sampler& sampler) {
  if (budget == 0) throw Error("run_cycle: zero token budget");
  const Proposal prop = propose(session, config, sampler);
  const auto t1 = Clock::now();
  const auto p = score_proposal(session, prop, config.temperature);
  const VerificationResult vr = verify_proposal(prop, p, config, sampler);
  const double verify_ms = elapsed_ms(t1);
  CycleTrace trace = commit_cycle(session, prop, vr, budget);
  trace.verify_ms = verify_ms;
  return trace;
}

GenerationResult speculative_generate(DecodeSession& session, const GenerationConfig& config, Sampler& sampler) {
  if (session.committed() + config.max_tokens > session.config().max_positions) {
    throw Error("prompt length + max_tokens exceeds max_positions");
  }
  GenerationResult result;
  const std::size_t start = session.committed();
  while (session.committed() - start < config.max_tokens) {
    CycleTrace trace = run_cycle(session, config, config.max_tokens - (session.committed() - start), sampler);
    trace.cycle = result.traces.size();
    result.traces.push_back(std::move(trace));
    if (session.sequence().tokens.back() == kEosToken) break;
  }
  const auto& toks = session.sequence().tokens;
  result.tokens.assign(toks.begin() + static_cast<std::ptrdiff_t>(start), toks.end());
  return result;
}

}  // namespace mmspec
