// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmspec/draft.hpp"
#include "mmspec/rng.hpp"
#include "mmspec/session.hpp"

namespace mmspec {

inline constexpr double kProbabilityFloor = 1e-300;
inline constexpr double kResidualMassFloor = 1e-12;

/// Standard is the only correct rule. The others are deliberately broken so
/// the losslessness certifier can show it detects a faulty verifier:
/// UncappedRatio accepts with p/q (no min with 1), ResampleFromTarget draws
/// corrections from p instead of the residual.
enum class VerifyRule { Standard, UncappedRatio, ResampleFromTarget };
std::string to_string(VerifyRule rule);
VerifyRule verify_rule_from_string(const std::string& s);

/// Acceptance probability under `rule`.
double acceptance_for_rule(double p, double q, VerifyRule rule);

/// min(1, p / q). Throws "candidate outside draft support" when q <= 0.
double acceptance_probability(double p, double q);

/// norm(max(0, p - q)). Falls back to p when the residual mass is below
/// kResidualMassFloor and reports it through `fallback`.
std::vector<double> adjusted_distribution(std::span<const double> p, std::span<const double> q,
                                          bool* fallback = nullptr);

enum class CorrectionKind { Resample, Bonus, Fallback };
std::string to_string(CorrectionKind kind);

struct CandidateFlag {
  std::size_t node = 0;   // chain: step + 1; tree: node index
  std::size_t depth = 0;  // distance from the root
  std::size_t token = 0;
  bool accepted = false;
};

struct VerificationResult {
  std::vector<std::size_t> accepted;  // accepted candidate tokens, root path order
  std::vector<std::size_t> path;      // accepted node indices (chain: 1..k)
  std::size_t correction = 0;
  CorrectionKind kind = CorrectionKind::Bonus;
  std::vector<CandidateFlag> flags;   // every candidate examined, in examination order

  std::size_t accepted_count() const { return accepted.size(); }
  std::vector<std::size_t> appended() const;
};

/// p holds gamma + 1 target distributions: p[s] scores candidate s, p[gamma]
/// supplies the bonus token.
VerificationResult verify_chain(std::span<const std::size_t> candidates, const std::vector<std::vector<double>>& q,
                                const std::vector<std::vector<double>>& p, double temperature, Sampler& sampler,
                                VerifyRule rule = VerifyRule::Standard);

/// p[n] is the target distribution after node n (p[0] after the root).
VerificationResult verify_tree(const DraftTree& tree, const std::vector<std::vector<double>>& p, double temperature,
                               Sampler& sampler, VerifyRule rule = VerifyRule::Standard);

enum class DraftMode { Chain, Tree };
std::string to_string(DraftMode mode);
DraftMode draft_mode_from_string(const std::string& s);

struct GenerationConfig {
  DraftMode mode = DraftMode::Tree;
  std::size_t gamma = 4;
  std::vector<std::size_t> plan{4, 2, 2, 1, 1};
  double temperature = 0.0;
  std::size_t max_tokens = 32;
  VerifyRule rule = VerifyRule::Standard;
};

struct CycleTrace {
  std::size_t cycle = 0;
  DraftMode mode = DraftMode::Chain;
  std::vector<std::size_t> candidates;  // chain order, or tree nodes breadth-first (root excluded)
  std::vector<int> parents;             // tree only: parent node index per candidate (0 = root)
  std::vector<CandidateFlag> flags;
  std::size_t accepted = 0;             // accepted candidates kept in the output
  std::size_t appended = 0;             // tokens committed this cycle
  CorrectionKind correction = CorrectionKind::Bonus;
  std::size_t correction_token = 0;
  bool truncated = false;               // block cut by EOS or the token limit
  std::size_t draft_passes = 0;
  double draft_ms = 0.0;
  double verify_ms = 0.0;
};

nlohmann::json to_json(const CycleTrace& trace);
CycleTrace cycle_trace_from_json(const nlohmann::json& j);

/// The phases of one cycle, exposed separately for the certifier.
struct Proposal {
  DraftMode mode = DraftMode::Chain;
  std::size_t committed = 0;  // session length when drafted
  DraftChain chain;
  DraftTree tree;
  std::size_t draft_passes = 0;
  double draft_ms = 0.0;
};

/// Drafts candidates from the session's root. Depth is trimmed so every
/// candidate position fits within max_positions.
Proposal propose(DecodeSession& session, const GenerationConfig& config, Sampler& sampler);
/// One target forward over root + candidates; returns p per verified row
/// (chain: gamma + 1 rows; tree: one per node). Extends the target cache.
std::vector<std::vector<double>> score_proposal(DecodeSession& session, const Proposal& prop, double temperature);
VerificationResult verify_proposal(const Proposal& prop, const std::vector<std::vector<double>>& p,
                                   const GenerationConfig& config, Sampler& sampler);
/// Accepted tokens plus correction, cut after the first EOS and at `budget`.
std::vector<std::size_t> committed_block(const VerificationResult& vr, std::size_t budget);
/// Rolls the target cache back to the accepted path and commits the block.
CycleTrace commit_cycle(DecodeSession& session, const Proposal& prop, const VerificationResult& vr,
                        std::size_t budget);

/// One draft -> verify -> commit cycle. At most `budget` tokens are committed.
/// EOS ends the block (and is committed).
CycleTrace run_cycle(DecodeSession& session, const GenerationConfig& config, std::size_t budget, Sampler& sampler);

struct GenerationResult {
  std::vector<std::size_t> tokens;
  std::vector<CycleTrace> traces;
};

/// Repeats cycles until EOS or config.max_tokens. Requires prompt length +
/// max_tokens <= max_positions.
GenerationResult speculative_generate(DecodeSession& session, const GenerationConfig& config, Sampler& sampler);

}  // namespace mmspec
