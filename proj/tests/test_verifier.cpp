// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <map>

#include "mmspec/kernels.hpp"
#include "mmspec/lossless.hpp"
#include "mmspec/verifier.hpp"
#include "test_util.hpp"

using namespace mmspec;
using mmspec::testing::case_rng;
using mmspec::testing::random_distribution;

using Table = std::vector<std::vector<double>>;  // row = previous token

TEST(Acceptance, Examples) {
  EXPECT_DOUBLE_EQ(acceptance_probability(0.3, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(acceptance_probability(0.1, 0.4), 0.25);
  EXPECT_DOUBLE_EQ(acceptance_probability(0.5, 0.2), 1.0);
  EXPECT_DOUBLE_EQ(acceptance_probability(0.0, 0.2), 0.0);
}

TEST(Acceptance, OutsideDraftSupportThrows) {
  try {
    acceptance_probability(0.2, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("candidate outside draft support"), std::string::npos);
  }
  EXPECT_THROW(acceptance_probability(0.2, -0.1), Error);
}

TEST(Acceptance, RuleVariants) {
  EXPECT_DOUBLE_EQ(acceptance_for_rule(0.5, 0.2, VerifyRule::Standard), 1.0);
  EXPECT_DOUBLE_EQ(acceptance_for_rule(0.5, 0.2, VerifyRule::UncappedRatio), 2.5);
  EXPECT_EQ(verify_rule_from_string(to_string(VerifyRule::ResampleFromTarget)), VerifyRule::ResampleFromTarget);
}

TEST(AdjustedDistribution, Examples) {
  const std::vector<double> a{0.5, 0.5}, qa{1.0, 0.0};
  EXPECT_EQ(adjusted_distribution(a, qa), (std::vector<double>{0.0, 1.0}));

  bool fb = false;
  const std::vector<double> b{0.7, 0.3};
  EXPECT_EQ(adjusted_distribution(b, b, &fb), b);
  EXPECT_TRUE(fb);

  fb = true;
  const std::vector<double> c{0.6, 0.2, 0.2}, qc{0.2, 0.6, 0.2};
  const auto r = adjusted_distribution(c, qc, &fb);
  EXPECT_FALSE(fb);
  EXPECT_NEAR(r[0], 1.0, 1e-15);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 0.0);
}

TEST(VerifyChain, GreedyAcceptsExactMatchesOnly) {
  // argmax of p per position: 2, 0, 1, 1, 0
  const Table p{{0.1, 0.2, 0.7}, {0.8, 0.1, 0.1}, {0.2, 0.5, 0.3}, {0.1, 0.6, 0.3}, {0.9, 0.05, 0.05}};
  const Table q(4, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  RngState rng(1);
  RngSampler s(rng);

  const std::vector<std::size_t> all{2, 0, 1, 1};
  const auto full = verify_chain(all, q, p, 0.0, s);
  EXPECT_EQ(full.accepted, all);
  EXPECT_EQ(full.kind, CorrectionKind::Bonus);
  EXPECT_EQ(full.correction, 0u);
  EXPECT_EQ(full.appended().size(), 5u);

  const std::vector<std::size_t> miss{2, 1, 1, 1};
  const auto part = verify_chain(miss, q, p, 0.0, s);
  EXPECT_EQ(part.accepted, (std::vector<std::size_t>{2}));
  EXPECT_EQ(part.kind, CorrectionKind::Resample);
  EXPECT_EQ(part.correction, 0u);
  EXPECT_EQ(part.flags.size(), 2u);
  EXPECT_FALSE(part.flags.back().accepted);
}

TEST(VerifyChain, AllAcceptedAppendsBonus) {
  const std::vector<double> same{0.25, 0.25, 0.25, 0.25};
  const Table q(4, same), p(5, same);
  RngState rng(2);
  RngSampler s(rng);
  const std::vector<std::size_t> c{0, 1, 2, 3};
  const auto r = verify_chain(c, q, p, 1.0, s);
  EXPECT_EQ(r.accepted_count(), 4u);
  EXPECT_EQ(r.appended().size(), 5u);
  EXPECT_EQ(r.kind, CorrectionKind::Bonus);
}

namespace {

// Markov "models": next-token law depends only on the previous token.
struct Markov {
  Table p;
  Table q;
};

Markov random_markov(std::size_t vocab, RngState& rng) {
  Markov m;
  for (std::size_t i = 0; i < vocab; ++i) {
    m.p.push_back(random_distribution(vocab, rng));
    m.q.push_back(random_distribution(vocab, rng));
  }
  return m;
}

std::map<std::vector<std::size_t>, double> reference_law(const Markov& m, std::size_t root, std::size_t len) {
  std::map<std::vector<std::size_t>, double> out{{{}, 1.0}};
  for (std::size_t step = 0; step < len; ++step) {
    std::map<std::vector<std::size_t>, double> next;
    for (const auto& [seq, w] : out) {
      const std::size_t prev = seq.empty() ? root : seq.back();
      for (std::size_t x = 0; x < m.p[prev].size(); ++x) {
        auto s = seq;
        s.push_back(x);
        next[s] += w * m.p[prev][x];
      }
    }
    out = std::move(next);
  }
  return out;
}

std::vector<std::size_t> chain_cycle(const Markov& m, std::size_t root, std::size_t gamma, Sampler& s) {
  std::vector<std::size_t> cand;
  Table q, p;
  std::size_t prev = root;
  for (std::size_t i = 0; i < gamma; ++i) {
    q.push_back(m.q[prev]);
    p.push_back(m.p[prev]);
    cand.push_back(s.categorical(m.q[prev]));
    prev = cand.back();
  }
  p.push_back(m.p[prev]);
  return verify_chain(cand, q, p, 1.0, s).appended();
}

DraftTree markov_tree(const Markov& m, std::size_t root, std::span<const std::size_t> plan, Sampler& s) {
  DraftTree t;
  t.plan.assign(plan.begin(), plan.end());
  t.nodes.push_back({root, -1, 0, 1.0, {}, {}, {}});
  std::vector<std::size_t> level{0};
  for (std::size_t k : plan) {
    std::vector<std::size_t> next;
    for (std::size_t n : level) {
      const auto dist = m.q[t.nodes[n].token];
      t.nodes[n].child_dist = dist;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t x = s.categorical(dist);
        std::size_t idx = 0;
        for (std::size_t c : t.nodes[n].children) {
          if (t.nodes[c].token == x) idx = c;
        }
        if (idx == 0) {
          idx = t.nodes.size();
          t.nodes.push_back({x, static_cast<int>(n), t.nodes[n].depth + 1, dist[x], {}, {}, {}});
          t.nodes[n].children.push_back(idx);
          next.push_back(idx);
        }
        t.nodes[n].draws.push_back(idx);
      }
    }
    level = std::move(next);
  }
  return t;
}

std::vector<std::size_t> tree_cycle(const Markov& m, std::size_t root, std::span<const std::size_t> plan,
                                    Sampler& s) {
  const DraftTree t = markov_tree(m, root, plan, s);
  Table p;
  for (const auto& n : t.nodes) p.push_back(m.p[n.token]);
  return verify_tree(t, p, 1.0, s).appended();
}

// Two speculative cycles always yield >= 2 tokens; compares the law of the
// first two against plain sampling by enumerating every outcome.
template <class Cycle>
double two_token_tv(const Markov& m, std::size_t root, Cycle cycle) {
  std::map<std::vector<std::size_t>, double> law;
  EnumerationSampler s;
  do {
    auto out = cycle(root, s);
    const auto more = cycle(out.back(), s);
    out.insert(out.end(), more.begin(), more.end());
    out.resize(2);
    law[out] += s.weight();
  } while (s.advance());
  return total_variation(law, reference_law(m, root, 2));
}

}  // namespace

TEST(VerifyChain, EnumeratedBlockLawMatchesTarget) {
  for (std::size_t k = 0; k < 20; ++k) {
    RngState rng = case_rng(808, k);
    const Markov m = random_markov(3, rng);
    const double tv =
        two_token_tv(m, 0, [&](std::size_t r, Sampler& s) { return chain_cycle(m, r, 2, s); });
    EXPECT_LT(tv, 1e-12) << "case " << k;
  }
}

TEST(VerifyTree, EnumeratedBlockLawMatchesTarget) {
  const std::vector<std::size_t> plan{2, 1};
  for (std::size_t k = 0; k < 10; ++k) {
    RngState rng = case_rng(909, k);
    const Markov m = random_markov(3 + k % 2, rng);
    const double tv = two_token_tv(m, 1, [&](std::size_t r, Sampler& s) { return tree_cycle(m, r, plan, s); });
    EXPECT_LT(tv, 1e-12) << "case " << k;
  }
}

TEST(VerifyTree, CorruptedRuleIsDetectedByEnumeration) {
  RngState rng = case_rng(910, 0);
  const Markov m = random_markov(3, rng);
  const std::vector<std::size_t> plan{2, 1};
  const double tv = two_token_tv(m, 1, [&](std::size_t r, Sampler& s) {
    const DraftTree t = markov_tree(m, r, plan, s);
    Table p;
    for (const auto& n : t.nodes) p.push_back(m.p[n.token]);
    return verify_tree(t, p, 1.0, s, VerifyRule::ResampleFromTarget).appended();
  });
  EXPECT_GT(tv, 1e-3);
}

TEST(VerifyTree, SingleBranchMatchesChain) {
  for (std::size_t k = 0; k < 50; ++k) {
    RngState rng = case_rng(911, k);
    const Markov m = random_markov(4, rng);
    const std::vector<std::size_t> plan{1, 1};
    RngState draw(k);
    RngSampler ds(draw);
    const DraftTree t = markov_tree(m, 0, plan, ds);
    Table p, q;
    for (const auto& n : t.nodes) p.push_back(m.p[n.token]);
    q.push_back(t.nodes[0].child_dist);
    q.push_back(t.nodes[1].child_dist);
    const std::vector<std::size_t> cand{t.nodes[1].token, t.nodes[2].token};
    RngState r1(100 + k), r2(100 + k);
    RngSampler s1(r1), s2(r2);
    const auto a = verify_tree(t, p, 1.0, s1);
    const auto b = verify_chain(cand, q, p, 1.0, s2);
    EXPECT_EQ(a.appended(), b.appended()) << "case " << k;
  }
}

TEST(VerifyTree, GreedyDescendsIntoArgmaxChild) {
  DraftTree t;
  t.nodes.push_back({0, -1, 0, 1.0, {0.5, 0.5, 0.0}, {1, 2}, {1, 2}});
  t.nodes.push_back({0, 0, 1, 0.5, {}, {}, {}});  // a
  t.nodes.push_back({1, 0, 1, 0.5, {}, {}, {}});  // b
  const Table p{{0.2, 0.7, 0.1}, {1, 0, 0}, {0.1, 0.1, 0.8}};
  RngState rng(3);
  RngSampler s(rng);
  const auto r = verify_tree(t, p, 0.0, s);
  EXPECT_EQ(r.path, (std::vector<std::size_t>{2}));
  EXPECT_EQ(r.appended(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(r.kind, CorrectionKind::Bonus);
}

TEST(VerifyTree, GreedyNoMatchCorrectsToArgmax) {
  DraftTree t;
  t.nodes.push_back({0, -1, 0, 1.0, {0.5, 0.5, 0.0}, {1, 2}, {1, 2}});
  t.nodes.push_back({0, 0, 1, 0.5, {}, {}, {}});
  t.nodes.push_back({1, 0, 1, 0.5, {}, {}, {}});
  const Table p{{0.1, 0.1, 0.8}, {1, 0, 0}, {1, 0, 0}};
  RngState rng(4);
  RngSampler s(rng);
  const auto r = verify_tree(t, p, 0.0, s);
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_EQ(r.correction, 2u);
}

// Greedy speculative decoding reproduces plain target decoding for random
// weights, prompts and draft shapes.
TEST(Generation, GreedyMatchesAutoregressive) {
  std::size_t checked = 0;
  for (std::size_t k = 0; k < 200; ++k) {
    RngState rng = case_rng(1001, k);
    const ModelConfig c = mmspec::testing::small_config(rng);
    const TargetParams t = init_target(c, rng.derive("target"));
    const FusionMode fusion = rng.below(2) ? FusionMode::Decoupled : FusionMode::BaselineConcat;
    const DraftParams d = init_draft(c, fusion, rng.derive("draft"));
    const auto prompt = mmspec::testing::random_prompt(t, c, rng, rng.below(2) == 1);
    GenerationConfig g;
    g.temperature = 0.0;
    g.mode = rng.below(2) ? DraftMode::Chain : DraftMode::Tree;
    g.gamma = 1 + rng.below(4);
    g.plan = {1 + rng.below(3), 1 + rng.below(2), 1};
    g.max_tokens = 1 + rng.below(std::min<std::size_t>(12, c.max_positions - prompt.size()));
    RngState r1(k), r2(k);
    RngSampler s1(r1), s2(r2);
    const auto ref = autoregressive_generate(prompt, t, c, 0.0, g.max_tokens, s1);
    DecodeSession session(t, d, c, prompt);
    const auto spec = speculative_generate(session, g, s2);
    ASSERT_EQ(spec.tokens, ref) << "case " << k;
    ASSERT_LE(spec.tokens.size(), g.max_tokens);
    ++checked;
  }
  EXPECT_EQ(checked, 200u);
}

TEST(Generation, TokenLimitTruncatesMidCycle) {
  RngState rng(12);
  ModelConfig c = mmspec::testing::small_config(rng);
  const TargetParams t = init_target(c, rng.derive("t"));
  const DraftParams d = init_draft(c, FusionMode::Decoupled, rng.derive("d"));
  const auto prompt = mmspec::testing::random_prompt(t, c, rng, false);
  GenerationConfig g;
  g.mode = DraftMode::Chain;
  g.gamma = 4;
  g.max_tokens = 2;
  RngState r(1);
  RngSampler s(r);
  DecodeSession session(t, d, c, prompt);
  const auto out = speculative_generate(session, g, s);
  EXPECT_LE(out.tokens.size(), 2u);
  std::size_t sum = 0;
  for (const auto& tr : out.traces) sum += tr.appended;
  EXPECT_EQ(sum, out.tokens.size());
}

TEST(Generation, CycleTraceJsonRoundTrip) {
  CycleTrace tr;
  tr.cycle = 3;
  tr.mode = DraftMode::Tree;
  tr.candidates = {1, 2, 3};
  tr.parents = {0, 0, 1};
  tr.flags = {{1, 1, 1, false}, {2, 1, 2, true}};
  tr.accepted = 1;
  tr.appended = 2;
  tr.correction = CorrectionKind::Resample;
  tr.correction_token = 4;
  tr.draft_passes = 2;
  const CycleTrace back = cycle_trace_from_json(to_json(tr));
  EXPECT_EQ(to_json(back), to_json(tr));
}
