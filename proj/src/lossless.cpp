// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/lossless.hpp"

#include <chrono>
#include <cmath>

namespace mmspec {

std::size_t EnumerationSampler::take(std::vector<std::pair<std::size_t, double>> options) {
  if (pos_ == trail_.size()) {
    if (options.empty()) throw Error("EnumerationSampler: no outcome with nonzero probability");
    trail_.push_back({std::move(options), 0});
  }
  const Choice& c = trail_[pos_++];
  weight_ *= c.options[c.index].second;
  return c.options[c.index].first;
}

std::size_t EnumerationSampler::categorical(std::span<const double> dist) {
  std::vector<std::pair<std::size_t, double>> options;
  if (pos_ == trail_.size()) {
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (dist[i] < 0.0) violation_ = true;
      if (dist[i] != 0.0) options.emplace_back(i, dist[i]);
    }
  }
  return take(std::move(options));
}

bool EnumerationSampler::bernoulli(double p_true) {
  std::vector<std::pair<std::size_t, double>> options;
  if (pos_ == trail_.size()) {
    if (p_true < 0.0 || p_true > 1.0) violation_ = true;
    if (p_true != 0.0) options.emplace_back(1, p_true);
    if (p_true != 1.0) options.emplace_back(0, 1.0 - p_true);
  }
  return take(std::move(options)) == 1;
}

bool EnumerationSampler::advance() {
  pos_ = 0;
  weight_ = 1.0;
  while (!trail_.empty()) {
    Choice& c = trail_.back();
    if (++c.index < c.options.size()) return true;
    trail_.pop_back();
  }
  return false;
}

double total_variation(const OutputDistribution& a, const OutputDistribution& b) {
  double sum = 0.0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    sum += std::abs(v - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : b) {
    if (!a.contains(k)) sum += std::abs(v);
  }
  return 0.5 * sum;
}

namespace {

bool finished(const std::vector<std::size_t>& out, std::size_t max_len) {
  return out.size() >= max_len || (!out.empty() && out.back() == kEosToken);
}

void ar_expand(AssembledSequence& seq, std::vector<std::size_t>& out, double prob, const TargetParams& target,
               const ModelConfig& config, double temperature, std::size_t max_len, OutputDistribution& result) {
  if (finished(out, max_len)) {
    result[out] += prob;
    return;
  }
  TargetCache fresh;
  const auto outputs = target_forward(seq, target, config, fresh, {temperature, false});
  const std::vector<double> dist = outputs.distributions.back();
  const std::size_t n = seq.size();
  for (std::size_t t = 0; t < dist.size(); ++t) {
    if (dist[t] == 0.0) continue;
    seq.append_text(t, target);
    out.push_back(t);
    ar_expand(seq, out, prob * dist[t], target, config, temperature, max_len, result);
    out.pop_back();
    seq.truncate(n);
  }
}

class SpeculativeEnumerator {
 public:
  SpeculativeEnumerator(const GenerationConfig& gen, std::size_t max_len) : gen_(gen), max_len_(max_len) {}

  const OutputDistribution& expand(const DecodeSession& s) {
    const auto out = s.generated();
    if (auto it = memo_.find(out); it != memo_.end()) return it->second;
    OutputDistribution result;
    if (finished(out, max_len_)) {
      result[out] = 1.0;
      return memo_.emplace(out, std::move(result)).first->second;
    }
    const std::size_t budget = max_len_ - out.size();
    std::map<std::vector<std::size_t>, double> blocks;
    EnumerationSampler draft_sampler;
    do {
      DecodeSession work = s;
      const Proposal prop = propose(work, gen_, draft_sampler);
      const double w_draft = draft_sampler.weight();
      const auto p = score_proposal(work, prop, gen_.temperature);
      EnumerationSampler verify_sampler;
      do {
        const auto vr = verify_proposal(prop, p, gen_, verify_sampler);
        blocks[committed_block(vr, budget)] += w_draft * verify_sampler.weight();
      } while (verify_sampler.advance());
      violation_ = violation_ || verify_sampler.probability_violation();
    } while (draft_sampler.advance());
    violation_ = violation_ || draft_sampler.probability_violation();

    for (const auto& [block, w] : blocks) {
      DecodeSession child = s;
      child.commit(block);
      child.sync();
      for (const auto& [seq, pr] : expand(child)) result[seq] += w * pr;
    }
    return memo_.emplace(out, std::move(result)).first->second;
  }

  bool violation() const { return violation_; }

 private:
  const GenerationConfig& gen_;
  std::size_t max_len_;
  std::map<std::vector<std::size_t>, OutputDistribution> memo_;
  bool violation_ = false;
};

}  // namespace

OutputDistribution autoregressive_distribution(const AssembledSequence& prompt, const TargetParams& target,
                                               const ModelConfig& config, double temperature, std::size_t max_len) {
  OutputDistribution result;
  AssembledSequence seq = prompt;
  std::vector<std::size_t> out;
  ar_expand(seq, out, 1.0, target, config, temperature, max_len, result);
  return result;
}

OutputDistribution speculative_distribution(const AssembledSequence& prompt, const TargetParams& target,
                                            const DraftParams& draft, const ModelConfig& config,
                                            const GenerationConfig& gen, std::size_t max_len,
                                            bool* probability_violation) {
  SpeculativeEnumerator e(gen, max_len);
  const DecodeSession root(target, draft, config, prompt);
  OutputDistribution result = e.expand(root);
  if (probability_violation != nullptr) *probability_violation = e.violation();
  return result;
}

TinyModels make_tiny_models(std::uint64_t seed, std::size_t vocab, FusionMode fusion) {
  TinyModels m;
  m.config.vocab = vocab;
  m.config.dim = 8;
  m.config.heads = 2;
  m.config.target_depth = 2;
  m.config.vision_depth = 1;
  m.config.patch_dim = 4;
  m.config.grid_side = 1;
  m.config.mlp_hidden = 16;
  m.config.max_positions = 12;
  m.config.seed = seed;
  const RngState root(seed);
  m.target = init_target(m.config, root.derive("target"));
  // Sharper heads give a mix of peaked and flat distributions.
  for (double& v : m.target.lm_head.data()) v *= 2.5;
  m.draft = init_draft(m.config, fusion, root.derive("draft"));
  RngState prompt_rng = root.derive("prompt");
  ImagePatchGrid grid;
  grid.side = 1;
  grid.patches = Matrix(1, m.config.patch_dim);
  for (double& v : grid.patches.data()) v = prompt_rng.normal();
  const std::size_t sys[] = {1 + prompt_rng.below(vocab - 1)};
  const std::size_t ins[] = {1 + prompt_rng.below(vocab - 1)};
  m.prompt = assemble_sequence(make_tokens(sys, TextRole::System), &grid, make_tokens(ins, TextRole::Instruction),
                               m.target, m.config);
  return m;
}

std::vector<LosslessInstance> default_lossless_grid(std::uint64_t seed, std::size_t seeds_per_cell) {
  std::vector<LosslessInstance> grid;
  std::uint64_t k = 0;
  for (std::size_t vocab : {4, 5, 6}) {
    for (double temperature : {0.7, 1.0}) {
      for (int shape = 0; shape < 3; ++shape) {
        for (std::size_t r = 0; r < seeds_per_cell; ++r, ++k) {
          LosslessInstance inst;
          inst.seed = mix64(seed ^ (k + 1));
          inst.vocab = vocab;
          inst.temperature = temperature;
          inst.mode = shape == 2 ? DraftMode::Tree : DraftMode::Chain;
          inst.gamma = shape == 0 ? 1 : 2;
          inst.plan = {2, 1};
          inst.fusion = k % 2 == 0 ? FusionMode::Decoupled : FusionMode::BaselineConcat;
          inst.max_len = 3;
          grid.push_back(inst);
        }
      }
    }
  }
  return grid;
}

InstanceResult certify_instance(const LosslessInstance& instance, VerifyRule rule, double tolerance) {
  const TinyModels m = make_tiny_models(instance.seed, instance.vocab, instance.fusion);
  GenerationConfig gen;
  gen.mode = instance.mode;
  gen.gamma = instance.gamma;
  gen.plan = instance.plan;
  gen.temperature = instance.temperature;
  gen.max_tokens = instance.max_len;
  gen.rule = rule;
  InstanceResult r;
  r.instance = instance;
  const auto reference = autoregressive_distribution(m.prompt, m.target, m.config, instance.temperature,
                                                     instance.max_len);
  const auto spec = speculative_distribution(m.prompt, m.target, m.draft, m.config, gen, instance.max_len,
                                             &r.probability_violation);
  r.tv = total_variation(reference, spec);
  r.outcomes = reference.size();
  r.passed = r.tv <= tolerance && !r.probability_violation;
  return r;
}

CertificationReport certify_grid(const std::vector<LosslessInstance>& grid, VerifyRule rule, double tolerance) {
  const auto t0 = std::chrono::steady_clock::now();
  CertificationReport report;
  report.rule = rule;
  report.tolerance = tolerance;
  report.passed = !grid.empty();
  for (const auto& inst : grid) {
    report.results.push_back(certify_instance(inst, rule, tolerance));
    report.max_tv = std::max(report.max_tv, report.results.back().tv);
    report.passed = report.passed && report.results.back().passed;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

nlohmann::json to_json(const CertificationReport& report) {
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& r : report.results) {
    const auto& i = r.instance;
    instances.push_back({{"seed", i.seed},
                         {"vocab", i.vocab},
                         {"temperature", i.temperature},
                         {"mode", to_string(i.mode)},
                         {"gamma", i.gamma},
                         {"plan", i.plan},
                         {"fusion", to_string(i.fusion)},
                         {"max_len", i.max_len},
                         {"tv", r.tv},
                         {"outcomes", r.outcomes},
                         {"probability_violation", r.probability_violation},
                         {"passed", r.passed}});
  }
  return {{"rule", to_string(report.rule)},
          {"tolerance", report.tolerance},
          {"instance_count", report.results.size()},
          {"max_tv", report.max_tv},
          {"passed", report.passed},
          {"instances", instances}};
}

}  // namespace mmspec
