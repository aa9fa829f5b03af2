// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmspec/kernels.hpp"
#include "mmspec/optim.hpp"
#include "mmspec/pretrain.hpp"
#include "mmspec/target.hpp"

namespace mmspec {

using ad::Tape;
using ad::Var;

std::vector<std::size_t> loss_positions(const AssembledSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = seq.system_end; i + 1 < seq.size(); ++i) {
    if (seq.modality[i] == Modality::Text) out.push_back(i);
  }
  return out;
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

void fill_teacher_tokens(TrainExample& te, const Matrix& logits) {
  te.teacher_tokens.resize(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) te.teacher_tokens[i] = argmax_row(logits.row(i));
}

}  // namespace

TrainExample make_train_example(const InstructionExample& ex, const TargetParams& target, const ModelConfig& config) {
  TrainExample te;
  te.seq = assemble_full(ex, target, config);
  TargetCache cache;
  const auto out = target_forward(te.seq, target, config, cache);
  te.hidden = out.hidden;
  fill_teacher_tokens(te, out.logits);
  te.loss_positions = loss_positions(te.seq);
  return te;
}

std::vector<TrainExample> make_train_examples(const std::vector<InstructionExample>& corpus,
                                              const TargetParams& target, const ModelConfig& config) {
  std::vector<TrainExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) out.push_back(make_train_example(ex, target, config));
  return out;
}

namespace {

constexpr char kCacheMagic[8] = {'M', 'M', 'S', 'P', 'T', 'C', 'H', '1'};

std::uint64_t teacher_key(const std::vector<InstructionExample>& corpus, const TargetParams& target,
                          const ModelConfig& config) {
  std::uint64_t h = fingerprint(target);
  for (std::uint64_t v : {config.vocab, config.dim, config.heads, config.target_depth, config.vision_depth,
                          config.patch_dim, config.grid_side, config.mlp_hidden, config.max_positions}) {
    h = mix64(h ^ v);
  }
  for (const auto& ex : corpus) h = hash_string(to_json(ex).dump(), h);
  return h;
}

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool get(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

std::vector<TrainExample> cached_train_examples(const std::filesystem::path& cache_file,
                                                const std::vector<InstructionExample>& corpus,
                                                const TargetParams& target, const ModelConfig& config) {
  const std::uint64_t key = teacher_key(corpus, target, config);
  if (std::ifstream is{cache_file, std::ios::binary}) {
    char magic[8];
    std::uint64_t stored = 0, count = 0;
    is.read(magic, sizeof magic);
    if (is && std::memcmp(magic, kCacheMagic, sizeof magic) == 0 && get(is, stored) && stored == key &&
        get(is, count) && count == corpus.size()) {
      std::vector<TrainExample> out;
      out.reserve(count);
      bool ok = true;
      for (std::size_t k = 0; k < count && ok; ++k) {
        TrainExample te;
        te.seq = assemble_full(corpus[k], target, config);
        std::uint64_t rows = 0;
        ok = get(is, rows) && rows == te.seq.size();
        if (!ok) break;
        te.hidden = Matrix(rows, config.dim);
        is.read(reinterpret_cast<char*>(te.hidden.data().data()),
                static_cast<std::streamsize>(te.hidden.size() * sizeof(double)));
        te.teacher_tokens.resize(rows);
        for (std::size_t i = 0; i < rows && is; ++i) {
          std::uint32_t t = 0;
          get(is, t);
          te.teacher_tokens[i] = t;
        }
        ok = static_cast<bool>(is);
        te.loss_positions = loss_positions(te.seq);
        out.push_back(std::move(te));
      }
      if (ok) return out;
    }
  }
  auto out = make_train_examples(corpus, target, config);
  if (cache_file.has_parent_path()) std::filesystem::create_directories(cache_file.parent_path());
  std::ofstream os(cache_file, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write teacher cache " + cache_file.string());
  os.write(kCacheMagic, sizeof kCacheMagic);
  put<std::uint64_t>(os, key);
  put<std::uint64_t>(os, out.size());
  for (const auto& te : out) {
    put<std::uint64_t>(os, te.hidden.rows());
    os.write(reinterpret_cast<const char*>(te.hidden.data().data()),
             static_cast<std::streamsize>(te.hidden.size() * sizeof(double)));
    for (std::size_t t : te.teacher_tokens) put<std::uint32_t>(os, static_cast<std::uint32_t>(t));
  }
  if (!os) throw Error("failed writing teacher cache " + cache_file.string());
  return out;
}

DraftVars bind_draft(Tape& t, const DraftParams& params, bool trainable) {
  DraftVars v;
  params.for_each([&](const std::string&, const Matrix& m) { v.flat.push_back(trainable ? t.leaf(m) : t.constant(m)); });
  if (v.flat.size() != 14) throw Error("bind_draft: parameter layout mismatch");
  v.fuse_w = v.flat[0];
  v.fuse_b = v.flat[1];
  v.block = ad::BlockVars{v.flat[2], v.flat[3], v.flat[4],  v.flat[5],  v.flat[6],  v.flat[7],
                          v.flat[8], v.flat[9], v.flat[10], v.flat[11], v.flat[12], v.flat[13]};
  return v;
}

Var draft_tape_features(Tape& t, const DraftVars& v, const TrainExample& ex, FusionMode mode,
                        const ModelConfig& config) {
  const std::size_t len = ex.seq.size();
  if (len < 2) throw Error("draft_tape_features: sequence needs at least two positions");
  if (ex.hidden.rows() != len) throw Error("draft_tape_features: teacher hidden states do not cover the sequence");
  const std::size_t n = len - 1;
  std::vector<std::size_t> own(n), next(n);
  std::iota(own.begin(), own.end(), 0);
  std::iota(next.begin(), next.end(), 1);
  const Var h = t.constant(ex.hidden.select_rows(own));
  const Var e_next = t.constant(ex.seq.embeddings.select_rows(next));
  Var x = ad::add_bias(t, ad::matmul(t, ad::concat_cols(t, h, e_next), v.fuse_w), v.fuse_b);
  if (mode == FusionMode::Decoupled && ex.seq.visual_count() > 0) {
    std::vector<bool> take_fused(n);
    for (std::size_t i = 0; i < n; ++i) take_fused[i] = ex.seq.modality[i] == Modality::Text;
    x = ad::choose_rows(t, x, t.constant(ex.seq.embeddings.select_rows(own)), std::move(take_fused));
  }
  return ad::block(t, v.block, x, AttentionMask::causal(n), config.heads);
}

Var draft_loss(Tape& t, const DraftVars& v, const TrainExample& ex, const TargetParams& target,
               const ModelConfig& config, FusionMode mode, double ce_weight) {
  if (ex.loss_positions.empty()) throw Error("draft_loss: no scored positions in the example");
  const Var features = draft_tape_features(t, v, ex, mode, config);
  std::vector<std::size_t> succ;
  std::vector<std::size_t> tokens;
  for (std::size_t i : ex.loss_positions) {
    succ.push_back(i + 1);
    tokens.push_back(ex.teacher_tokens.at(i + 1));
  }
  const Var pred = ad::select_rows(t, features, ex.loss_positions);
  const Var reg = ad::smooth_l1(t, pred, ex.hidden.select_rows(succ));
  const Var logits = ad::matmul(t, pred, t.constant(target.lm_head));
  const Var ce = ad::cross_entropy(t, logits, tokens);
  return ad::add(t, reg, ad::scale(t, ce, ce_weight));
}

LossAndGrads draft_loss_and_grads(const DraftParams& draft, const TrainExample& ex, const TargetParams& target,
                                  const ModelConfig& config, double ce_weight) {
  Tape tape;
  const DraftVars vars = bind_draft(tape, draft, true);
  const Var loss = draft_loss(tape, vars, ex, target, config, draft.mode, ce_weight);
  tape.backward(loss);
  LossAndGrads out;
  out.loss = tape.value(loss)(0, 0);
  for (Var p : vars.flat) out.grads.push_back(tape.grad(p));
  return out;
}

double mean_draft_loss(const DraftParams& draft, const std::vector<TrainExample>& examples,
                       const TargetParams& target, const ModelConfig& config, double ce_weight) {
  if (examples.empty()) throw Error("mean_draft_loss: no examples");
  double sum = 0.0;
  for (const auto& ex : examples) {
    Tape tape;
    const DraftVars vars = bind_draft(tape, draft, false);
    sum += tape.value(draft_loss(tape, vars, ex, target, config, draft.mode, ce_weight))(0, 0);
  }
  return sum / static_cast<double>(examples.size());
}

std::pair<double, double> mix_fractions(std::size_t t, std::size_t total) {
  if (total == 0) throw Error("mix_fractions: schedule length must be positive");
  if (t > total) throw Error("mix_fractions: epoch " + std::to_string(t) + " beyond schedule length " +
                             std::to_string(total));
  const double T = static_cast<double>(total);
  return {static_cast<double>(total - t) / T, static_cast<double>(t) / T};
}

namespace {

// Index k of an endless stream of fresh permutations of [0, size).
class PermutationStream {
 public:
  PermutationStream(std::size_t size, RngState rng) : size_(size), rng_(rng) {}
  std::size_t at(std::size_t k) {
    const std::size_t round = k / size_;
    if (round != round_ || perm_.empty()) {
      perm_.resize(size_);
      std::iota(perm_.begin(), perm_.end(), 0);
      RngState r = rng_.derive(round);
      shuffle(perm_, r);
      round_ = round;
    }
    return perm_[k % size_];
  }

 private:
  std::size_t size_;
  RngState rng_;
  std::size_t round_ = 0;
  std::vector<std::size_t> perm_;
};

}  // namespace

EpochPlan build_epoch_dataset(std::size_t text_size, std::size_t visual_size, std::size_t t, std::size_t total,
                              std::size_t epoch_size, const RngState& rng) {
  const auto [text_frac, visual_frac] = mix_fractions(t, total);
  (void)visual_frac;
  EpochPlan plan;
  plan.text_count = static_cast<std::size_t>(std::llround(static_cast<double>(epoch_size) * text_frac));
  plan.visual_count = epoch_size - plan.text_count;
  if (plan.text_count > 0 && text_size == 0) throw Error("build_epoch_dataset: text source is empty");
  if (plan.visual_count > 0 && visual_size == 0) throw Error("build_epoch_dataset: visual source is empty");
  plan.with_replacement = plan.text_count > text_size || plan.visual_count > visual_size;
  const RngState perm_rng = rng.derive("permutation");
  if (plan.text_count > 0) {
    PermutationStream s(text_size, perm_rng);
    for (std::size_t k = 0; k < plan.text_count; ++k) plan.items.push_back({Source::Text, s.at(k)});
  }
  if (plan.visual_count > 0) {
    PermutationStream s(visual_size, perm_rng);
    const std::size_t offset = epoch_size <= visual_size ? plan.text_count : 0;
    for (std::size_t k = 0; k < plan.visual_count; ++k) plan.items.push_back({Source::Visual, s.at(offset + k)});
  }
  RngState order = rng.derive("order");
  shuffle(plan.items, order);
  return plan;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::VisionOnly: return "vision-only";
    case Strategy::TextOnly: return "text-only";
    case Strategy::TwoStageGradual: return "two-stage-gradual";
    case Strategy::TwoStageDirect: return "two-stage-direct";
    case Strategy::Vision1Vision2: return "vision1-vision2";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::VisionOnly, Strategy::TextOnly, Strategy::TwoStageGradual, Strategy::TwoStageDirect,
                     Strategy::Vision1Vision2}) {
    if (to_string(v) == s) return v;
  }
  throw Error("unknown training strategy '" + s + "'");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage1_epochs", c.stage1_epochs}, {"stage2_epochs", c.stage2_epochs}, {"epoch_size", c.epoch_size},
          {"lr", c.lr},                       {"momentum", c.momentum},           {"batch", c.batch},
          {"ce_weight", c.ce_weight},         {"clip", c.clip},                   {"seed", c.seed},
          {"strategy", to_string(c.strategy)}, {"fusion", to_string(c.fusion)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("stage1_epochs", c.stage1_epochs);
  take("stage2_epochs", c.stage2_epochs);
  take("epoch_size", c.epoch_size);
  take("lr", c.lr);
  take("momentum", c.momentum);
  take("batch", c.batch);
  take("ce_weight", c.ce_weight);
  take("clip", c.clip);
  take("seed", c.seed);
  if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("fusion")) c.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"stage1_epochs", "stage2_epochs", "epoch_size", "lr",   "momentum", "batch",
                                  "ce_weight",     "clip",          "seed",       "strategy", "fusion"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
      throw Error("unknown training config key '" + key + "'");
    }
  }
  return c;
}

namespace {

struct StagePlan {
  const std::vector<TrainExample>* text = nullptr;
  const std::vector<TrainExample>* visual = nullptr;
  bool gradual = false;
  bool pure_text = false;
};

StagePlan stage_plan(Strategy s, std::size_t stage, const std::vector<TrainExample>& text,
                     const std::vector<TrainExample>& visual, const std::vector<TrainExample>& visual2) {
  StagePlan p;
  p.text = &text;
  p.visual = &visual;
  switch (s) {
    case Strategy::VisionOnly:
      break;
    case Strategy::TextOnly:
      p.pure_text = true;
      break;
    case Strategy::TwoStageGradual:
      p.pure_text = stage == 1;
      p.gradual = stage == 2;
      break;
    case Strategy::TwoStageDirect:
      p.pure_text = stage == 1;
      break;
    case Strategy::Vision1Vision2:
      if (stage == 2) p.visual = &visual2;
      break;
  }
  return p;
}

}  // namespace

TrainResult train_two_stage(const DraftParams& init, const TargetParams& target, const ModelConfig& config,
                            const std::vector<TrainExample>& text, const std::vector<TrainExample>& visual,
                            const std::vector<TrainExample>& visual2, const TrainConfig& tc,
                            const std::function<void(const EpochLoss&)>& on_epoch) {
  if (tc.batch == 0) throw Error("train_two_stage: batch must be positive");
  if (tc.strategy == Strategy::Vision1Vision2 && visual2.empty()) {
    throw Error("train_two_stage: vision1-vision2 needs a second visual set");
  }
  TrainResult result;
  result.draft = init;
  result.draft.mode = tc.fusion;
  const auto plist = parameter_list(result.draft);
  const RngState root = RngState(tc.seed).derive("draft-train");
  std::size_t global_epoch = 0;

  for (std::size_t stage = 1; stage <= 2; ++stage) {
    const std::size_t epochs = stage == 1 ? tc.stage1_epochs : tc.stage2_epochs;
    if (epochs == 0) continue;
    const StagePlan sp = stage_plan(tc.strategy, stage, text, visual, visual2);
    std::size_t epoch_size = tc.epoch_size;
    if (epoch_size == 0) {
      epoch_size = sp.pure_text ? sp.text->size()
                   : sp.gradual ? std::max(sp.text->size(), sp.visual->size())
                                : sp.visual->size();
    }
    if (epoch_size == 0) throw Error("train_two_stage: stage " + std::to_string(stage) + " has no examples");
    const std::size_t steps_per_epoch = (epoch_size + tc.batch - 1) / tc.batch;
    const std::size_t total_steps = steps_per_epoch * epochs;
    std::size_t step = 0;
    SgdMomentum opt(tc.momentum);

    for (std::size_t e = 1; e <= epochs; ++e) {
      ++global_epoch;
      const std::size_t t = sp.pure_text ? 0 : sp.gradual ? e : epochs;
      const EpochPlan plan = build_epoch_dataset(sp.text->size(), sp.visual->size(), t, epochs, epoch_size,
                                                 root.derive(global_epoch));
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < plan.items.size(); start += tc.batch) {
        const std::size_t end = std::min(plan.items.size(), start + tc.batch);
        Tape tape;
        const DraftVars vars = bind_draft(tape, result.draft, true);
        Var total;
        for (std::size_t k = start; k < end; ++k) {
          const EpochItem& item = plan.items[k];
          const TrainExample& ex = item.source == Source::Text ? sp.text->at(item.index) : sp.visual->at(item.index);
          const Var l = draft_loss(tape, vars, ex, target, config, tc.fusion, tc.ce_weight);
          total = total.valid() ? ad::add(tape, total, l) : l;
        }
        const Var mean = ad::scale(tape, total, 1.0 / static_cast<double>(end - start));
        const double value = tape.value(mean)(0, 0);
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "draft training diverged: non-finite loss at stage " << stage << " epoch " << e << " step "
              << step << " (lr " << tc.lr << ")";
          throw Error(msg.str());
        }
        loss_sum += value * static_cast<double>(end - start);
        tape.backward(mean);
        auto grads = collect_grads(tape, vars.flat);
        clip_global_norm(grads, tc.clip);
        opt.step(plist, grads, cosine_lr(tc.lr, step++, total_steps));
      }
      EpochLoss el;
      el.epoch = global_epoch;
      el.stage = stage;
      el.text_fraction = static_cast<double>(plan.text_count) / static_cast<double>(plan.items.size());
      el.mean_loss = loss_sum / static_cast<double>(plan.items.size());
      result.curve.push_back(el);
      if (on_epoch) on_epoch(el);
    }
  }
  return result;
}

std::string loss_curve_csv(const std::vector<EpochLoss>& curve) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,stage,text_fraction,mean_loss\n";
  for (const auto& e : curve) os << e.epoch << ',' << e.stage << ',' << e.text_fraction << ',' << e.mean_loss << '\n';
  return os.str();
}

}  // namespace mmspec
