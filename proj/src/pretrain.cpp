// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/pretrain.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mmspec/kernels.hpp"
#include "mmspec/optim.hpp"

namespace mmspec {

using ad::Tape;
using ad::Var;

TargetVars bind_target(Tape& t, const TargetParams& params, bool trainable) {
  TargetVars v;
  params.for_each([&](const std::string&, const Matrix& m) { v.flat.push_back(trainable ? t.leaf(m) : t.constant(m)); });
  std::size_t i = 0;
  auto next = [&] { return v.flat.at(i++); };
  auto next_block = [&] {
    return ad::BlockVars{next(), next(), next(), next(), next(), next(),
                         next(), next(), next(), next(), next(), next()};
  };
  v.token_embedding = next();
  v.position_embedding = next();
  v.patch_in_w = next();
  v.patch_in_b = next();
  v.vision_position = next();
  for (std::size_t b = 0; b < params.vision_blocks.size(); ++b) v.vision_blocks.push_back(next_block());
  v.vision_ln_gain = next();
  v.vision_ln_bias = next();
  v.proj_w1 = next();
  v.proj_b1 = next();
  v.proj_w2 = next();
  v.proj_b2 = next();
  for (std::size_t b = 0; b < params.blocks.size(); ++b) v.blocks.push_back(next_block());
  v.final_ln_gain = next();
  v.final_ln_bias = next();
  v.lm_head = next();
  if (i != v.flat.size()) throw Error("bind_target: parameter layout mismatch");
  return v;
}

std::vector<Matrix> collect_grads(const Tape& t, const std::vector<Var>& flat) {
  std::vector<Matrix> out;
  out.reserve(flat.size());
  for (Var v : flat) out.push_back(t.grad(v));
  return out;
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

Var target_tape_logits(Tape& t, const TargetVars& v, const InstructionExample& ex, const ModelConfig& config,
                       std::size_t* prompt_length) {
  std::vector<Var> parts;
  if (!ex.system.empty()) parts.push_back(ad::gather_rows(t, v.token_embedding, ex.system));
  if (ex.image) {
    const ImagePatchGrid grid = patch_features(*ex.image, config.patch_dim);
    const std::size_t m = grid.patch_count();
    if (m > config.max_patches()) throw Error("embed_image: grid larger than the configured vision encoder");
    Var x = ad::add_bias(t, ad::matmul(t, t.constant(grid.patches), v.patch_in_w), v.patch_in_b);
    x = ad::add(t, x, ad::gather_rows(t, v.vision_position, iota_indices(m)));
    const AttentionMask mask = AttentionMask::bidirectional(m, m);
    for (const auto& b : v.vision_blocks) x = ad::block(t, b, x, mask, config.heads);
    x = ad::layer_norm(t, x, v.vision_ln_gain, v.vision_ln_bias);
    const Var h = ad::gelu(t, ad::add_bias(t, ad::matmul(t, x, v.proj_w1), v.proj_b1));
    parts.push_back(ad::add_bias(t, ad::matmul(t, h, v.proj_w2), v.proj_b2));
  }
  std::vector<std::size_t> text = ex.instruction;
  if (prompt_length != nullptr) {
    *prompt_length = ex.system.size() + (ex.image ? ex.image->side * ex.image->side : 0) + ex.instruction.size();
  }
  text.insert(text.end(), ex.answer.begin(), ex.answer.end());
  if (!text.empty()) parts.push_back(ad::gather_rows(t, v.token_embedding, text));
  Var x = ad::concat_rows(t, parts);
  const std::size_t n = t.value(x).rows();
  if (n > config.max_positions) {
    throw Error("sequence exceeds max_positions (" + std::to_string(config.max_positions) + ")");
  }
  x = ad::add(t, x, ad::gather_rows(t, v.position_embedding, iota_indices(n)));
  const AttentionMask causal = AttentionMask::causal(n);
  for (const auto& b : v.blocks) x = ad::block(t, b, x, causal, config.heads);
  x = ad::layer_norm(t, x, v.final_ln_gain, v.final_ln_bias);
  return ad::matmul(t, x, v.lm_head);
}

Var target_answer_loss(Tape& t, const TargetVars& v, const InstructionExample& ex, const ModelConfig& config) {
  if (ex.answer.empty()) throw Error("target_answer_loss: example has no answer");
  std::size_t prompt = 0;
  const Var logits = target_tape_logits(t, v, ex, config, &prompt);
  if (prompt == 0) throw Error("target_answer_loss: empty prompt");
  std::vector<std::size_t> rows(ex.answer.size());
  std::iota(rows.begin(), rows.end(), prompt - 1);
  return ad::cross_entropy(t, ad::select_rows(t, logits, rows), ex.answer);
}

double visual_accuracy(const TargetParams& params, const ModelConfig& config,
                       const std::vector<InstructionExample>& examples, QuestionKind kind, bool ignore_visual,
                       std::size_t max_examples) {
  std::size_t scored = 0, correct = 0;
  RngState unused(0);
  RngSampler sampler(unused);
  for (const auto& ex : examples) {
    if (scored == max_examples) break;
    if (ex.kind() != kind) continue;
    const auto key = key_answer_token(ex);
    if (!key) continue;
    const AssembledSequence prompt = assemble_prompt(ex, params, config);
    TargetForwardOptions opts;
    opts.ignore_visual = ignore_visual;
    const auto out = autoregressive_generate(prompt, params, config, 0.0, ex.answer.size() + 2, sampler, opts);
    std::optional<std::size_t> got;
    for (std::size_t t : out) {
      if (is_key_token(kind, t)) {
        got = t;
        break;
      }
    }
    ++scored;
    correct += got == key ? 1 : 0;
  }
  return scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scored);
}

namespace {

// Draws `count` items without replacement (cycling through fresh
// permutations if count exceeds the source).
std::vector<const InstructionExample*> draw(const std::vector<InstructionExample>& src, std::size_t count,
                                            RngState& rng) {
  std::vector<const InstructionExample*> out;
  if (src.empty()) return out;
  while (out.size() < count) {
    std::vector<std::size_t> perm(src.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    for (std::size_t i = 0; i < perm.size() && out.size() < count; ++i) out.push_back(&src[perm[i]]);
  }
  return out;
}

}  // namespace

TargetParams pretrain_target(const ModelConfig& config, const std::vector<InstructionExample>& text_train,
                             const std::vector<InstructionExample>& visual_train,
                             const std::vector<InstructionExample>& visual_held_out, const PretrainConfig& pc,
                             PretrainReport* report, const std::function<void(const std::string&)>& log) {
  if (text_train.empty() || visual_train.empty()) throw Error("pretrain_target: corpora must cover both tasks");
  if (pc.batch == 0 || pc.max_epochs == 0) throw Error("pretrain_target: batch and max_epochs must be positive");
  const RngState root(pc.seed);
  TargetParams params = init_target(config, root.derive("target-init"));
  PretrainReport local;
  PretrainReport& rep = report != nullptr ? *report : local;
  rep = PretrainReport{};
  rep.untrained_accuracy = visual_accuracy(params, config, visual_held_out, QuestionKind::CellColor, false,
                                           pc.eval_examples);
  const auto plist = parameter_list(params);
  Adam adam;
  const std::size_t per_epoch = pc.text_per_epoch + pc.visual_per_epoch;
  const std::size_t steps_per_epoch = (per_epoch + pc.batch - 1) / pc.batch;
  const std::size_t total_steps = steps_per_epoch * pc.max_epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < pc.max_epochs; ++epoch) {
    RngState rng = root.derive("pretrain-epoch").derive(epoch);
    auto order = draw(text_train, pc.text_per_epoch, rng);
    const auto vis = draw(visual_train, pc.visual_per_epoch, rng);
    order.insert(order.end(), vis.begin(), vis.end());
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += pc.batch) {
      const std::size_t end = std::min(order.size(), start + pc.batch);
      Tape tape;
      const TargetVars vars = bind_target(tape, params, true);
      Var total;
      for (std::size_t i = start; i < end; ++i) {
        const Var l = target_answer_loss(tape, vars, *order[i], config);
        total = total.valid() ? ad::add(tape, total, l) : l;
      }
      const Var mean = ad::scale(tape, total, 1.0 / static_cast<double>(end - start));
      const double value = tape.value(mean)(0, 0);
      if (!std::isfinite(value)) throw Error("pretrain_target: loss diverged at epoch " + std::to_string(epoch));
      loss_sum += value * static_cast<double>(end - start);
      tape.backward(mean);
      auto grads = collect_grads(tape, vars.flat);
      clip_global_norm(grads, pc.clip);
      adam.step(plist, grads, cosine_lr(pc.lr, step++, total_steps));
    }
    const double acc = visual_accuracy(params, config, visual_held_out, QuestionKind::CellColor, false,
                                       pc.eval_examples);
    rep.epochs = epoch + 1;
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    rep.epoch_accuracy.push_back(acc);
    if (log) {
      std::ostringstream os;
      os << "pretrain epoch " << epoch + 1 << " loss " << rep.epoch_loss.back() << " cell-color accuracy " << acc;
      log(os.str());
    }
    if (acc >= pc.accuracy_gate) {
      rep.reached_gate = true;
      break;
    }
  }
  rep.accuracy = rep.epoch_accuracy.back();
  rep.count_accuracy = visual_accuracy(params, config, visual_held_out, QuestionKind::ColorCount, false,
                                       pc.eval_examples);
  rep.ablated_accuracy = visual_accuracy(params, config, visual_held_out, QuestionKind::CellColor, true,
                                         pc.eval_examples);
  if (!rep.reached_gate) {
    std::ostringstream os;
    os << "pretrain_target: held-out cell-color accuracy " << rep.accuracy << " below gate " << pc.accuracy_gate
       << " after " << rep.epochs << " epochs";
    throw Error(os.str());
  }
  return params;
}

}  // namespace mmspec
