// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment runner: data generation, target pretraining, draft training,
// benchmarking, the losslessness certificate and the ablation report.
// Exit codes: 0 success, 1 usage or input error, 2 failed assertion or
// certification.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "mmspec/experiment.hpp"

using namespace mmspec;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kAssertionFailed = 2;

std::vector<std::size_t> parse_plan(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw Error("tree plan has an empty entry: '" + s + "'");
    std::size_t used = 0;
    const unsigned long v = std::stoul(item, &used);
    if (used != item.size() || v == 0) throw Error("tree plan entries must be positive integers: '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error("tree plan is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmspec: multimodal speculative decoding experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  std::uint64_t seed = 1;
  bool force = false;
  bool quiet = false;
  app.add_option("--seed", seed, "Root seed; every random stream is derived from it")->capture_default_str();
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_flag("--quiet", quiet, "Suppress progress logging");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic text and visual corpora");
  DataConfig data;
  fs::path gen_out;
  std::optional<std::size_t> count;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", count, "Examples per corpus (overrides the three counts)");
  gen->add_option("--text-count", data.text_count)->capture_default_str();
  gen->add_option("--visual-count", data.visual_count)->capture_default_str();
  gen->add_option("--visual2-count", data.visual2_count)->capture_default_str();
  gen->add_option("--grid-side", data.grid_side)->capture_default_str();

  // pretrain-target
  auto* pre = app.add_subcommand("pretrain-target", "Train the toy multimodal target");
  PretrainConfig pc;
  fs::path pre_data, pre_out;
  pre->add_option("--data", pre_data, "Corpus directory from gen-data")->required();
  pre->add_option("--out", pre_out, "Target weight file")->required();
  pre->add_option("--max-epochs", pc.max_epochs)->capture_default_str();
  pre->add_option("--lr", pc.lr)->capture_default_str();
  pre->add_option("--batch", pc.batch)->capture_default_str();
  pre->add_option("--accuracy-gate", pc.accuracy_gate)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train one draft arm");
  TrainConfig tc;
  fs::path tr_data, tr_target, tr_out, tr_config;
  std::string fusion = "decoupled", strategy = "two-stage-gradual";
  std::optional<std::size_t> stage1, stage2, epoch_size;
  std::optional<double> tr_lr;
  train->add_option("--data", tr_data)->required();
  train->add_option("--target", tr_target, "Target weight file")->required();
  train->add_option("--out", tr_out, "Draft weight file (also writes <out>.json and <out>.csv)")->required();
  train->add_option("--config", tr_config, "JSON training config; flags override it");
  train->add_option("--fusion", fusion, "decoupled | baseline-concat")->capture_default_str();
  train->add_option("--strategy", strategy,
                    "vision-only | text-only | two-stage-gradual | two-stage-direct | vision1-vision2")
      ->capture_default_str();
  train->add_option("--stage1-epochs", stage1);
  train->add_option("--stage2-epochs", stage2);
  train->add_option("--epoch-size", epoch_size, "Examples per epoch (0: source size)");
  train->add_option("--lr", tr_lr);

  // bench
  auto* bench = app.add_subcommand("bench", "Run speculative decoding over held-out examples");
  BenchConfig bc;
  fs::path b_data, b_target, b_draft, b_out;
  std::string plan = "4,2,2,1,1", rule = "standard";
  bench->add_option("--data", b_data)->required();
  bench->add_option("--target", b_target)->required();
  bench->add_option("--draft", b_draft)->required();
  bench->add_option("--out", b_out, "Output directory")->required();
  bench->add_option("--mode", bc.mode, "chain | tree | both")->capture_default_str();
  bench->add_option("--temperature", bc.temperature)->capture_default_str();
  bench->add_option("--examples", bc.examples)->capture_default_str();
  bench->add_option("--gamma", bc.gamma)->capture_default_str();
  bench->add_option("--plan", plan, "Tree children per node at each depth")->capture_default_str();
  bench->add_option("--max-tokens", bc.max_tokens)->capture_default_str();
  bench->add_option("--label", bc.label, "Arm label (default: <fusion>/<strategy>)");
  bench->add_option("--rule", rule, "Acceptance rule (test hook)")->capture_default_str();

  // verify-lossless
  auto* ver = app.add_subcommand("verify-lossless", "Certify losslessness by exhaustive enumeration");
  LosslessConfig lc;
  fs::path v_out;
  std::string v_rule = "standard";
  ver->add_option("--out", v_out, "Report JSON path");
  ver->add_option("--seeds-per-cell", lc.seeds_per_cell)->capture_default_str();
  ver->add_option("--tolerance", lc.tolerance)->capture_default_str();
  ver->add_option("--rule", v_rule, "standard | uncapped-ratio | resample-from-target")->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "Aggregate bench outputs into the ablation tables");
  std::vector<fs::path> r_bench;
  fs::path r_out;
  std::size_t resamples = 1000;
  rep->add_option("--bench", r_bench, "Bench output directories")->required();
  rep->add_option("--out", r_out, "Output directory")->required();
  rep->add_option("--resamples", resamples)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  const Logger log = [&](const std::string& s) {
    if (!quiet) std::cerr << s << std::endl;
  };

  try {
    if (*gen) {
      if (count) data.text_count = data.visual_count = data.visual2_count = *count;
      data.seed = seed;
      data.corpus.grammar_seed = derive_seed(seed, "grammar");
      const auto m = gen_data(gen_out, data, force);
      std::cout << "wrote " << m["files"]["text"]["count"] << " text, " << m["files"]["visual"]["count"]
                << " visual and " << m["files"]["visual2"]["count"] << " second-set visual examples to "
                << gen_out.string() << "\n";
    } else if (*pre) {
      const auto r = pretrain_command(pre_data, pre_out, pc, seed, force, log);
      std::cout << "target held-out cell-color accuracy " << r["report"]["accuracy"] << " after "
                << r["report"]["epochs"] << " epochs (visual masked: " << r["report"]["ablated_accuracy"] << ")\n";
    } else if (*train) {
      if (!tr_config.empty()) tc = train_config_from_json(nlohmann::json::parse(read_file(tr_config)));
      if (!tr_config.empty() && train->count("--fusion") == 0 && train->count("--strategy") == 0) {
        fusion = to_string(tc.fusion);
        strategy = to_string(tc.strategy);
      }
      tc.fusion = fusion_mode_from_string(fusion);
      tc.strategy = strategy_from_string(strategy);
      if (stage1) tc.stage1_epochs = *stage1;
      if (stage2) tc.stage2_epochs = *stage2;
      if (epoch_size) tc.epoch_size = *epoch_size;
      if (tr_lr) tc.lr = *tr_lr;
      tc.seed = seed;
      const auto m = train_command(tr_data, tr_target, tr_out, tc, force, log);
      std::cout << "trained " << m["fusion"].get<std::string>() << "/" << m["strategy"].get<std::string>()
                << ": held-out loss " << m["held_out_loss"] << "\n";
    } else if (*bench) {
      bc.plan = parse_plan(plan);
      bc.rule = verify_rule_from_string(rule);
      bc.seed = seed;
      const auto m = bench_command(b_data, b_target, b_draft, bc, b_out, force, log);
      for (const auto& [mode, run] : m["runs"].items()) {
        std::cout << m["label"].get<std::string>() << " " << mode << ": tau " << run["metrics"]["tau"] << "\n";
      }
    } else if (*ver) {
      lc.seed = seed;
      lc.rule = verify_rule_from_string(v_rule);
      const auto r = verify_lossless_command(lc, v_out, force);
      std::cout << "lossless certification: " << r["instance_count"] << " instances, max TV " << r["max_tv"]
                << ", " << (r["passed"].get<bool>() ? "PASS" : "FAIL") << "\n";
      if (!r["passed"].get<bool>()) return kAssertionFailed;
    } else if (*rep) {
      const auto r = report_command(r_bench, r_out, resamples, seed, force);
      for (const char* group : {"decoupling_and_two_stage", "training_schedules", "visual_data"}) {
        for (const auto& c : r[group]) {
          std::cout << c["name"].get<std::string>() << ": " << c["verdict"].get<std::string>() << " (diff "
                    << c["mean_difference"] << ", half-width " << c["half_width"] << ")\n";
        }
      }
      std::cout << "1-alpha two-stage gradual vs baseline: " << r["one_alpha"]["verdict"].get<std::string>() << "\n";
    }
  } catch (const AssertionFailure& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kAssertionFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return 0;
}
