// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "mmspec/experiment.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mmspec;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmspec_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DataConfig tiny_data() {
  DataConfig d;
  d.text_count = 40;
  d.visual_count = 40;
  d.visual2_count = 20;
  d.seed = 3;
  return d;
}

}  // namespace

TEST(Timing, StripRemovesTimingKeysAtAnyDepth) {
  const json j = {{"tau", 2.0},
                  {"seconds", 1.5},
                  {"runs", {{{"draft_ms", 0.1}, {"verify_ms", 0.2}, {"cycle", 1}}}},
                  {"timing", {{"t_p", 1}}},
                  {"metrics", {{"timings", {{"t_q", 2}}}, {"n", 3}}}};
  const json want = {{"tau", 2.0}, {"runs", {{{"cycle", 1}}}}, {"metrics", {{"n", 3}}}};
  EXPECT_EQ(strip_timing(j), want);
  EXPECT_TRUE(is_timing_key("seconds"));
  EXPECT_FALSE(is_timing_key("tau"));
}

TEST(Seeds, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "text"), derive_seed(1, "text"));
  EXPECT_NE(derive_seed(1, "text"), derive_seed(1, "visual"));
  EXPECT_NE(derive_seed(1, "text"), derive_seed(2, "text"));
}

TEST(Verdict, Rule) {
  PairedBootstrap b;
  b.mean_difference = 0.3;
  b.half_width = 0.1;
  EXPECT_EQ(comparison_verdict(b), "pass");
  b.mean_difference = -0.3;
  EXPECT_EQ(comparison_verdict(b), "reversed");
  b.mean_difference = 0.05;
  EXPECT_EQ(comparison_verdict(b), "inconclusive");
}

TEST(Version, Prefix) { EXPECT_EQ(version_string().rfind("mmspec ", 0), 0u); }

TEST(GenData, ByteIdenticalRerunsAndForceGuard) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const DataConfig cfg = tiny_data();
  gen_data(a, cfg, false);
  gen_data(b, cfg, false);
  for (const char* f : {"text.jsonl", "visual.jsonl", "visual2.jsonl", "manifest.json"}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
  EXPECT_THROW(gen_data(a, cfg, false), Error);
  EXPECT_NO_THROW(gen_data(a, cfg, true));

  const Dataset d = load_dataset(a);
  EXPECT_EQ(d.config.text_count, 40u);
  EXPECT_EQ(d.text.train.size() + d.text.held_out.size(), 40u);
  EXPECT_EQ(d.visual2.size(), 20u);
  EXPECT_EQ(to_json(data_config_from_json(to_json(cfg))), to_json(cfg));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(GenData, CountFlagSizes) {
  const fs::path dir = scratch("gen_count");
  DataConfig cfg = tiny_data();
  cfg.text_count = cfg.visual_count = cfg.visual2_count = 10;
  gen_data(dir, cfg, false);
  EXPECT_EQ(read_jsonl(dir / "text.jsonl").size(), 10u);
  EXPECT_EQ(read_jsonl(dir / "visual.jsonl").size(), 10u);
  fs::remove_all(dir);
}

// Train, bench and report plumbing on a random (untrained) target.
TEST(Commands, TrainBenchReportEndToEnd) {
  const fs::path dir = scratch("e2e");
  const DataConfig data = tiny_data();
  gen_data(dir / "data", data, false);
  WeightFile wf;
  wf.config = default_model_config(data, data.seed);
  wf.target = init_target(wf.config, RngState(4));
  save_weights(dir / "target.bin", wf);

  TrainConfig tc;
  tc.stage1_epochs = 1;
  tc.stage2_epochs = 2;
  tc.strategy = Strategy::TwoStageGradual;
  const json meta = train_command(dir / "data", dir / "target.bin", dir / "draft.bin", tc, false);
  EXPECT_TRUE(fs::exists(dir / "draft.bin"));
  EXPECT_TRUE(fs::exists(dir / "draft.bin.json"));
  EXPECT_TRUE(fs::exists(dir / "draft.bin.csv"));
  EXPECT_EQ(meta["strategy"], "two-stage-gradual");
  EXPECT_THROW(train_command(dir / "data", dir / "target.bin", dir / "draft.bin", tc, false), Error);

  BenchConfig bc;
  bc.examples = 3;
  bc.max_tokens = 6;
  const json m1 = bench_command(dir / "data", dir / "target.bin", dir / "draft.bin", bc, dir / "bench1", false);
  const json m2 = bench_command(dir / "data", dir / "target.bin", dir / "draft.bin", bc, dir / "bench2", false);
  EXPECT_EQ(strip_timing(m1), strip_timing(m2));
  for (const char* f : {"metrics.json", "metrics.csv", "traces.jsonl", "timing.json"}) {
    EXPECT_TRUE(fs::exists(dir / "bench1" / f)) << f;
  }
  EXPECT_EQ(read_file(dir / "bench1" / "metrics.csv"), read_file(dir / "bench2" / "metrics.csv"));
  const json metrics = json::parse(read_file(dir / "bench1" / "metrics.json"));
  EXPECT_TRUE(metrics["runs"].contains("chain"));
  EXPECT_TRUE(metrics["runs"].contains("tree"));
  EXPECT_EQ(metrics["runs"]["tree"]["per_example_tau"].size(), 3u);

  const json rep = report_command({dir / "bench1"}, dir / "report", 200, 1, false);
  EXPECT_TRUE(fs::exists(dir / "report" / "report.md"));
  EXPECT_EQ(rep["decoupling_and_two_stage"][0]["verdict"], "missing");
  fs::remove_all(dir);
}

TEST(Commands, MissingInputsFail) {
  const fs::path dir = scratch("missing");
  EXPECT_THROW(load_dataset(dir / "nope"), Error);
  EXPECT_THROW(train_command(dir / "nope", dir / "t.bin", dir / "d.bin", TrainConfig{}, false), Error);
  fs::remove_all(dir);
}

TEST(Commands, LosslessCertificationAndMutation) {
  LosslessConfig ok;
  ok.seeds_per_cell = 1;
  const json good = verify_lossless_command(ok, {}, false);
  EXPECT_TRUE(good["passed"].get<bool>());
  LosslessConfig bad = ok;
  bad.rule = VerifyRule::UncappedRatio;
  EXPECT_FALSE(verify_lossless_command(bad, {}, false)["passed"].get<bool>());
}
