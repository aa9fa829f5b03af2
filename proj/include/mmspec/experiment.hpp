// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmspec/datagen.hpp"
#include "mmspec/metrics.hpp"
#include "mmspec/pretrain.hpp"
#include "mmspec/trainer.hpp"
#include "mmspec/verifier.hpp"

// The steps behind each CLI subcommand. Every artifact carries the version
// string, the seed and the full config; timing lives in separate fields or
// files so reruns can be compared after strip_timing.
namespace mmspec {

std::string version_string();

/// A built-in oracle or certification failed (CLI exit code 2).
class AssertionFailure : public Error {
 public:
  using Error::Error;
};

using Logger = std::function<void(const std::string&)>;

bool is_timing_key(const std::string& key);
nlohmann::json strip_timing(const nlohmann::json& j);

/// Independent 64-bit seed for a named stream under the root seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

// --- gen-data -------------------------------------------------------------

struct DataConfig {
  std::size_t text_count = 4000;
  std::size_t visual_count = 4000;
  std::size_t visual2_count = 4000;  // second visual set for the vision1-vision2 arm
  std::size_t grid_side = 2;
  CorpusConfig corpus;
  std::uint64_t seed = 1;
};
nlohmann::json to_json(const DataConfig& c);
DataConfig data_config_from_json(const nlohmann::json& j);

/// Writes text.jsonl, visual.jsonl, visual2.jsonl and manifest.json into dir.
/// Existing outputs are an error unless force is set.
nlohmann::json gen_data(const std::filesystem::path& dir, const DataConfig& config, bool force);

struct Dataset {
  DataConfig config;
  Split text;
  Split visual;
  std::vector<InstructionExample> visual2;
};
Dataset load_dataset(const std::filesystem::path& dir);

// --- pretrain-target ------------------------------------------------------

ModelConfig default_model_config(const DataConfig& data, std::uint64_t seed);

/// Writes the target weight file and a JSON report next to it (<out>.json).
nlohmann::json pretrain_command(const std::filesystem::path& data_dir, const std::filesystem::path& out,
                                const PretrainConfig& config, std::uint64_t seed, bool force,
                                const Logger& log = {});

// --- train ----------------------------------------------------------------

/// Trains one draft arm. Writes the draft weight file, <out>.json (config and
/// held-out loss) and <out>.csv (loss curve). Teacher signals are cached
/// under <data_dir>/cache.
nlohmann::json train_command(const std::filesystem::path& data_dir, const std::filesystem::path& target,
                             const std::filesystem::path& out, const TrainConfig& config, bool force,
                             const Logger& log = {});

// --- bench ----------------------------------------------------------------

struct BenchConfig {
  std::string mode = "both";  // chain | tree | both
  double temperature = 0.0;
  std::size_t examples = 100;
  std::size_t gamma = 4;
  std::vector<std::size_t> plan{4, 2, 2, 1, 1};
  std::size_t max_tokens = 32;
  std::uint64_t seed = 1;
  std::string label;  // defaults to "<fusion>/<strategy>" from the draft's metadata
  VerifyRule rule = VerifyRule::Standard;
};
nlohmann::json to_json(const BenchConfig& c);

/// Runs speculative generation over the held-out visual examples. Writes
/// metrics.json, metrics.csv, traces.jsonl and timing.json into out_dir.
/// At temperature 0 every output is checked against plain target decoding
/// and a mismatch throws AssertionFailure.
nlohmann::json bench_command(const std::filesystem::path& data_dir, const std::filesystem::path& target,
                             const std::filesystem::path& draft, const BenchConfig& config,
                             const std::filesystem::path& out_dir, bool force, const Logger& log = {});

// --- report ---------------------------------------------------------------

struct Comparison {
  std::string name;
  std::string better;  // arm expected to be ahead
  std::string worse;
  PairedBootstrap stats;
  std::string verdict;  // pass | inconclusive | reversed | missing
};
nlohmann::json to_json(const Comparison& c);

/// pass when mean difference > half-width, reversed when < -half-width.
std::string comparison_verdict(const PairedBootstrap& b);

/// Aggregates bench outputs into the ablation comparisons (per-example tree
/// tau, paired bootstrap) and the chain n-alpha table. Writes report.json,
/// report.md and comparisons.csv into out_dir.
nlohmann::json report_command(const std::vector<std::filesystem::path>& bench_dirs,
                              const std::filesystem::path& out_dir, std::size_t resamples, std::uint64_t seed,
                              bool force);

// --- verify-lossless --------------------------------------------------------

struct LosslessConfig {
  std::uint64_t seed = 1;
  std::size_t seeds_per_cell = 3;
  double tolerance = 1e-9;
  VerifyRule rule = VerifyRule::Standard;
};

/// Certifies the default grid; writes the report when out is non-empty.
/// The returned JSON has "passed".
nlohmann::json verify_lossless_command(const LosslessConfig& config, const std::filesystem::path& out, bool force);

/// Reads a whole file (used for byte comparisons and by tests).
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace mmspec
