// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mmspec/lossless.hpp"
#include "mmspec/session.hpp"

#ifndef MMSPEC_VERSION
#define MMSPEC_VERSION "0.0.0"
#endif

namespace mmspec {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_string() { return std::string("mmspec ") + MMSPEC_VERSION; }

bool is_timing_key(const std::string& key) {
  static const std::set<std::string> keys = {"draft_ms", "verify_ms", "seconds", "timings", "timing"};
  return keys.count(key) > 0;
}

json strip_timing(const json& j) {
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) {
      if (!is_timing_key(k)) out[k] = strip_timing(v);
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(strip_timing(v));
    return out;
  }
  return j;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  RngState r = RngState(seed).derive(label);
  return r.next_u64();
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << contents;
  if (!os) throw Error("failed writing " + path.string());
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void refuse_existing(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  for (const auto& p : outputs) {
    if (fs::exists(p)) throw Error("output " + p.string() + " already exists (use --force to overwrite)");
  }
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error("missing " + what + ": " + p.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + p.string() + ": " + e.what());
  }
}

json corpus_config_json(const CorpusConfig& c) {
  return {{"grammar_seed", c.grammar_seed},         {"text_min_words", c.text_min_words},
          {"text_max_words", c.text_max_words},     {"prefix_words", c.prefix_words},
          {"suffix_min_words", c.suffix_min_words}, {"suffix_max_words", c.suffix_max_words},
          {"count_fraction", c.count_fraction}};
}

json model_config_json(const ModelConfig& c) {
  return {{"vocab", c.vocab},           {"dim", c.dim},
          {"heads", c.heads},           {"target_depth", c.target_depth},
          {"vision_depth", c.vision_depth}, {"patch_dim", c.patch_dim},
          {"grid_side", c.grid_side},   {"mlp_hidden", c.mlp_hidden},
          {"max_positions", c.max_positions}, {"seed", c.seed}};
}

json pretrain_config_json(const PretrainConfig& c) {
  return {{"max_epochs", c.max_epochs},         {"batch", c.batch},
          {"lr", c.lr},                         {"clip", c.clip},
          {"accuracy_gate", c.accuracy_gate},   {"eval_examples", c.eval_examples},
          {"text_per_epoch", c.text_per_epoch}, {"visual_per_epoch", c.visual_per_epoch},
          {"seed", c.seed}};
}

WeightFile load_target(const fs::path& path) {
  require_exists(path, "target weights");
  WeightFile f = load_weights(path);
  if (!f.target) throw Error("weight file has no target section: " + path.string());
  return f;
}

}  // namespace

// --- gen-data ---------------------------------------------------------------

json to_json(const DataConfig& c) {
  return {{"text_count", c.text_count},
          {"visual_count", c.visual_count},
          {"visual2_count", c.visual2_count},
          {"grid_side", c.grid_side},
          {"corpus", corpus_config_json(c.corpus)},
          {"seed", c.seed}};
}

DataConfig data_config_from_json(const json& j) {
  DataConfig c;
  c.text_count = j.at("text_count").get<std::size_t>();
  c.visual_count = j.at("visual_count").get<std::size_t>();
  c.visual2_count = j.at("visual2_count").get<std::size_t>();
  c.grid_side = j.at("grid_side").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& k = j.at("corpus");
  c.corpus.grammar_seed = k.at("grammar_seed").get<std::uint64_t>();
  c.corpus.text_min_words = k.at("text_min_words").get<std::size_t>();
  c.corpus.text_max_words = k.at("text_max_words").get<std::size_t>();
  c.corpus.prefix_words = k.at("prefix_words").get<std::size_t>();
  c.corpus.suffix_min_words = k.at("suffix_min_words").get<std::size_t>();
  c.corpus.suffix_max_words = k.at("suffix_max_words").get<std::size_t>();
  c.corpus.count_fraction = k.at("count_fraction").get<double>();
  return c;
}

json gen_data(const fs::path& dir, const DataConfig& config, bool force) {
  const fs::path text_p = dir / "text.jsonl", vis_p = dir / "visual.jsonl", vis2_p = dir / "visual2.jsonl",
                 manifest_p = dir / "manifest.json";
  refuse_existing({text_p, vis_p, vis2_p, manifest_p}, force);
  fs::create_directories(dir);
  const auto text = gen_text_corpus(config.text_count, config.corpus, derive_seed(config.seed, "text"));
  const auto visual =
      gen_visual_corpus(config.visual_count, config.grid_side, config.corpus, derive_seed(config.seed, "visual"));
  const auto visual2 =
      gen_visual_corpus(config.visual2_count, config.grid_side, config.corpus, derive_seed(config.seed, "visual2"));
  write_jsonl(text_p, text);
  write_jsonl(vis_p, visual);
  write_jsonl(vis2_p, visual2);
  const std::uint64_t split_seed = derive_seed(config.seed, "split");
  auto held = [&](std::size_t n) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) k += is_held_out(split_seed, i) ? 1 : 0;
    return k;
  };
  json manifest = {{"version", version_string()},
                   {"seed", config.seed},
                   {"config", to_json(config)},
                   {"split_seed", split_seed},
                   {"files",
                    {{"text", {{"path", "text.jsonl"}, {"count", text.size()}, {"held_out", held(text.size())}}},
                     {"visual", {{"path", "visual.jsonl"}, {"count", visual.size()}, {"held_out", held(visual.size())}}},
                     {"visual2", {{"path", "visual2.jsonl"}, {"count", visual2.size()}, {"held_out", 0}}}}}};
  write_file(manifest_p, manifest.dump(2) + "\n");
  return manifest;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_p = dir / "manifest.json";
  require_exists(manifest_p, "corpus manifest");
  const json manifest = read_json(manifest_p);
  Dataset d;
  d.config = data_config_from_json(manifest.at("config"));
  const auto split_seed = manifest.at("split_seed").get<std::uint64_t>();
  d.text = split_corpus(read_jsonl(dir / "text.jsonl"), split_seed);
  d.visual = split_corpus(read_jsonl(dir / "visual.jsonl"), split_seed);
  d.visual2 = read_jsonl(dir / "visual2.jsonl");
  return d;
}

// --- pretrain-target ----------------------------------------------------------

ModelConfig default_model_config(const DataConfig& data, std::uint64_t seed) {
  ModelConfig c;
  c.grid_side = data.grid_side;
  c.patch_dim = vocab::kColorCount + data.grid_side * data.grid_side;
  c.seed = seed;
  return c;
}

json pretrain_command(const fs::path& data_dir, const fs::path& out, const PretrainConfig& config,
                      std::uint64_t seed, bool force, const Logger& log) {
  const fs::path report_p = with_suffix(out, ".json");
  refuse_existing({out, report_p}, force);
  const Dataset data = load_dataset(data_dir);
  const ModelConfig model = default_model_config(data.config, seed);
  PretrainConfig pc = config;
  pc.seed = seed;
  PretrainReport rep;
  const TargetParams target =
      pretrain_target(model, data.text.train, data.visual.train, data.visual.held_out, pc, &rep, log);
  WeightFile wf;
  wf.config = model;
  wf.target = target;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_weights(out, wf);
  json report = {{"version", version_string()},
                 {"seed", seed},
                 {"model_config", model_config_json(model)},
                 {"pretrain_config", pretrain_config_json(pc)},
                 {"data_config", to_json(data.config)},
                 {"target_fingerprint", hex64(fingerprint(target))},
                 {"report",
                  {{"epochs", rep.epochs},
                   {"epoch_loss", rep.epoch_loss},
                   {"epoch_accuracy", rep.epoch_accuracy},
                   {"untrained_accuracy", rep.untrained_accuracy},
                   {"accuracy", rep.accuracy},
                   {"count_accuracy", rep.count_accuracy},
                   {"ablated_accuracy", rep.ablated_accuracy},
                   {"reached_gate", rep.reached_gate}}}};
  write_file(report_p, report.dump(2) + "\n");
  return report;
}

// --- train ------------------------------------------------------------------

json train_command(const fs::path& data_dir, const fs::path& target_p, const fs::path& out,
                   const TrainConfig& config, bool force, const Logger& log) {
  const fs::path meta_p = with_suffix(out, ".json"), csv_p = with_suffix(out, ".csv");
  refuse_existing({out, meta_p, csv_p}, force);
  const Dataset data = load_dataset(data_dir);
  const WeightFile tf = load_target(target_p);
  const ModelConfig& model = tf.config;
  const TargetParams& target = *tf.target;
  const fs::path cache = data_dir / "cache";
  auto teacher = [&](const std::string& name, const std::vector<InstructionExample>& corpus) {
    if (log) log("teacher signals: " + name + " (" + std::to_string(corpus.size()) + " examples)");
    return cached_train_examples(cache / ("teacher-" + name + ".bin"), corpus, target, model);
  };
  const auto text = teacher("text", data.text.train);
  const auto visual = teacher("visual", data.visual.train);
  std::vector<TrainExample> visual2;
  if (config.strategy == Strategy::Vision1Vision2) visual2 = teacher("visual2", data.visual2);
  std::vector<InstructionExample> eval(data.visual.held_out.begin(),
                                       data.visual.held_out.begin() +
                                           static_cast<std::ptrdiff_t>(std::min<std::size_t>(200, data.visual.held_out.size())));
  const auto held_out = teacher("visual-held-out", eval);

  const DraftParams init = init_draft(model, config.fusion, RngState(derive_seed(config.seed, "draft-init")));
  const auto t0 = Clock::now();
  TrainResult result = train_two_stage(init, target, model, text, visual, visual2, config, [&](const EpochLoss& e) {
    if (!log) return;
    std::ostringstream os;
    os << "epoch " << e.epoch << " stage " << e.stage << " text_fraction " << e.text_fraction << " loss "
       << e.mean_loss << " (" << seconds_since(t0) << " s)";
    log(os.str());
  });
  const double held_loss = mean_draft_loss(result.draft, held_out, target, model, config.ce_weight);

  WeightFile wf;
  wf.config = model;
  wf.draft = result.draft;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_weights(out, wf);
  json meta = {{"version", version_string()},
               {"seed", config.seed},
               {"train_config", to_json(config)},
               {"fusion", to_string(config.fusion)},
               {"strategy", to_string(config.strategy)},
               {"target_fingerprint", hex64(fingerprint(target))},
               {"draft_fingerprint", hex64(fingerprint(result.draft))},
               {"final_epoch_loss", result.curve.empty() ? 0.0 : result.curve.back().mean_loss},
               {"held_out_loss", held_loss},
               {"held_out_examples", held_out.size()}};
  write_file(meta_p, meta.dump(2) + "\n");
  write_file(csv_p, "# " + meta.dump() + "\n" + loss_curve_csv(result.curve));
  return meta;
}

// --- bench ------------------------------------------------------------------

json to_json(const BenchConfig& c) {
  return {{"mode", c.mode},         {"temperature", c.temperature}, {"examples", c.examples},
          {"gamma", c.gamma},       {"plan", c.plan},               {"max_tokens", c.max_tokens},
          {"seed", c.seed},         {"label", c.label},             {"rule", to_string(c.rule)}};
}

json bench_command(const fs::path& data_dir, const fs::path& target_p, const fs::path& draft_p,
                   const BenchConfig& config, const fs::path& out_dir, bool force, const Logger& log) {
  const fs::path metrics_p = out_dir / "metrics.json", csv_p = out_dir / "metrics.csv",
                 traces_p = out_dir / "traces.jsonl", timing_p = out_dir / "timing.json";
  refuse_existing({metrics_p, csv_p, traces_p, timing_p}, force);
  std::vector<DraftMode> modes;
  if (config.mode == "chain" || config.mode == "both") modes.push_back(DraftMode::Chain);
  if (config.mode == "tree" || config.mode == "both") modes.push_back(DraftMode::Tree);
  if (modes.empty()) throw Error("bench mode must be chain, tree or both (got '" + config.mode + "')");
  const Dataset data = load_dataset(data_dir);
  const WeightFile tf = load_target(target_p);
  require_exists(draft_p, "draft weights");
  const WeightFile df = load_weights(draft_p, tf.config);
  if (!df.draft) throw Error("weight file has no draft section: " + draft_p.string());
  const ModelConfig& model = tf.config;
  const TargetParams& target = *tf.target;
  const DraftParams& draft = *df.draft;
  json draft_meta = json::object();
  if (fs::exists(with_suffix(draft_p, ".json"))) draft_meta = read_json(with_suffix(draft_p, ".json"));
  std::string label = config.label;
  if (label.empty()) {
    label = draft_meta.contains("strategy")
                ? draft_meta.at("fusion").get<std::string>() + "/" + draft_meta.at("strategy").get<std::string>()
                : to_string(draft.mode);
  }
  const std::size_t n = std::min(config.examples, data.visual.held_out.size());
  if (n == 0) throw Error("bench: no held-out visual examples");

  const RngState root(config.seed);
  std::string traces_out;
  double ar_seconds = 0.0, prefill_seconds = 0.0;
  std::size_t ar_tokens = 0;
  struct ModeRun {
    std::vector<CycleTrace> traces;
    std::vector<double> per_example_tau;
    double seconds = 0.0;
    double draft_ms = 0.0, verify_ms = 0.0;
    std::size_t draft_passes = 0;
  };
  std::map<DraftMode, ModeRun> runs;
  bool greedy_checked = config.temperature == 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const InstructionExample& ex = data.visual.held_out[i];
    const AssembledSequence prompt = assemble_prompt(ex, target, model);
    RngState ar_rng = root.derive("bench-target").derive(i);
    RngSampler ar_sampler(ar_rng);
    auto t0 = Clock::now();
    {
      TargetCache c;
      target_forward(prompt, target, model, c);
    }
    prefill_seconds += seconds_since(t0);
    t0 = Clock::now();
    const auto reference =
        autoregressive_generate(prompt, target, model, config.temperature, config.max_tokens, ar_sampler);
    ar_seconds += seconds_since(t0);
    ar_tokens += reference.size();
    for (DraftMode mode : modes) {
      GenerationConfig gc;
      gc.mode = mode;
      gc.gamma = config.gamma;
      gc.plan = config.plan;
      gc.temperature = config.temperature;
      gc.max_tokens = config.max_tokens;
      gc.rule = config.rule;
      RngState rng = root.derive("bench-" + to_string(mode)).derive(i);
      RngSampler sampler(rng);
      t0 = Clock::now();
      DecodeSession session(target, draft, model, prompt);
      const GenerationResult gen = speculative_generate(session, gc, sampler);
      ModeRun& run = runs[mode];
      run.seconds += seconds_since(t0);
      if (config.temperature == 0.0 && gen.tokens != reference) {
        std::ostringstream os;
        os << "greedy equivalence violated on held-out example " << i << " (" << to_string(mode)
           << " mode): speculative [";
        for (std::size_t t : gen.tokens) os << ' ' << t;
        os << " ] vs target [";
        for (std::size_t t : reference) os << ' ' << t;
        os << " ]";
        throw AssertionFailure(os.str());
      }
      for (const auto& tr : gen.traces) {
        run.draft_ms += tr.draft_ms;
        run.verify_ms += tr.verify_ms;
        run.draft_passes += tr.draft_passes;
        traces_out += json{{"example", i}, {"mode", to_string(mode)}, {"trace", to_json(tr)}}.dump() + "\n";
      }
      run.per_example_tau.push_back(gen.traces.empty() ? 0.0
                                                       : static_cast<double>(gen.tokens.size()) /
                                                             static_cast<double>(gen.traces.size()));
      run.traces.insert(run.traces.end(), gen.traces.begin(), gen.traces.end());
    }
    if (log && (i + 1) % 25 == 0) log("bench " + label + ": " + std::to_string(i + 1) + "/" + std::to_string(n));
  }

  json runs_json = json::object();
  json timing = {{"version", version_string()}, {"label", label}};
  std::string csv = "label,mode," + csv_header().substr(csv_header().find(',') + 1) + "\n";
  const double t_p = ar_tokens == 0 ? 0.0 : ar_seconds / static_cast<double>(ar_tokens);
  const double t_prof = prefill_seconds / static_cast<double>(n);
  for (auto& [mode, run] : runs) {
    RunMetrics m = summarize(run.traces, 4);
    m.timings.t_p = t_p;
    m.timings.t_profiling = t_prof;
    m.timings.t_q = run.draft_passes == 0 ? 0.0 : run.draft_ms / 1000.0 / static_cast<double>(run.draft_passes);
    m.timings.t_v = m.cycles == 0 ? 0.0 : run.verify_ms / 1000.0 / static_cast<double>(m.cycles);
    runs_json[to_string(mode)] = {{"metrics", to_json(m)}, {"per_example_tau", run.per_example_tau}};
    std::string row = csv_row(label, m);
    row.insert(row.find(',') + 1, to_string(mode) + ",");
    csv += row + "\n";
    json tm = {{"seconds", run.seconds},
               {"target_seconds", ar_seconds},
               {"measured_speedup", run.seconds > 0.0 ? ar_seconds / run.seconds : 0.0},
               {"t_p", m.timings.t_p},
               {"t_q", m.timings.t_q},
               {"t_v", m.timings.t_v},
               {"t_profiling", m.timings.t_profiling}};
    if (mode == DraftMode::Chain && !m.n_alpha.empty() && m.n_alpha[0]) {
      const double tokens_per_example = static_cast<double>(m.tokens) / static_cast<double>(n);
      tm["modelled_speedup"] = speedup_ratio(tokens_per_example, m.timings.t_p, m.timings.t_q, m.timings.t_v,
                                             m.timings.t_profiling, config.gamma, *m.n_alpha[0]);
    }
    timing[to_string(mode)] = tm;
  }
  json metrics = {{"version", version_string()},
                  {"seed", config.seed},
                  {"label", label},
                  {"config", to_json(config)},
                  {"target_fingerprint", hex64(fingerprint(target))},
                  {"draft_fingerprint", hex64(fingerprint(draft))},
                  {"draft_meta", draft_meta},
                  {"examples", n},
                  {"greedy_equivalence_checked", greedy_checked},
                  {"runs", runs_json}};
  fs::create_directories(out_dir);
  write_file(metrics_p, metrics.dump(2) + "\n");
  write_file(csv_p, "# " + json{{"version", version_string()}, {"seed", config.seed}, {"config", to_json(config)}}.dump() +
                        "\n" + csv);
  write_file(traces_p, traces_out);
  write_file(timing_p, json{{"timing", timing}}.dump(2) + "\n");
  return metrics;
}

// --- report -----------------------------------------------------------------

json to_json(const Comparison& c) {
  return {{"name", c.name},
          {"better", c.better},
          {"worse", c.worse},
          {"mean_difference", c.stats.mean_difference},
          {"half_width", c.stats.half_width},
          {"lower", c.stats.lower},
          {"upper", c.stats.upper},
          {"verdict", c.verdict}};
}

std::string comparison_verdict(const PairedBootstrap& b) {
  if (b.mean_difference > b.half_width) return "pass";
  if (b.mean_difference < -b.half_width) return "reversed";
  return "inconclusive";
}

namespace {

struct Arm {
  std::string label;
  std::vector<double> tree_tau;
  double tau = 0.0;
  std::vector<std::optional<double>> n_alpha;
  double chain_tau = 0.0;
};

std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

json report_command(const std::vector<fs::path>& bench_dirs, const fs::path& out_dir, std::size_t resamples,
                    std::uint64_t seed, bool force) {
  const fs::path report_p = out_dir / "report.json", md_p = out_dir / "report.md",
                 csv_p = out_dir / "comparisons.csv";
  refuse_existing({report_p, md_p, csv_p}, force);
  if (bench_dirs.empty()) throw Error("report: no bench outputs given");
  std::map<std::string, Arm> arms;
  std::vector<std::string> order;
  for (const auto& dir : bench_dirs) {
    const json m = read_json(dir / "metrics.json");
    Arm a;
    a.label = m.at("label").get<std::string>();
    const json& runs = m.at("runs");
    if (runs.contains("tree")) {
      a.tree_tau = runs.at("tree").at("per_example_tau").get<std::vector<double>>();
      a.tau = runs.at("tree").at("metrics").at("tau").get<double>();
    }
    if (runs.contains("chain")) {
      const json& c = runs.at("chain").at("metrics");
      a.chain_tau = c.at("tau").get<double>();
      for (const auto& v : c.at("n_alpha")) a.n_alpha.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    if (arms.count(a.label) > 0) throw Error("report: duplicate arm label '" + a.label + "'");
    order.push_back(a.label);
    arms[a.label] = std::move(a);
  }

  const std::string baseline = "baseline-concat/vision-only", decoupled_vo = "decoupled/vision-only",
                    gradual = "decoupled/two-stage-gradual", v1v2 = "decoupled/vision1-vision2",
                    direct = "decoupled/two-stage-direct", text_only = "decoupled/text-only";
  auto compare = [&](const std::string& name, const std::string& better, const std::string& worse) {
    Comparison c;
    c.name = name;
    c.better = better;
    c.worse = worse;
    if (arms.count(better) == 0 || arms.count(worse) == 0 || arms[better].tree_tau.empty() ||
        arms[worse].tree_tau.empty()) {
      c.verdict = "missing";
      return c;
    }
    if (arms[better].tree_tau.size() != arms[worse].tree_tau.size()) {
      throw Error("report: arms '" + better + "' and '" + worse + "' were benched on different example counts");
    }
    c.stats = paired_bootstrap(arms[better].tree_tau, arms[worse].tree_tau, resamples, derive_seed(seed, name));
    c.verdict = comparison_verdict(c.stats);
    return c;
  };
  std::vector<Comparison> decoupling = {compare("decoupling", decoupled_vo, baseline),
                                        compare("two-stage", gradual, decoupled_vo)};
  std::vector<Comparison> schedules = {compare("gradual-vs-vision-only", gradual, decoupled_vo),
                                       compare("gradual-vs-vision1-vision2", gradual, v1v2),
                                       compare("gradual-vs-direct", gradual, direct)};
  std::vector<Comparison> visual_data = {compare("vision-vs-text-only", decoupled_vo, text_only)};
  json one_alpha = {{"better", gradual}, {"worse", baseline}, {"verdict", "missing"}};
  if (arms.count(gradual) && arms.count(baseline) && !arms[gradual].n_alpha.empty() && !arms[baseline].n_alpha.empty() &&
      arms[gradual].n_alpha[0] && arms[baseline].n_alpha[0]) {
    const double a = *arms[gradual].n_alpha[0], b = *arms[baseline].n_alpha[0];
    one_alpha["better_value"] = a;
    one_alpha["worse_value"] = b;
    one_alpha["verdict"] = a > b ? "pass" : "reversed";
  }
  json n_alpha_ok = true;
  json arms_json = json::array();
  for (const auto& label : order) {
    const Arm& a = arms[label];
    json na = json::array();
    for (const auto& v : a.n_alpha) {
      na.push_back(v ? json(*v) : json(nullptr));
      if (v && (*v < 0.0 || *v > 1.0)) n_alpha_ok = false;
    }
    arms_json.push_back({{"label", label}, {"tree_tau", a.tau}, {"chain_tau", a.chain_tau}, {"n_alpha", na},
                         {"examples", a.tree_tau.size()}});
  }
  auto list = [](const std::vector<Comparison>& cs) {
    json out = json::array();
    for (const auto& c : cs) out.push_back(to_json(c));
    return out;
  };
  json report = {{"version", version_string()},
                 {"seed", seed},
                 {"resamples", resamples},
                 {"arms", arms_json},
                 {"decoupling_and_two_stage", list(decoupling)},
                 {"training_schedules", list(schedules)},
                 {"visual_data", list(visual_data)},
                 {"one_alpha", one_alpha},
                 {"n_alpha_in_unit_interval", n_alpha_ok}};

  std::ostringstream md;
  md << "# Ablation report\n\n" << version_string() << ", seed " << seed << ", " << resamples
     << " bootstrap resamples. tau is measured with tree drafting at temperature 0.\n\n";
  md << "## Input decoupling and two-stage training\n\n| Arm | tau |\n|---|---|\n";
  for (const auto& [name, label] : std::vector<std::pair<std::string, std::string>>{
           {"Baseline (concat, vision only)", baseline}, {"+ decoupled inputs", decoupled_vo}, {"+ two-stage gradual", gradual}}) {
    md << "| " << name << " | " << (arms.count(label) ? fmt(arms[label].tau) : "n/a") << " |\n";
  }
  md << "\n## Training schedules (decoupled inputs)\n\n| Schedule | tau |\n|---|---|\n";
  for (const auto& [name, label] : std::vector<std::pair<std::string, std::string>>{
           {"Vision1-Vision1", decoupled_vo}, {"Vision1-Vision2", v1v2}, {"Text-Vision directly", direct},
           {"Text-Vision gradually", gradual}, {"Text only (reference)", text_only}}) {
    md << "| " << name << " | " << (arms.count(label) ? fmt(arms[label].tau) : "n/a") << " |\n";
  }
  md << "\n## Chain acceptance rates\n\n| Arm | 1-alpha | 2-alpha | 3-alpha | 4-alpha |\n|---|---|---|---|---|\n";
  for (const auto& label : order) {
    md << "| " << label;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& na = arms[label].n_alpha;
      md << " | " << (k < na.size() && na[k] ? fmt(*na[k]) : "n/a");
    }
    md << " |\n";
  }
  md << "\n## Paired comparisons\n\n| Comparison | Better | Worse | Mean diff | 95% half-width | Verdict |\n|---|---|---|---|---|---|\n";
  std::string csv = "name,better,worse,mean_difference,half_width,lower,upper,verdict\n";
  for (const auto* group : {&decoupling, &schedules, &visual_data}) {
    for (const auto& c : *group) {
      md << "| " << c.name << " | " << c.better << " | " << c.worse << " | " << fmt(c.stats.mean_difference, 4)
         << " | " << fmt(c.stats.half_width, 4) << " | " << c.verdict << " |\n";
      csv += c.name + "," + c.better + "," + c.worse + "," + fmt(c.stats.mean_difference, 6) + "," +
             fmt(c.stats.half_width, 6) + "," + fmt(c.stats.lower, 6) + "," + fmt(c.stats.upper, 6) + "," + c.verdict +
             "\n";
    }
  }
  md << "\n1-alpha, two-stage gradual vs baseline: " << one_alpha.at("verdict").get<std::string>() << "\n";
  fs::create_directories(out_dir);
  write_file(report_p, report.dump(2) + "\n");
  write_file(md_p, md.str());
  write_file(csv_p, "# " + json{{"version", version_string()}, {"seed", seed}, {"resamples", resamples}}.dump() + "\n" + csv);
  return report;
}

// --- verify-lossless --------------------------------------------------------

json verify_lossless_command(const LosslessConfig& config, const fs::path& out, bool force) {
  if (!out.empty()) refuse_existing({out}, force);
  const auto t0 = Clock::now();
  const auto grid = default_lossless_grid(config.seed, config.seeds_per_cell);
  const CertificationReport report = certify_grid(grid, config.rule, config.tolerance);
  json j = to_json(report);
  j["version"] = version_string();
  j["seed"] = config.seed;
  j["config"] = {{"seed", config.seed},
                 {"seeds_per_cell", config.seeds_per_cell},
                 {"tolerance", config.tolerance},
                 {"rule", to_string(config.rule)}};
  j["seconds"] = seconds_since(t0);
  if (!out.empty()) write_file(out, j.dump(2) + "\n");
  return j;
}

}  // namespace mmspec
