// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmspec/experiment.hpp"
#include "mmspec/kernels.hpp"
#include "mmspec/lossless.hpp"
#include "mmspec/metrics.hpp"
#include "mmspec/trainer.hpp"
#include "mmspec/verifier.hpp"

namespace py = pybind11;
using namespace mmspec;

namespace {

// JSON crosses the boundary as text; the package decodes it.
std::string dumps(const nlohmann::json& j) { return j.dump(); }

// Speculative vs plain greedy decoding on a seeded tiny random model.
py::dict greedy_check(std::uint64_t seed, const std::string& mode, std::size_t max_tokens) {
  const TinyModels m = make_tiny_models(seed, 6, FusionMode::Decoupled);
  GenerationConfig g;
  g.mode = draft_mode_from_string(mode);
  g.gamma = 3;
  g.plan = {2, 1};
  g.temperature = 0.0;
  g.max_tokens = max_tokens;
  RngState r1(seed), r2(seed);
  RngSampler s1(r1), s2(r2);
  const auto ref = autoregressive_generate(m.prompt, m.target, m.config, 0.0, max_tokens, s1);
  DecodeSession session(m.target, m.draft, m.config, m.prompt);
  const auto spec = speculative_generate(session, g, s2);
  std::vector<std::size_t> appended;
  for (const auto& t : spec.traces) appended.push_back(t.appended);
  py::dict d;
  d["reference"] = ref;
  d["speculative"] = spec.tokens;
  d["appended_per_cycle"] = appended;
  d["tau"] = spec.traces.empty() ? 0.0 : compute_tau(spec.traces);
  return d;
}

}  // namespace

PYBIND11_MODULE(_mmspec, m) {
  m.doc() = "Multimodal speculative decoding engine (C++ core)";
  py::register_exception<Error>(m, "MmspecError", PyExc_ValueError);

  m.def("version", &version_string);
  m.def("softmax", [](const std::vector<double>& logits, double t) { return softmax_with_temperature(logits, t); },
        py::arg("logits"), py::arg("temperature") = 1.0);
  m.def("acceptance_probability", &acceptance_probability, py::arg("p"), py::arg("q"));
  m.def("adjusted_distribution",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          bool fallback = false;
          auto r = adjusted_distribution(p, q, &fallback);
          return py::make_tuple(r, fallback);
        },
        py::arg("p"), py::arg("q"));
  m.def("omega", &omega, py::arg("gamma"), py::arg("alpha"));
  m.def("speedup_ratio", &speedup_ratio_from_omega, py::arg("n_tokens"), py::arg("t_p"), py::arg("t_q"),
        py::arg("t_v"), py::arg("t_profiling"), py::arg("gamma"), py::arg("omega"));
  m.def("mix_fractions", &mix_fractions, py::arg("t"), py::arg("total"));
  m.def("epoch_composition",
        [](std::size_t text_size, std::size_t visual_size, std::size_t t, std::size_t total, std::size_t size,
           std::uint64_t seed) {
          const EpochPlan p = build_epoch_dataset(text_size, visual_size, t, total, size, RngState(seed));
          return py::make_tuple(p.text_count, p.visual_count, p.with_replacement);
        },
        py::arg("text_size"), py::arg("visual_size"), py::arg("t"), py::arg("total"), py::arg("size"),
        py::arg("seed") = 1);
  m.def("greedy_check", &greedy_check, py::arg("seed"), py::arg("mode") = "tree", py::arg("max_tokens") = 3);
  m.def("_gen_data",
        [](const std::filesystem::path& out, std::size_t text, std::size_t visual, std::size_t visual2,
           std::uint64_t seed, bool force) {
          DataConfig c;
          c.text_count = text;
          c.visual_count = visual;
          c.visual2_count = visual2;
          c.seed = seed;
          return dumps(gen_data(out, c, force));
        },
        py::arg("out"), py::arg("text_count"), py::arg("visual_count"), py::arg("visual2_count"), py::arg("seed"),
        py::arg("force"));
  m.def("_verify_lossless",
        [](std::uint64_t seed, std::size_t seeds_per_cell, const std::string& rule) {
          LosslessConfig c;
          c.seed = seed;
          c.seeds_per_cell = seeds_per_cell;
          c.rule = verify_rule_from_string(rule);
          py::gil_scoped_release release;
          return dumps(verify_lossless_command(c, {}, false));
        },
        py::arg("seed"), py::arg("seeds_per_cell"), py::arg("rule"));
  m.def("_strip_timing", [](const std::string& s) { return dumps(strip_timing(nlohmann::json::parse(s))); });
}
