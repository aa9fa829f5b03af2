// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmspec/verifier.hpp"

namespace mmspec {

/// Mean tokens committed per cycle, correction/bonus token included.
double compute_tau(std::span<const CycleTrace> traces);
/// Mean accepted draft tokens per cycle (correction excluded).
double compute_tau_accepted(std::span<const CycleTrace> traces);

/// Entry n-1 is the rate at which candidate n was accepted given candidates
/// 1..n-1 were; nullopt where no cycle reached candidate n.
std::vector<std::optional<double>> compute_n_alpha(std::span<const CycleTrace> traces, std::size_t max_n);

/// sum_{i=0..gamma} alpha^i, i.e. (1 - alpha^(gamma+1)) / (1 - alpha).
double omega(std::size_t gamma, double alpha);

/// (N T_p + T_prof) / (N (gamma T_q + T_v) / omega + T_prof)
double speedup_ratio_from_omega(double n_tokens, double t_p, double t_q, double t_v, double t_profiling,
                                std::size_t gamma, double omega_value);
double speedup_ratio(double n_tokens, double t_p, double t_q, double t_v, double t_profiling, std::size_t gamma,
                     double alpha);

/// Timing aggregates in seconds.
struct Timings {
  double t_p = 0.0;          // target step (one autoregressive token)
  double t_q = 0.0;          // one draft forward pass
  double t_v = 0.0;          // one verification forward
  double t_profiling = 0.0;  // prefill
};

struct RunMetrics {
  double tau = 0.0;
  double tau_accepted = 0.0;
  std::vector<std::optional<double>> n_alpha;
  std::size_t cycles = 0;
  std::size_t tokens = 0;
  Timings timings;
};

/// Aggregates traces; n-alpha is filled only when every trace is chain mode.
RunMetrics summarize(std::span<const CycleTrace> traces, std::size_t max_n = 4);

nlohmann::json to_json(const RunMetrics& m);
std::string csv_header();
std::string csv_row(const std::string& label, const RunMetrics& m);

/// Paired bootstrap over per-example values: half-width of the 95% interval
/// of mean(a - b). Deterministic for a fixed seed.
struct PairedBootstrap {
  double mean_difference = 0.0;
  double half_width = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};
PairedBootstrap paired_bootstrap(std::span<const double> a, std::span<const double> b, std::size_t resamples,
                                 std::uint64_t seed);

}  // namespace mmspec
