// Copyright (C) 2026 The mmspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmspec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mmspec {

double compute_tau(std::span<const CycleTrace> traces) {
  if (traces.empty()) throw Error("compute_tau: no cycles");
  std::size_t total = 0;
  for (const auto& t : traces) total += t.appended;
  return static_cast<double>(total) / static_cast<double>(traces.size());
}

double compute_tau_accepted(std::span<const CycleTrace> traces) {
  if (traces.empty()) throw Error("compute_tau_accepted: no cycles");
  std::size_t total = 0;
  for (const auto& t : traces) total += t.accepted;
  return static_cast<double>(total) / static_cast<double>(traces.size());
}

std::vector<std::optional<double>> compute_n_alpha(std::span<const CycleTrace> traces, std::size_t max_n) {
  std::vector<std::size_t> reached(max_n, 0), accepted(max_n, 0);
  for (const auto& t : traces) {
    if (t.mode != DraftMode::Chain) throw Error("n-alpha defined for chain drafts");
    for (std::size_t i = 0; i < t.flags.size() && i < max_n; ++i) {
      ++reached[i];
      if (!t.flags[i].accepted) break;
      ++accepted[i];
    }
  }
  std::vector<std::optional<double>> out(max_n);
  for (std::size_t i = 0; i < max_n; ++i) {
    if (reached[i] > 0) out[i] = static_cast<double>(accepted[i]) / static_cast<double>(reached[i]);
  }
  return out;
}

double omega(std::size_t gamma, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("omega: alpha must lie in [0, 1]");
  double sum = 0.0, term = 1.0;
  for (std::size_t i = 0; i <= gamma; ++i) {
    sum += term;
    term *= alpha;
  }
  return sum;
}

double speedup_ratio_from_omega(double n_tokens, double t_p, double t_q, double t_v, double t_profiling,
                                std::size_t gamma, double omega_value) {
  if (n_tokens < 1.0) throw Error("speedup_ratio: N must be >= 1");
  if (t_p < 0.0 || t_q < 0.0 || t_v < 0.0 || t_profiling < 0.0) throw Error("speedup_ratio: negative timing");
  if (!(omega_value > 0.0)) throw Error("speedup_ratio: omega must be positive");
  const double den = n_tokens * ((static_cast<double>(gamma) * t_q + t_v) / omega_value) + t_profiling;
  if (den == 0.0) throw Error("speedup_ratio: zero denominator");
  return (n_tokens * t_p + t_profiling) / den;
}

double speedup_ratio(double n_tokens, double t_p, double t_q, double t_v, double t_profiling, std::size_t gamma,
                     double alpha) {
  if (gamma == 0) throw Error("speedup_ratio: gamma must be >= 1");
  return speedup_ratio_from_omega(n_tokens, t_p, t_q, t_v, t_profiling, gamma, omega(gamma, alpha));
}

RunMetrics summarize(std::span<const CycleTrace> traces, std::size_t max_n) {
  RunMetrics m;
  m.cycles = traces.size();
  for (const auto& t : traces) m.tokens += t.appended;
  if (traces.empty()) return m;
  m.tau = compute_tau(traces);
  m.tau_accepted = compute_tau_accepted(traces);
  const bool chain = std::all_of(traces.begin(), traces.end(), [](const auto& t) { return t.mode == DraftMode::Chain; });
  if (chain) m.n_alpha = compute_n_alpha(traces, max_n);
  return m;
}

nlohmann::json to_json(const RunMetrics& m) {
  nlohmann::json na = nlohmann::json::array();
  for (const auto& v : m.n_alpha) na.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"tau", m.tau},
          {"tau_accepted", m.tau_accepted},
          {"n_alpha", na},
          {"cycles", m.cycles},
          {"tokens", m.tokens},
          {"timings", {{"t_p", m.timings.t_p}, {"t_q", m.timings.t_q}, {"t_v", m.timings.t_v},
                       {"t_profiling", m.timings.t_profiling}}}};
}

std::string csv_header() { return "label,tau,tau_accepted,alpha1,alpha2,alpha3,alpha4,cycles,tokens"; }

std::string csv_row(const std::string& label, const RunMetrics& m) {
  char buf[64];
  std::string row = label;
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f", m.tau, m.tau_accepted);
  row += buf;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i < m.n_alpha.size() && m.n_alpha[i]) {
      std::snprintf(buf, sizeof buf, ",%.6f", *m.n_alpha[i]);
      row += buf;
    } else {
      row += ",";
    }
  }
  row += "," + std::to_string(m.cycles) + "," + std::to_string(m.tokens);
  return row;
}

PairedBootstrap paired_bootstrap(std::span<const double> a, std::span<const double> b, std::size_t resamples,
                                 std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw Error("paired_bootstrap: need equal-length non-empty samples");
  if (resamples < 2) throw Error("paired_bootstrap: need at least two resamples");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a[i] - b[i];
    mean += diff[i];
  }
  mean /= static_cast<double>(n);
  RngState rng(seed);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += diff[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  PairedBootstrap r;
  r.mean_difference = mean;
  r.lower = quantile(0.025);
  r.upper = quantile(0.975);
  r.half_width = 0.5 * (r.upper - r.lower);
  return r;
}

}  // namespace mmspec
