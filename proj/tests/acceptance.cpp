// Copyright 2026 The BDI Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Positional arguments restrict the run
// to the listed criterion numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdi/bench.hpp"
#include "bdi/dataset.hpp"
#include "bdi/disturbance_loop.hpp"
#include "bdi/gp_core.hpp"
#include "bdi/iomgp.hpp"

#ifndef BDI_CONFIG_DIR
#define BDI_CONFIG_DIR "configs"
#endif

using namespace bdi;

namespace {

using Clock = std::chrono::steady_clock;

// Progress and results also go to acceptance_log.txt in the working
// directory, flushed per line, so a long run can be followed.
std::ofstream& log_file() {
  static std::ofstream f("acceptance_log.txt");
  return f;
}

void note(const std::string& line, bool to_stdout = false) {
  (to_stdout ? std::cout : std::cerr) << line << std::endl;
  log_file() << line << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome reduction_oracle() {
  constexpr int kN = 50, kQueries = 20;
  constexpr double kTol = 1e-6, kBudget = 5.0;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::normal_distribution<double> g(0.0, 0.1);
  Matrix s(kN, 1), a(kN, 1);
  for (int i = 0; i < kN; ++i) {
    s(i, 0) = u(rng);
    a(i, 0) = std::sin(s(i, 0)) + 0.5 * std::cos(2.0 * s(i, 0)) + g(rng);
  }
  RoundSegmentedDataset data(1, 1);
  data.append_round(s, a, 0.01);
  IomgpConfig cfg;
  cfg.truncation = 1;
  const IomgpModel model = fit(data, NoiseSchedule{0.01, {0.01}}, cfg);

  // Textbook regression with the fitted hyperparameters, dense algebra only.
  const double sf2 = model.kernels[0].signal_variance();
  const double ell = model.kernels[0].lengthscale();
  const double noise = model.noise.variances.back();
  auto k = [&](double x, double y) { return sf2 * std::exp(-0.5 * (x - y) * (x - y) / (ell * ell)); };
  Matrix c(kN, kN);
  for (int i = 0; i < kN; ++i)
    for (int j = 0; j < kN; ++j) c(i, j) = k(s(i, 0), s(j, 0)) + (i == j ? noise : 0.0);
  const Eigen::LDLT<Matrix> ldlt(c);
  const Vector alpha = ldlt.solve(a.col(0));

  double worst_mean = 0.0, worst_var = 0.0;
  for (int q = 0; q < kQueries; ++q) {
    const double x = -3.0 + 6.0 * (q + 0.5) / kQueries;
    Vector ks(kN);
    for (int i = 0; i < kN; ++i) ks(i) = k(x, s(i, 0));
    const double mean = ks.dot(alpha);
    const double var = sf2 - ks.dot(ldlt.solve(ks));
    Vector xq(1);
    xq << x;
    const auto modes = predict_modes(model, xq);
    worst_mean = std::max(worst_mean, std::abs(modes.at(0).mean(0) - mean));
    worst_var = std::max(worst_var, std::abs(modes.at(0).variance(0) - var));
  }
  const double t = seconds_since(t0);
  return {worst_mean < kTol && worst_var < kTol && t < kBudget,
          fmt("max |dmean| %.2e, max |dvar| %.2e (tol 1e-6), %.2f s (< 5 s)", worst_mean, worst_var, t)};
}

// ---------------------------------------------------------------- 2

RoundSegmentedDataset random_instance(std::mt19937_64& rng, int n, int q, int d, int rounds) {
  std::normal_distribution<double> g(0.0, 1.0);
  RoundSegmentedDataset data(q, d);
  for (int r = 0; r < rounds; ++r) {
    Matrix s(n, q), a(n, d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < q; ++j) s(i, j) = g(rng);
      const double branch = (i % 2 == 0) ? 1.0 : -1.0;
      for (int j = 0; j < d; ++j) a(i, j) = std::sin(s(i, 0) + j) + 0.7 * branch + 0.2 * g(rng);
    }
    data.append_round(s, a, 0.04);
  }
  return data;
}

Outcome elbo_monotone() {
  constexpr int kInstances = 50;
  constexpr double kRel = 1e-8, kBudget = 60.0;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  int updates = 0, violations = 0;
  double worst = 0.0;
  for (int inst = 0; inst < kInstances; ++inst) {
    const int m = 1 + inst % 4;
    const int rounds = 1 + inst % 3;
    const int per_round = std::max(4, (12 + 7 * (inst % 7)) / rounds);
    const int n_total = per_round * rounds;
    if (n_total > 60) return {false, "instance generator exceeded N = 60"};
    const auto data = random_instance(rng, per_round, 1 + inst % 3, 1 + inst % 2, rounds);
    IomgpConfig cfg;
    cfg.truncation = m;
    cfg.seed = static_cast<std::uint64_t>(inst);
    std::vector<double> vars(data.round_count(), 0.03 + 0.01 * (inst % 5));
    IomgpModel model = init_model(data, NoiseSchedule{vars.front(), vars}, cfg);
    model.stick = update_v(model);
    refresh_components(model);
    double prev = elbo(model);
    auto record = [&]() {
      const double now = elbo(model);
      const double drop = (prev - now) / std::abs(prev);
      worst = std::max(worst, drop);
      if (drop > kRel) ++violations;
      ++updates;
      prev = now;
    };
    for (int outer = 0; outer < 4; ++outer) {
      for (int sweep = 0; sweep < 3; ++sweep) {
        for (int c = 0; c < m; ++c) {
          model.components[static_cast<std::size_t>(c)] = update_component(model, c);
          record();
        }
        model.resp = update_z(model);
        record();
        model.stick = update_v(model);
        record();
      }
      model = optimize_hyperparams(model, HyperTarget::noise_last, cfg).model;
      record();
      model = optimize_hyperparams(model, HyperTarget::kernels, cfg).model;
      record();
    }
  }
  const double t = seconds_since(t0);
  return {violations == 0 && t < kBudget,
          fmt("%.0f updates, %.0f decreases beyond 1e-8|L| (worst relative drop %.2e), %.1f s (< 60 s)",
              updates, violations, worst, t)};
}

// ---------------------------------------------------------------- 3

Outcome gradient_check() {
  constexpr int kInstances = 20;
  constexpr double kRel = 1e-4, kBudget = 30.0, kStep = 1e-5;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> lp(-1.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < kInstances; ++inst) {
    const int m = 1 + inst % 3;
    const auto data = random_instance(rng, 15 + inst, 1 + inst % 3, 1 + inst % 2, 1 + inst % 2);
    IomgpConfig cfg;
    cfg.truncation = m;
    cfg.seed = static_cast<std::uint64_t>(inst);
    std::vector<double> vars(data.round_count(), 0.05);
    IomgpModel model = init_model(data, NoiseSchedule{0.05, vars}, cfg);
    model.stick = update_v(model);
    refresh_components(model);
    model.resp = update_z(model);
    const int c = inst % m;
    const KernelParams p{lp(rng), lp(rng)};
    const auto g = component_evidence(model, c, p);
    auto ev = [&](double dsf, double dell) {
      return component_evidence(model, c, {p.log_signal_variance + dsf, p.log_lengthscale + dell}).value;
    };
    const double fd_sf = (ev(kStep, 0) - ev(-kStep, 0)) / (2 * kStep);
    const double fd_ell = (ev(0, kStep) - ev(0, -kStep)) / (2 * kStep);
    auto rel = [](double a, double b) {
      const double scale = std::max(std::abs(a), std::abs(b));
      return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
    };
    worst = std::max({worst, rel(g.d_log_signal_variance, fd_sf), rel(g.d_log_lengthscale, fd_ell)});
  }
  const double t = seconds_since(t0);
  return {worst < kRel && t < kBudget,
          fmt("worst relative error %.2e (< 1e-4) over 20 instances, %.2f s (< 30 s)", worst, t)};
}

// ---------------------------------------------------------------- 4

Outcome mode_recovery() {
  constexpr int kSeeds = 10, kNeed = 8;
  constexpr double kNoiseSd = 0.05, kHalfGap = 1.0, kMass = 0.05, kBudget = 120.0;
  static_assert(2 * kHalfGap >= 10 * kNoiseSd);
  const auto t0 = Clock::now();
  int hits = 0;
  std::ostringstream counts;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(5000 + seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, kNoiseSd);
    Matrix s(100, 1), a(100, 1);
    for (int i = 0; i < 100; ++i) {
      s(i, 0) = u(rng);
      a(i, 0) = std::sin(2.0 * M_PI * s(i, 0)) + (i % 2 == 0 ? kHalfGap : -kHalfGap) + g(rng);
    }
    RoundSegmentedDataset data(1, 1);
    data.append_round(s, a, kNoiseSd * kNoiseSd);
    IomgpConfig cfg;
    cfg.truncation = 5;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const IomgpModel model = fit(data, NoiseSchedule{kNoiseSd * kNoiseSd, {kNoiseSd * kNoiseSd}}, cfg);
    const Vector mass = model.resp.r.colwise().sum().transpose() / static_cast<double>(model.size());
    const int occupied = static_cast<int>((mass.array() > kMass).count());
    counts << occupied;
    hits += occupied == 2 ? 1 : 0;
  }
  const double t = seconds_since(t0);
  return {hits >= kNeed && t < kBudget,
          "exactly two components in " + std::to_string(hits) + "/10 seeds (need 8; counts " +
              counts.str() + "), " + fmt("%.1f s (< 120 s)", t)};
}

// ---------------------------------------------------------------- 5-7

bench::ExperimentConfig load(const std::string& name) {
  auto cfg = bench::config_from_json(read_json_file(std::string(BDI_CONFIG_DIR) + "/" + name));
  cfg.round_eval_trials = 0;
  return cfg;
}

struct Grid {
  double expert_mean = 0.0;
  // [method][seed]
  std::map<MethodId, std::vector<bench::CellResult>> cells;
  std::map<MethodId, double> seconds;
};

Grid run_grid(const bench::ExperimentConfig& cfg, const std::vector<MethodId>& methods) {
  Grid g;
  g.expert_mean = bench::evaluate(cfg.env, bench::expert_policy(cfg.env.n_boxes, cfg.gains),
                                  cfg.test_trials, cfg.eval_seed)
                      .mean_score;
  for (MethodId m : methods) {
    const auto t0 = Clock::now();
    for (std::uint64_t seed : cfg.seeds) {
      const auto tc = Clock::now();
      g.cells[m].push_back(bench::run_cell(cfg, m, seed, g.expert_mean));
      const auto& c = g.cells[m].back();
      note("  " + method_name(m) + " seed " + std::to_string(seed) + ": " +
           (c.ok ? fmt("%.1f%% of expert", c.eval.percent_of_expert) : "FAILED " + c.error) +
           fmt(", N %.0f, %.0f s", static_cast<double>(c.trace.rounds.empty() ? 0 : c.trace.rounds.back().n_data),
               seconds_since(tc)));
    }
    g.seconds[m] = seconds_since(t0);
  }
  return g;
}

// Mean over seeds of the per-seed percent of expert; failed cells count as 0.
double mean_percent(const std::vector<bench::CellResult>& cells) {
  double s = 0.0;
  for (const auto& c : cells) s += c.ok ? c.eval.percent_of_expert : 0.0;
  return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
}

double final_sigma2(const bench::CellResult& c) {
  return c.trace.rounds.empty() ? 0.0 : c.trace.rounds.back().sigma2_next;
}

struct TwoBox {
  bool ran = false;
  Grid grid;
  bench::ExperimentConfig cfg;
};

TwoBox& two_box() {
  static TwoBox tb;
  if (!tb.ran) {
    tb.cfg = load("two_box.json");
    tb.cfg.injection.rounds = 5;
    tb.cfg.test_trials = 100;
    tb.cfg.seeds = {0, 1, 2, 3, 4};
    tb.grid = run_grid(tb.cfg, {std::begin(kAllMethods), std::end(kAllMethods)});
    tb.ran = true;
  }
  return tb;
}

Outcome flexibility() {
  constexpr double kUgpMax = 25.0, kMgpMin = 50.0, kBudget = 15 * 60.0;
  auto& tb = two_box();
  bool pass = true;
  std::ostringstream d;
  for (MethodId m : kAllMethods) {
    const double pct = mean_percent(tb.grid.cells[m]);
    const bool ok = is_mixture(m) ? pct >= kMgpMin : pct <= kUgpMax;
    const bool fast = tb.grid.seconds[m] < kBudget;
    pass = pass && ok && fast;
    d << method_name(m) << ' ' << fmt("%.1f%%", pct) << (is_mixture(m) ? " (>= 50)" : " (<= 25)")
      << (ok ? "" : " x") << fmt(" %.0f s", tb.grid.seconds[m]) << (fast ? "" : " (slow)") << "; ";
  }
  d << fmt("expert mean %.2f", tb.grid.expert_mean);
  return {pass, d.str()};
}

Outcome robustness() {
  constexpr int kNeedSeeds = 4;
  constexpr double kMin = 75.0;
  auto& tb = two_box();
  const auto& bdi = tb.grid.cells[MethodId::MGP_BDI];
  const auto& bc = tb.grid.cells[MethodId::MGP_BC];
  int wins = 0;
  std::ostringstream d;
  for (std::size_t i = 0; i < bdi.size(); ++i) {
    const double a = bdi[i].ok ? bdi[i].eval.mean_score : 0.0;
    const double b = bc[i].ok ? bc[i].eval.mean_score : 0.0;
    wins += a >= b ? 1 : 0;
    d << fmt("%.2f/%.2f ", a, b);
  }
  const double pct = mean_percent(bdi);
  return {wins >= kNeedSeeds && pct >= kMin,
          "MGP_BDI >= MGP_BC in " + std::to_string(wins) + "/5 seeds (need 4; " + d.str() +
              fmt("), MGP_BDI %.1f%% of expert (>= 75)", pct)};
}

Outcome noise_trend() {
  constexpr int kNeedSeeds = 4;
  constexpr double kFactor = 2.0;
  auto& tb = two_box();
  const auto& ugp = tb.grid.cells[MethodId::UGP_BDI];
  const auto& mgp = tb.grid.cells[MethodId::MGP_BDI];
  const double bound = 4.0 * tb.cfg.env.action_limit * tb.cfg.env.action_limit;
  int wins = 0;
  bool bounded = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < ugp.size(); ++i) {
    const bool ok = ugp[i].ok && mgp[i].ok;
    const double su = final_sigma2(ugp[i]), sm = final_sigma2(mgp[i]);
    wins += ok && su >= kFactor * sm ? 1 : 0;
    for (const auto& r : mgp[i].trace.rounds) {
      bounded = bounded && r.sigma2_collected <= bound && r.sigma2_next <= bound;
    }
    d << fmt("%.2e/%.2e ", su, sm);
  }
  return {wins >= kNeedSeeds && bounded,
          "UGP_BDI >= 2x MGP_BDI final sigma2 in " + std::to_string(wins) + "/5 seeds (need 4; " +
              d.str() + ")" + (bounded ? ", MGP_BDI trace within 4 limit^2" : ", MGP_BDI trace exceeds 4 limit^2")};
}

// ---------------------------------------------------------------- 8

Outcome three_box() {
  constexpr int kNeedSeeds = 3;
  constexpr double kMin = 60.0, kBudget = 45 * 60.0;
  auto cfg = load("three_box.json");
  cfg.env.n_boxes = 3;
  cfg.injection.rounds = 10;
  cfg.test_trials = 100;
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto t0 = Clock::now();
  const Grid g = run_grid(cfg, {MethodId::MGP_BDI});
  const double t = seconds_since(t0);
  int hits = 0;
  std::ostringstream d;
  for (const auto& c : g.cells.at(MethodId::MGP_BDI)) {
    const double pct = c.ok ? c.eval.percent_of_expert : 0.0;
    hits += pct >= kMin ? 1 : 0;
    d << fmt("%.1f ", pct);
  }
  return {hits >= kNeedSeeds && t < kBudget,
          "MGP_BDI >= 60% of expert in " + std::to_string(hits) + "/5 seeds (need 3; " + d.str() +
              fmt("), expert mean %.2f, %.0f s (< 2700 s)", g.expert_mean, t)};
}

// ---------------------------------------------------------------- 9

Outcome persistence() {
  auto cfg = load("two_box.json");
  cfg.injection.rounds = 2;
  std::string ds[2], tr[2];
  IomgpModel model;
  for (int rep = 0; rep < 2; ++rep) {
    PidSupervisor sup(cfg.env.n_boxes, cfg.gains);
    RunResult run = run_bdi(cfg.env, sup, MethodId::MGP_BDI, cfg.injection, cfg.model, 11);
    ds[rep] = dataset_to_json(run.model.data).dump();
    tr[rep] = trace_to_json(run.trace).dump();
    if (rep == 0) model = std::move(run.model);
  }
  const bool same = ds[0] == ds[1] && tr[0] == tr[1];

  const IomgpModel back = model_from_json(nlohmann::json::parse(model_to_json(model).dump()));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  double worst = 0.0;
  for (int q = 0; q < 50; ++q) {
    Vector x = model.data.states().row(q * 7 % model.size()).transpose();
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += 0.1 * u(rng);
    const auto a = predict_modes(model, x);
    const auto b = predict_modes(back, x);
    for (std::size_t m = 0; m < a.size(); ++m) {
      worst = std::max({worst, std::abs(a[m].weight - b[m].weight),
                        (a[m].mean - b[m].mean).cwiseAbs().maxCoeff(),
                        (a[m].variance - b[m].variance).cwiseAbs().maxCoeff()});
    }
  }
  return {same && worst <= 1e-15,
          std::string(same ? "datasets and traces byte-identical" : "repeated runs differ") +
              fmt(", snapshot max prediction difference %.1e (<= 1e-15)", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"UGP reduction oracle", reduction_oracle},
      {"ELBO monotonicity", elbo_monotone},
      {"kernel gradient check", gradient_check},
      {"mode recovery", mode_recovery},
      {"flexibility trend (two-box, K=5)", flexibility},
      {"robustness trend (two-box, K=5)", robustness},
      {"noise overestimation trend (two-box, K=5)", noise_trend},
      {"three-box scalability (K=10)", three_box},
      {"determinism and persistence", persistence},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    note(std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " + criteria[i].first +
             ": " + o.detail,
         true);
  }
  note(failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed", true);
  return failed == 0 ? 0 : 1;
}
