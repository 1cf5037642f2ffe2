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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdi/disturbance_loop.hpp"
#include "bdi/iomgp.hpp"
#include "bdi/sweep_env.hpp"

namespace bdi::bench {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

struct ExperimentConfig {
  sweep::EnvConfig env;
  sweep::PidGains gains;
  InjectionConfig injection;
  IomgpConfig model;
  std::vector<MethodId> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int test_trials = 100;
  // Trials used to score the intermediate model after every round; 0 skips.
  int round_eval_trials = 20;
  std::string mode_policy = "local";
  std::uint64_t eval_seed = 20260;
  std::string output_dir = "results";
  // Grid cells run concurrently on this many threads.
  int jobs = 1;
};

nlohmann::json config_to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; invalid values raise InputError.
ExperimentConfig config_from_json(const nlohmann::json& j);
void validate(const ExperimentConfig& c);
/// Hex FNV-1a digest of the canonical config JSON without output_dir.
std::string config_hash(const ExperimentConfig& c);

/// Builds a fresh policy for each test trial.
using PolicyFactory = std::function<sweep::Policy(int trial)>;

PolicyFactory expert_policy(int n_boxes, const sweep::PidGains& gains = {});
PolicyFactory zero_policy();
PolicyFactory model_policy(std::shared_ptr<const IomgpModel> model, const ModePolicy& mode,
                           std::uint64_t seed);

struct TrialResult {
  int trial = 0;
  int score = 0;
  bool success = false;
};

struct EvalSummary {
  std::string method;
  std::uint64_t seed = 0;
  int n_boxes = 2;
  std::vector<TrialResult> trials;
  double mean_score = 0.0;
  double std_score = 0.0;  // sample standard deviation
  double success_rate = 0.0;
  double expert_mean = 0.0;
  double percent_of_expert = 0.0;
};

/// Start state of test trial `trial`: shared by every method so comparisons
/// use common random numbers.
sweep::SweepWorld trial_start(const sweep::EnvConfig& env, std::uint64_t eval_seed, int trial);

/// Exactly `trials` rollouts from perturbed starts.
EvalSummary evaluate(const sweep::EnvConfig& env, const PolicyFactory& policy, int trials,
                     std::uint64_t eval_seed, const std::string& method = "",
                     std::uint64_t seed = 0, double expert_mean = 0.0);
/// Recomputes the statistics of `s` from its trial list.
void summarize(EvalSummary& s);

nlohmann::json eval_to_json(const EvalSummary& s);
EvalSummary eval_from_json(const nlohmann::json& j);
/// Rows {method, seed, trial, score, success}.
std::string trials_csv(const std::vector<EvalSummary>& evals);

struct RoundEval {
  int round = 0;
  Eigen::Index n_data = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
  double success_rate = 0.0;
  double percent_of_expert = 0.0;
};

struct CellResult {
  MethodId method = MethodId::MGP_BDI;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  BenchTrace trace;
  EvalSummary eval;
  std::vector<RoundEval> per_round;
};

struct MethodAggregate {
  std::string method;
  int cells = 0;
  int failed_cells = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
  double success_rate = 0.0;
  double percent_of_expert = 0.0;
  double mean_final_sigma2 = 0.0;
};

struct BenchReport {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::vector<std::uint64_t> seeds;
  EvalSummary expert;
  std::vector<CellResult> cells;
  std::vector<MethodAggregate> methods;
};

nlohmann::json report_to_json(const BenchReport& r);
/// Rows {method, seed, round, n_data, mean_score, std_score, success_rate,
/// percent_of_expert}.
std::string performance_vs_round_csv(const BenchReport& r);
/// Rows {method, seed, round, sigma2_collected, sigma2_next}; BDI methods only.
std::string noise_vs_round_csv(const BenchReport& r);

/// Train and evaluate one (method, seed) cell. When `artifact_dir` is
/// non-empty the model, dataset, trace and evaluation are written there.
CellResult run_cell(const ExperimentConfig& cfg, MethodId method, std::uint64_t seed,
                    double expert_mean, const std::string& artifact_dir = "");

using ProgressFn = std::function<void(const CellResult&)>;

/// The full grid. Failed cells are recorded and the grid continues.
BenchReport run_bench(const ExperimentConfig& cfg, const ProgressFn& progress = {});
/// Writes report.json, trials.csv, performance_vs_round.csv and
/// noise_vs_round.csv into `dir`.
void write_report(const BenchReport& r, const std::string& dir);

nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

struct PlotRow {
  int t = 0;
  int mode = 0;
  double weight = 0.0;
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  double executed_x = 0.0;
  double executed_y = 0.0;
  bool operator==(const PlotRow&) const = default;
};

/// One row per (step, mode) along `traj`.
std::vector<PlotRow> plot_rows(const IomgpModel& model, const Trajectory& traj);
std::string plot_csv(const std::vector<PlotRow>& rows);
std::vector<PlotRow> parse_plot_csv(const std::string& text);

/// Rollout of `model` from trial start `trial`.
sweep::EpisodeResult model_rollout(const sweep::EnvConfig& env,
                                   std::shared_ptr<const IomgpModel> model,
                                   const ModePolicy& mode, std::uint64_t eval_seed, int trial);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace bdi::bench
