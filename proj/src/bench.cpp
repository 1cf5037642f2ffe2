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

#include "bdi/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "bdi/errors.hpp"

namespace bdi::bench {

namespace fs = std::filesystem;

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (MethodId m : c.methods) methods.push_back(method_name(m));
  return {{"version", kReportSchemaVersion},
          {"env", sweep::env_config_to_json(c.env)},
          {"gains", sweep::pid_gains_to_json(c.gains)},
          {"injection", injection_config_to_json(c.injection)},
          {"model", iomgp_config_to_json(c.model)},
          {"methods", methods},
          {"seeds", c.seeds},
          {"test_trials", c.test_trials},
          {"round_eval_trials", c.round_eval_trials},
          {"mode_policy", c.mode_policy},
          {"eval_seed", c.eval_seed},
          {"output_dir", c.output_dir},
          {"jobs", c.jobs}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("experiment config must be a JSON object");
  ExperimentConfig c;
  try {
    if (j.contains("version") && j.at("version").get<int>() != kReportSchemaVersion) {
      throw InputError("unsupported config version");
    }
    if (j.contains("env")) c.env = sweep::env_config_from_json(j.at("env"));
    // Three boxes need a longer episode unless the file says otherwise.
    if (c.env.n_boxes == 3 && !(j.contains("env") && j.at("env").contains("horizon"))) {
      c.env.horizon = 300;
    }
    if (j.contains("gains")) c.gains = sweep::pid_gains_from_json(j.at("gains"));
    if (j.contains("injection")) c.injection = injection_config_from_json(j.at("injection"));
    if (j.contains("model")) c.model = iomgp_config_from_json(j.at("model"));
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(method_from_name(m.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.test_trials = j.value("test_trials", c.test_trials);
    c.round_eval_trials = j.value("round_eval_trials", c.round_eval_trials);
    c.mode_policy = j.value("mode_policy", c.mode_policy);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad experiment config: ") + e.what());
  }
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  sweep::validate(c.env);
  if (c.test_trials < 1) throw InputError("test_trials must be >= 1");
  if (c.round_eval_trials < 0) throw InputError("round_eval_trials must be >= 0");
  if (c.seeds.empty()) throw InputError("seeds must be non-empty");
  if (c.methods.empty()) throw InputError("methods must be non-empty");
  if (c.jobs < 1) throw InputError("jobs must be >= 1");
  mode_policy_from_name(c.mode_policy);
}

std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("output_dir");
  j.erase("jobs");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PolicyFactory expert_policy(int n_boxes, const sweep::PidGains& gains) {
  return [n_boxes, gains](int trial) -> sweep::Policy {
    auto expert = std::make_shared<sweep::PidExpert>(sweep::sweep_order(n_boxes, trial % 2), gains);
    return [expert](const sweep::SweepWorld& w, const Vector&) { return expert->intended_action(w); };
  };
}

PolicyFactory zero_policy() {
  return [](int) -> sweep::Policy {
    return [](const sweep::SweepWorld&, const Vector&) { return sweep::Vec2::Zero().eval(); };
  };
}

PolicyFactory model_policy(std::shared_ptr<const IomgpModel> model, const ModePolicy& mode,
                           std::uint64_t seed) {
  if (!model || !model->has_components()) throw InputError("model_policy: model is not fitted");
  if (model->action_dim() != 2) throw InputError("model_policy: sweep policies need D = 2");
  return [model, mode, seed](int trial) -> sweep::Policy {
    auto selector = std::make_shared<ModeSelector>(
        mode, derive_seed(seed, 300, static_cast<std::uint64_t>(trial)));
    selector->begin_episode(*model);
    return [model, selector](const sweep::SweepWorld& w, const Vector& obs) {
      const Vector a = selector->select(*model, obs);
      const sweep::Vec2 v(a(0), a(1));
      if (v.allFinite()) selector->observe_executed(sweep::clamp_action(w, v));
      return v;
    };
  };
}

sweep::SweepWorld trial_start(const sweep::EnvConfig& env, std::uint64_t eval_seed, int trial) {
  return sweep::reset(env, env.start_perturbation,
                      derive_seed(eval_seed, 400, static_cast<std::uint64_t>(trial)));
}

void summarize(EvalSummary& s) {
  const double n = static_cast<double>(s.trials.size());
  if (s.trials.empty()) {
    s.mean_score = s.std_score = s.success_rate = s.percent_of_expert = 0.0;
    return;
  }
  double sum = 0.0;
  double wins = 0.0;
  for (const auto& t : s.trials) {
    sum += t.score;
    wins += t.success ? 1.0 : 0.0;
  }
  s.mean_score = sum / n;
  double ss = 0.0;
  for (const auto& t : s.trials) ss += (t.score - s.mean_score) * (t.score - s.mean_score);
  s.std_score = s.trials.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.success_rate = wins / n;
  const double ref = s.expert_mean > 0.0 ? s.expert_mean : static_cast<double>(s.n_boxes);
  s.percent_of_expert = 100.0 * s.mean_score / ref;
}

EvalSummary evaluate(const sweep::EnvConfig& env, const PolicyFactory& policy, int trials,
                     std::uint64_t eval_seed, const std::string& method, std::uint64_t seed,
                     double expert_mean) {
  if (trials < 1) throw InputError("evaluate: trials must be >= 1");
  EvalSummary s;
  s.method = method;
  s.seed = seed;
  s.n_boxes = env.n_boxes;
  s.expert_mean = expert_mean;
  for (int t = 0; t < trials; ++t) {
    const auto ep = sweep::rollout(trial_start(env, eval_seed, t), policy(t), env.horizon);
    s.trials.push_back({t, ep.score, ep.success});
  }
  summarize(s);
  return s;
}

nlohmann::json eval_to_json(const EvalSummary& s) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : s.trials) {
    trials.push_back({{"trial", t.trial}, {"score", t.score}, {"success", t.success}});
  }
  return {{"version", kReportSchemaVersion},
          {"method", s.method},
          {"seed", s.seed},
          {"n_boxes", s.n_boxes},
          {"mean_score", s.mean_score},
          {"std_score", s.std_score},
          {"success_rate", s.success_rate},
          {"expert_mean", s.expert_mean},
          {"percent_of_expert", s.percent_of_expert},
          {"trials", trials}};
}

EvalSummary eval_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kReportSchemaVersion) throw InputError("unsupported eval version");
    EvalSummary s;
    s.method = j.at("method").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_boxes = j.at("n_boxes").get<int>();
    s.expert_mean = j.value("expert_mean", 0.0);
    for (const auto& t : j.at("trials")) {
      s.trials.push_back({t.at("trial").get<int>(), t.at("score").get<int>(), t.at("success").get<bool>()});
    }
    summarize(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad eval file: ") + e.what());
  }
}

std::string trials_csv(const std::vector<EvalSummary>& evals) {
  std::ostringstream out;
  out << "method,seed,trial,score,success\n";
  for (const auto& e : evals) {
    for (const auto& t : e.trials) {
      out << e.method << ',' << e.seed << ',' << t.trial << ',' << t.score << ','
          << (t.success ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RoundEval round_eval_from(const RoundRecord& rec, int round, const EvalSummary& s) {
  return {round, rec.n_data, s.mean_score, s.std_score, s.success_rate, s.percent_of_expert};
}

}  // namespace

CellResult run_cell(const ExperimentConfig& cfg, MethodId method, std::uint64_t seed,
                    double expert_mean, const std::string& artifact_dir) {
  CellResult cell;
  cell.method = method;
  cell.seed = seed;
  cell.eval.method = method_name(method);
  cell.eval.seed = seed;
  cell.eval.n_boxes = cfg.env.n_boxes;
  const ModePolicy mode = mode_policy_from_name(cfg.mode_policy);
  if (!artifact_dir.empty()) fs::create_directories(artifact_dir);

  int round = 0;
  RoundCallback on_round = [&](const RoundRecord& rec, const IomgpModel& model) {
    if (cfg.round_eval_trials > 0) {
      auto shared = std::make_shared<const IomgpModel>(model);
      const auto s = evaluate(cfg.env, model_policy(shared, mode, seed), cfg.round_eval_trials,
                              cfg.eval_seed, method_name(method), seed, expert_mean);
      cell.per_round.push_back(round_eval_from(rec, round, s));
    }
    if (!artifact_dir.empty()) {
      write_json_file((fs::path(artifact_dir) / "dataset.json").string(), dataset_to_json(model.data));
    }
    ++round;
  };

  try {
    PidSupervisor sup(cfg.env.n_boxes, cfg.gains);
    RunResult run = run_bdi(cfg.env, sup, method, cfg.injection, cfg.model, seed, on_round);
    cell.trace = run.trace;
    auto shared = std::make_shared<const IomgpModel>(std::move(run.model));
    cell.eval = evaluate(cfg.env, model_policy(shared, mode, seed), cfg.test_trials, cfg.eval_seed,
                         method_name(method), seed, expert_mean);
    cell.ok = true;
    if (!artifact_dir.empty()) {
      const fs::path dir(artifact_dir);
      write_json_file((dir / "model.json").string(), model_to_json(*shared));
      write_json_file((dir / "trace.json").string(), trace_to_json(cell.trace));
      write_json_file((dir / "eval.json").string(), eval_to_json(cell.eval));
      write_text_file((dir / "trials.csv").string(), trials_csv({cell.eval}));
    }
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

BenchReport run_bench(const ExperimentConfig& cfg, const ProgressFn& progress) {
  validate(cfg);
  BenchReport report;
  report.config_hash = config_hash(cfg);
  report.seeds = cfg.seeds;
  report.expert = evaluate(cfg.env, expert_policy(cfg.env.n_boxes, cfg.gains), cfg.test_trials,
                           cfg.eval_seed, "EXPERT", 0);
  const double expert_mean = report.expert.mean_score;
  report.expert.expert_mean = expert_mean;
  summarize(report.expert);

  struct Job {
    MethodId method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (MethodId m : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({m, seed});
  }
  report.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const std::string dir = cfg.output_dir.empty()
                                  ? std::string()
                                  : (fs::path(cfg.output_dir) / method_name(job.method) /
                                     ("seed_" + std::to_string(job.seed)))
                                        .string();
      report.cells[i] = run_cell(cfg, job.method, job.seed, expert_mean, dir);
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        progress(report.cells[i]);
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (MethodId m : cfg.methods) {
    MethodAggregate agg;
    agg.method = method_name(m);
    EvalSummary pooled;
    pooled.n_boxes = cfg.env.n_boxes;
    pooled.expert_mean = expert_mean;
    double sigma_sum = 0.0;
    for (const auto& c : report.cells) {
      if (c.method != m) continue;
      ++agg.cells;
      if (!c.ok) {
        ++agg.failed_cells;
        continue;
      }
      pooled.trials.insert(pooled.trials.end(), c.eval.trials.begin(), c.eval.trials.end());
      if (!c.trace.rounds.empty()) sigma_sum += c.trace.rounds.back().sigma2_next;
    }
    summarize(pooled);
    agg.mean_score = pooled.mean_score;
    agg.std_score = pooled.std_score;
    agg.success_rate = pooled.success_rate;
    agg.percent_of_expert = pooled.percent_of_expert;
    const int ok = agg.cells - agg.failed_cells;
    agg.mean_final_sigma2 = ok > 0 ? sigma_sum / ok : 0.0;
    report.methods.push_back(agg);
  }
  return report;
}

nlohmann::json report_to_json(const BenchReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& pr : c.per_round) {
      rounds.push_back({{"round", pr.round},
                        {"n_data", pr.n_data},
                        {"mean_score", pr.mean_score},
                        {"std_score", pr.std_score},
                        {"success_rate", pr.success_rate},
                        {"percent_of_expert", pr.percent_of_expert}});
    }
    cells.push_back({{"method", method_name(c.method)},
                     {"seed", c.seed},
                     {"ok", c.ok},
                     {"error", c.error},
                     {"trace", trace_to_json(c.trace)},
                     {"eval", eval_to_json(c.eval)},
                     {"per_round", rounds}});
  }
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods) {
    methods.push_back({{"method", m.method},
                       {"cells", m.cells},
                       {"failed_cells", m.failed_cells},
                       {"mean_score", m.mean_score},
                       {"std_score", m.std_score},
                       {"success_rate", m.success_rate},
                       {"percent_of_expert", m.percent_of_expert},
                       {"mean_final_sigma2", m.mean_final_sigma2}});
  }
  return {{"version", kReportSchemaVersion},
          {"provenance", {{"config_hash", r.config_hash}, {"code_version", r.code_version}, {"seeds", r.seeds}}},
          {"expert", eval_to_json(r.expert)},
          {"methods", methods},
          {"cells", cells}};
}

std::string performance_vs_round_csv(const BenchReport& r) {
  std::ostringstream out;
  out << "method,seed,round,n_data,mean_score,std_score,success_rate,percent_of_expert\n";
  for (const auto& c : r.cells) {
    for (const auto& pr : c.per_round) {
      out << method_name(c.method) << ',' << c.seed << ',' << pr.round << ',' << pr.n_data << ','
          << fmt(pr.mean_score) << ',' << fmt(pr.std_score) << ',' << fmt(pr.success_rate) << ','
          << fmt(pr.percent_of_expert) << '\n';
    }
  }
  return out.str();
}

std::string noise_vs_round_csv(const BenchReport& r) {
  std::ostringstream out;
  out << "method,seed,round,sigma2_collected,sigma2_next\n";
  for (const auto& c : r.cells) {
    if (!is_bdi(c.method)) continue;
    for (std::size_t k = 0; k < c.trace.rounds.size(); ++k) {
      const auto& rec = c.trace.rounds[k];
      out << method_name(c.method) << ',' << c.seed << ',' << k << ',' << fmt(rec.sigma2_collected)
          << ',' << fmt(rec.sigma2_next) << '\n';
    }
  }
  return out.str();
}

void write_report(const BenchReport& r, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_json_file((d / "report.json").string(), report_to_json(r));
  std::vector<EvalSummary> evals;
  for (const auto& c : r.cells) {
    if (c.ok) evals.push_back(c.eval);
  }
  write_text_file((d / "trials.csv").string(), trials_csv(evals));
  write_text_file((d / "performance_vs_round.csv").string(), performance_vs_round_csv(r));
  write_text_file((d / "noise_vs_round.csv").string(), noise_vs_round_csv(r));
}

nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < t.size(); ++i) {
    steps.push_back({{"s", vector_to_json(t.states[i])},
                     {"intended", vector_to_json(t.intended[i])},
                     {"executed", vector_to_json(t.executed[i])}});
  }
  const int q = t.states.empty() ? 0 : static_cast<int>(t.states.front().size());
  const int d = t.intended.empty() ? 0 : static_cast<int>(t.intended.front().size());
  return {{"version", kReportSchemaVersion},
          {"Q", q},
          {"D", d},
          {"score", t.score},
          {"success", t.success},
          {"steps", steps}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kReportSchemaVersion) throw InputError("unsupported trajectory version");
    Trajectory t;
    const auto q = j.at("Q").get<Eigen::Index>();
    const auto d = j.at("D").get<Eigen::Index>();
    for (const auto& s : j.at("steps")) {
      t.states.push_back(vector_from_json(s.at("s")));
      t.intended.push_back(vector_from_json(s.at("intended")));
      t.executed.push_back(vector_from_json(s.at("executed")));
      if (t.states.back().size() != q || t.intended.back().size() != d || t.executed.back().size() != d) {
        throw InputError("trajectory step has the wrong dimension");
      }
    }
    t.score = j.value("score", 0);
    t.success = j.value("success", false);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad trajectory file: ") + e.what());
  }
}

std::vector<PlotRow> plot_rows(const IomgpModel& model, const Trajectory& traj) {
  if (model.action_dim() != 2) throw InputError("plot_rows: expected D = 2");
  std::vector<PlotRow> rows;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const auto modes = predict_modes(model, traj.states[t]);
    for (std::size_t m = 0; m < modes.size(); ++m) {
      PlotRow row;
      row.t = static_cast<int>(t);
      row.mode = static_cast<int>(m);
      row.weight = modes[m].weight;
      row.mean_x = modes[m].mean(0);
      row.mean_y = modes[m].mean(1);
      row.var_x = modes[m].variance(0);
      row.var_y = modes[m].variance(1);
      row.executed_x = traj.executed[t](0);
      row.executed_y = traj.executed[t](1);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string plot_csv(const std::vector<PlotRow>& rows) {
  std::ostringstream out;
  out << "t,mode,weight,mean_x,mean_y,var_x,var_y,executed_x,executed_y\n";
  for (const auto& r : rows) {
    out << r.t << ',' << r.mode << ',' << fmt(r.weight) << ',' << fmt(r.mean_x) << ','
        << fmt(r.mean_y) << ',' << fmt(r.var_x) << ',' << fmt(r.var_y) << ',' << fmt(r.executed_x)
        << ',' << fmt(r.executed_y) << '\n';
  }
  return out.str();
}

std::vector<PlotRow> parse_plot_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "t,mode,weight,mean_x,mean_y,var_x,var_y,executed_x,executed_y") {
    throw InputError("plot csv: unexpected header");
  }
  std::vector<PlotRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw InputError("plot csv: expected 9 columns");
    try {
      PlotRow r;
      r.t = std::stoi(f[0]);
      r.mode = std::stoi(f[1]);
      r.weight = std::stod(f[2]);
      r.mean_x = std::stod(f[3]);
      r.mean_y = std::stod(f[4]);
      r.var_x = std::stod(f[5]);
      r.var_y = std::stod(f[6]);
      r.executed_x = std::stod(f[7]);
      r.executed_y = std::stod(f[8]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw InputError("plot csv: bad number in line: " + line);
    }
  }
  return rows;
}

sweep::EpisodeResult model_rollout(const sweep::EnvConfig& env,
                                   std::shared_ptr<const IomgpModel> model,
                                   const ModePolicy& mode, std::uint64_t eval_seed, int trial) {
  const auto factory = model_policy(std::move(model), mode, eval_seed);
  return sweep::rollout(trial_start(env, eval_seed, trial), factory(trial), env.horizon);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace bdi::bench
