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

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "bdi/bench.hpp"
#include "bdi/demo_server.hpp"
#include "bdi/demo_session.hpp"
#include "bdi/errors.hpp"

namespace fs = std::filesystem;
using namespace bdi;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Precedence: --out flag, then the config file, then BDI_OUTPUT_DIR.
std::string resolve_output_dir(const std::string& flag, const nlohmann::json& file,
                               const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (file.is_object() && file.contains("output_dir")) return file.at("output_dir").get<std::string>();
  if (const char* env = std::getenv("BDI_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

struct LoadedConfig {
  bench::ExperimentConfig cfg;
  nlohmann::json raw;
};

LoadedConfig load_config(const std::string& path, const std::string& out_flag) {
  if (path.empty()) throw UsageError("--config is required");
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  LoadedConfig lc;
  lc.raw = read_json_file(path);
  lc.cfg = bench::config_from_json(lc.raw);
  lc.cfg.output_dir = resolve_output_dir(out_flag, lc.raw, lc.cfg.output_dir);
  return lc;
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::uint64_t>& flag,
                                       const std::vector<std::uint64_t>& fallback) {
  return flag.empty() ? fallback : flag;
}

demo::DemoServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void print_summary(const bench::EvalSummary& s) {
  std::cout << s.method << " seed " << s.seed << ": mean " << s.mean_score << " +- " << s.std_score
            << " (" << s.percent_of_expert << "% of expert, success " << 100.0 * s.success_rate
            << "%)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-GP imitation learning with Bayesian disturbance injection"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  std::string global_config;
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  app.add_option("--config", global_config, "Experiment config used by --print-config");

  // train
  auto* train = app.add_subcommand("train", "Run the collection/fit loop for one method and seed");
  std::string train_config, train_method = "MGP_BDI", train_out;
  std::uint64_t train_seed = 0;
  train->add_option("--config", train_config, "Experiment config JSON");
  train->add_option("--method", train_method, "UGP_BC, UGP_BDI, MGP_BC or MGP_BDI");
  train->add_option("--seed", train_seed, "Run seed");
  train->add_option("--out", train_out, "Artifact directory");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model, the expert, or the zero policy");
  std::string eval_config, eval_model, eval_out, eval_method;
  bool eval_expert = false, eval_zero = false;
  int eval_trials = 0;
  std::uint64_t eval_seed = 0;
  eval->add_option("--config", eval_config, "Experiment config JSON");
  eval->add_option("--model", eval_model, "Model snapshot");
  eval->add_flag("--expert", eval_expert, "Evaluate the PID expert instead of a model");
  eval->add_flag("--zero", eval_zero, "Evaluate the zero-action policy");
  eval->add_option("--trials", eval_trials, "Test trials (default from config)");
  eval->add_option("--seed", eval_seed, "Seed label for the output rows");
  eval->add_option("--method", eval_method, "Method label for the output rows");
  eval->add_option("--out", eval_out, "Output directory");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run the method x seed grid");
  std::string bench_config, bench_out;
  std::vector<std::uint64_t> bench_seeds;
  std::vector<std::string> bench_methods;
  int bench_trials = 0;
  bench_cmd->add_option("--config", bench_config, "Experiment config JSON");
  bench_cmd->add_option("--out", bench_out, "Output directory");
  bench_cmd->add_option("--seeds", bench_seeds, "Override seeds")->delimiter(',');
  bench_cmd->add_option("--methods", bench_methods, "Override methods")->delimiter(',');
  bench_cmd->add_option("--trials", bench_trials, "Override test trials");

  // export-plots
  auto* plots = app.add_subcommand("export-plots", "Per-step per-mode predictive bands as CSV");
  std::string plots_config, plots_model, plots_traj, plots_out;
  int plots_trial = 0;
  plots->add_option("--config", plots_config, "Experiment config JSON");
  plots->add_option("--model", plots_model, "Model snapshot")->required();
  plots->add_option("--trajectory", plots_traj, "Trajectory file; default rolls the model out");
  plots->add_option("--trial", plots_trial, "Test trial start used for the rollout");
  plots->add_option("--out", plots_out, "Output CSV path");

  // demo-serve
  auto* serve = app.add_subcommand("demo-serve", "Serve live demonstration sessions over HTTP");
  std::string serve_config, serve_model, serve_fragments, serve_static, serve_host = "127.0.0.1";
  int serve_port = 8765;
  double serve_sigma2 = -1.0;
  bool serve_lockstep = false;
  serve->add_option("--config", serve_config, "Environment or experiment config JSON");
  serve->add_option("--port", serve_port, "TCP port");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--sigma2", serve_sigma2, "Injection variance for new sessions");
  serve->add_option("--model", serve_model, "Take the injection variance from this model");
  serve->add_option("--fragments", serve_fragments, "Directory for accepted fragments");
  serve->add_option("--static", serve_static, "Directory of static files served at /");
  serve->add_flag("--lockstep", serve_lockstep, "Advance only on step requests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (print_config) {
      bench::ExperimentConfig cfg;
      nlohmann::json raw = nlohmann::json::object();
      if (!global_config.empty()) {
        if (!fs::exists(global_config)) throw UsageError("config file not found: " + global_config);
        raw = read_json_file(global_config);
        cfg = bench::config_from_json(raw);
      }
      cfg.output_dir = resolve_output_dir("", raw, cfg.output_dir);
      std::cout << bench::config_to_json(cfg).dump(2) << '\n';
      return 0;
    }

    if (*train) {
      const auto lc = load_config(train_config, train_out);
      const MethodId method = method_from_name(train_method);
      const fs::path dir = fs::path(lc.cfg.output_dir);
      fs::create_directories(dir);
      PidSupervisor sup(lc.cfg.env.n_boxes, lc.cfg.gains);
      // Every round rewrites the dataset so a failed fit leaves it behind.
      RoundCallback keep = [&](const RoundRecord& rec, const IomgpModel& m) {
        write_json_file((dir / "dataset.json").string(), dataset_to_json(m.data));
        std::cerr << "round " << m.data.round_count() << ": N=" << rec.n_data
                  << " sigma2_next=" << rec.sigma2_next << " elbo=" << rec.elbo << '\n';
      };
      RunResult run = run_bdi(lc.cfg.env, sup, method, lc.cfg.injection, lc.cfg.model, train_seed, keep);
      write_json_file((dir / "model.json").string(), model_to_json(run.model));
      write_json_file((dir / "trace.json").string(), trace_to_json(run.trace));
      std::cout << "wrote " << (dir / "model.json").string() << ", dataset.json, trace.json\n";
      return 0;
    }

    if (*eval) {
      const auto lc = load_config(eval_config, eval_out);
      const int trials = eval_trials > 0 ? eval_trials : lc.cfg.test_trials;
      const int modes = (eval_expert ? 1 : 0) + (eval_zero ? 1 : 0) + (eval_model.empty() ? 0 : 1);
      if (modes != 1) throw UsageError("eval needs exactly one of --model, --expert, --zero");
      const double expert_mean =
          bench::evaluate(lc.cfg.env, bench::expert_policy(lc.cfg.env.n_boxes, lc.cfg.gains), trials,
                          lc.cfg.eval_seed)
              .mean_score;
      bench::EvalSummary s;
      if (eval_expert) {
        s = bench::evaluate(lc.cfg.env, bench::expert_policy(lc.cfg.env.n_boxes, lc.cfg.gains),
                            trials, lc.cfg.eval_seed, eval_method.empty() ? "EXPERT" : eval_method,
                            eval_seed, expert_mean);
      } else if (eval_zero) {
        s = bench::evaluate(lc.cfg.env, bench::zero_policy(), trials, lc.cfg.eval_seed,
                            eval_method.empty() ? "ZERO" : eval_method, eval_seed, expert_mean);
      } else {
        auto model = std::make_shared<const IomgpModel>(model_from_json(read_json_file(eval_model)));
        if (model->state_dim() != 2 * lc.cfg.env.n_boxes) {
          throw InputError("model state dimension does not match the environment");
        }
        s = bench::evaluate(lc.cfg.env,
                            bench::model_policy(model, mode_policy_from_name(lc.cfg.mode_policy),
                                                eval_seed),
                            trials, lc.cfg.eval_seed, eval_method.empty() ? "MODEL" : eval_method,
                            eval_seed, expert_mean);
      }
      const fs::path dir(lc.cfg.output_dir);
      fs::create_directories(dir);
      write_json_file((dir / "eval.json").string(), bench::eval_to_json(s));
      bench::write_text_file((dir / "trials.csv").string(), bench::trials_csv({s}));
      print_summary(s);
      return 0;
    }

    if (*bench_cmd) {
      auto lc = load_config(bench_config, bench_out);
      lc.cfg.seeds = parse_seeds(bench_seeds, lc.cfg.seeds);
      if (!bench_methods.empty()) {
        lc.cfg.methods.clear();
        for (const auto& m : bench_methods) lc.cfg.methods.push_back(method_from_name(m));
      }
      if (bench_trials > 0) lc.cfg.test_trials = bench_trials;
      const auto report = bench::run_bench(lc.cfg, [](const bench::CellResult& c) {
        if (c.ok) {
          print_summary(c.eval);
        } else {
          std::cout << method_name(c.method) << " seed " << c.seed << ": FAILED " << c.error << '\n';
        }
        std::cout.flush();
      });
      bench::write_report(report, lc.cfg.output_dir);
      for (const auto& m : report.methods) {
        std::cout << m.method << ": " << m.percent_of_expert << "% of expert over " << m.cells
                  << " seeds (" << m.failed_cells << " failed), final sigma2 " << m.mean_final_sigma2
                  << '\n';
      }
      std::cout << "report written to " << lc.cfg.output_dir << '\n';
      return 0;
    }

    if (*plots) {
      bench::ExperimentConfig cfg;
      nlohmann::json raw = nlohmann::json::object();
      if (!plots_config.empty()) {
        const auto lc = load_config(plots_config, "");
        cfg = lc.cfg;
        raw = lc.raw;
      }
      auto model = std::make_shared<const IomgpModel>(model_from_json(read_json_file(plots_model)));
      Trajectory traj;
      if (!plots_traj.empty()) {
        traj = bench::trajectory_from_json(read_json_file(plots_traj));
      } else {
        if (model->state_dim() != 2 * cfg.env.n_boxes) {
          throw InputError("model state dimension does not match the environment; pass --config");
        }
        traj = bench::model_rollout(cfg.env, model, mode_policy_from_name(cfg.mode_policy),
                                    cfg.eval_seed, plots_trial)
                   .trajectory;
      }
      std::string out = plots_out;
      if (out.empty()) {
        const fs::path dir(resolve_output_dir("", raw, cfg.output_dir));
        fs::create_directories(dir);
        out = (dir / "plot_modes.csv").string();
        write_json_file((dir / "plot_trajectory.json").string(), bench::trajectory_to_json(traj));
      }
      bench::write_text_file(out, bench::plot_csv(bench::plot_rows(*model, traj)));
      std::cout << "wrote " << out << '\n';
      return 0;
    }

    if (*serve) {
      if (serve_config.empty()) throw UsageError("--config is required");
      if (!fs::exists(serve_config)) throw UsageError("config file not found: " + serve_config);
      const nlohmann::json raw = read_json_file(serve_config);
      const sweep::EnvConfig env = raw.contains("env") ? bench::config_from_json(raw).env
                                                       : sweep::env_config_from_json(raw);
      double sigma2 = serve_sigma2;
      if (!serve_model.empty()) {
        sigma2 = demo::next_injection_variance(model_from_json(read_json_file(serve_model)));
      }
      if (sigma2 < 0.0) throw UsageError("demo-serve needs --sigma2 or --model");
      demo::SessionManager sessions(env, sigma2);
      demo::ServerOptions opts;
      opts.host = serve_host;
      opts.port = serve_port;
      opts.realtime = !serve_lockstep;
      opts.fragment_dir = serve_fragments.empty() ? resolve_output_dir("", raw, "results") + "/fragments"
                                                  : serve_fragments;
      opts.static_dir = serve_static;
      demo::DemoServer server(sessions, opts);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving on http://" << serve_host << ':' << serve_port << "/api (sigma2 "
                << sigma2 << ")\n";
      std::cout.flush();
      if (!server.run()) {
        std::cerr << "cannot bind " << serve_host << ':' << serve_port << '\n';
        return 1;
      }
      return 0;
    }

    std::cout << app.help();
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const CollectionError& e) {
    std::cerr << "collection failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
