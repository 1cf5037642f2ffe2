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

#include "bdi/disturbance_loop.hpp"

#include <cmath>
#include <random>

#include "bdi/errors.hpp"

namespace bdi {

PidSupervisor::PidSupervisor(int n_boxes, sweep::PidGains gains)
    : n_boxes_(n_boxes), gains_(gains), expert_(sweep::sweep_order(n_boxes, 0), gains) {}

void PidSupervisor::begin_demo(int index) {
  expert_ = sweep::PidExpert(sweep::sweep_order(n_boxes_, index % 2), gains_);
}

sweep::Vec2 PidSupervisor::intended_action(const sweep::SweepWorld& world) {
  return expert_.intended_action(world);
}

nlohmann::json injection_config_to_json(const InjectionConfig& c) {
  return {{"initial_variance", c.initial_variance},
          {"rounds", c.rounds},
          {"demos_per_round", c.demos_per_round},
          {"enabled", c.enabled},
          {"record_stride", c.record_stride},
          {"redraw_budget", c.redraw_budget},
          {"bc_likelihood_variance", c.bc_likelihood_variance},
          {"demo_start_perturbation", c.demo_start_perturbation}};
}

InjectionConfig injection_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("injection config must be a JSON object");
  InjectionConfig c;
  try {
    c.initial_variance = j.value("initial_variance", c.initial_variance);
    c.rounds = j.value("rounds", c.rounds);
    c.demos_per_round = j.value("demos_per_round", c.demos_per_round);
    c.enabled = j.value("enabled", c.enabled);
    c.record_stride = j.value("record_stride", c.record_stride);
    c.redraw_budget = j.value("redraw_budget", c.redraw_budget);
    c.bc_likelihood_variance = j.value("bc_likelihood_variance", c.bc_likelihood_variance);
    c.demo_start_perturbation = j.value("demo_start_perturbation", c.demo_start_perturbation);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad injection config: ") + e.what());
  }
  if (!(c.initial_variance > 0.0)) throw InputError("initial_variance must be > 0");
  if (c.rounds < 1) throw InputError("rounds must be >= 1");
  if (c.demos_per_round < 1) throw InputError("demos_per_round must be >= 1");
  if (c.record_stride < 1) throw InputError("record_stride must be >= 1");
  if (c.redraw_budget < 0) throw InputError("redraw_budget must be >= 0");
  if (!(c.bc_likelihood_variance > 0.0)) throw InputError("bc_likelihood_variance must be > 0");
  if (!(c.demo_start_perturbation >= 0.0)) throw InputError("demo_start_perturbation must be >= 0");
  return c;
}

std::string method_name(MethodId m) {
  switch (m) {
    case MethodId::UGP_BC: return "UGP_BC";
    case MethodId::UGP_BDI: return "UGP_BDI";
    case MethodId::MGP_BC: return "MGP_BC";
    case MethodId::MGP_BDI: return "MGP_BDI";
  }
  return "?";
}

MethodId method_from_name(const std::string& name) {
  for (MethodId m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw InputError("unknown method '" + name + "' (expected UGP_BC, UGP_BDI, MGP_BC, MGP_BDI)");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

sweep::EpisodeResult collect_demo(const sweep::EnvConfig& env, Supervisor& supervisor,
                                  double sigma2, std::uint64_t seed, int demo_index,
                                  double start_perturbation) {
  if (!(sigma2 >= 0.0)) throw InputError("collect: sigma2 must be >= 0");
  sweep::SweepWorld world = sweep::reset(env, start_perturbation, derive_seed(seed, 1));
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(sigma2);
  supervisor.begin_demo(demo_index);

  sweep::EpisodeResult out;
  for (int t = 0; t < env.horizon && !world.success(); ++t) {
    const Vector obs = sweep::observe(world);
    const sweep::Vec2 intended = supervisor.intended_action(world);
    if (!intended.allFinite()) throw InputError("supervisor returned a non-finite action");
    sweep::Vec2 eps = sweep::Vec2::Zero();
    if (sd > 0.0) {
      const double e0 = normal(rng);
      const double e1 = normal(rng);
      eps = sd * sweep::Vec2(e0, e1);
    }
    const sweep::Vec2 executed = sweep::clamp_action(world, intended + eps);
    out.trajectory.states.push_back(obs);
    out.trajectory.intended.push_back(intended);
    out.trajectory.executed.push_back(executed);
    sweep::advance(world, executed);
  }
  out.score = world.score();
  out.success = world.success();
  out.trajectory.score = out.score;
  out.trajectory.success = out.success;
  return out;
}

std::vector<Trajectory> collect_round(const sweep::EnvConfig& env, Supervisor& supervisor,
                                      double sigma2, int demos, std::uint64_t seed,
                                      int redraw_budget, double start_perturbation,
                                      int* redraws) {
  if (demos < 1) throw InputError("collect_round: demos must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(demos));
  for (int d = 0; d < demos; ++d) {
    bool done = false;
    for (int attempt = 0; attempt <= redraw_budget && !done; ++attempt) {
      auto ep = collect_demo(env, supervisor, sigma2,
                             derive_seed(seed, static_cast<std::uint64_t>(d),
                                         static_cast<std::uint64_t>(attempt)),
                             d, start_perturbation);
      if (ep.success) {
        out.push_back(std::move(ep.trajectory));
        done = true;
      } else if (redraws) {
        ++*redraws;
      }
    }
    if (!done) {
      throw CollectionError("demonstration " + std::to_string(d) + " failed " +
                            std::to_string(redraw_budget + 1) + " times at sigma2=" +
                            std::to_string(sigma2));
    }
  }
  return out;
}

nlohmann::json trace_to_json(const BenchTrace& t) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : t.rounds) {
    rounds.push_back({{"sigma2_collected", r.sigma2_collected},
                      {"sigma2_next", r.sigma2_next},
                      {"elbo", r.elbo},
                      {"n_data", r.n_data},
                      {"redraws", r.redraws}});
  }
  return {{"version", kTraceSchemaVersion},
          {"method", method_name(t.method)},
          {"seed", t.seed},
          {"rounds", rounds}};
}

BenchTrace trace_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kTraceSchemaVersion) throw InputError("unsupported trace version");
    BenchTrace t;
    t.method = method_from_name(j.at("method").get<std::string>());
    t.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("rounds")) {
      t.rounds.push_back({r.value("sigma2_collected", 0.0), r.at("sigma2_next").get<double>(),
                          r.at("elbo").get<double>(), r.at("n_data").get<Eigen::Index>(),
                          r.value("redraws", 0)});
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad trace file: ") + e.what());
  }
}

IomgpConfig method_model_config(MethodId method, const IomgpConfig& base) {
  IomgpConfig c = base;
  if (!is_mixture(method)) c.truncation = 1;
  c.optimize_noise = is_bdi(method);
  return c;
}

InjectionConfig method_injection_config(MethodId method, const InjectionConfig& base) {
  InjectionConfig c = base;
  c.enabled = base.enabled && is_bdi(method);
  return c;
}

RunResult run_bdi(const sweep::EnvConfig& env, Supervisor& supervisor, MethodId method,
                  const InjectionConfig& cfg_in, const IomgpConfig& model_cfg_in,
                  std::uint64_t seed, const RoundCallback& on_round) {
  const InjectionConfig cfg = method_injection_config(method, cfg_in);
  IomgpConfig model_cfg = method_model_config(method, model_cfg_in);
  if (!cfg.enabled) model_cfg.optimize_noise = false;

  RoundSegmentedDataset data(2 * env.n_boxes, 2);
  NoiseSchedule noise;
  noise.initial_variance = cfg.enabled ? cfg.initial_variance : cfg.bc_likelihood_variance;

  RunResult out;
  out.trace.method = method;
  out.trace.seed = seed;
  bool have_model = false;
  for (int k = 0; k < cfg.rounds; ++k) {
    const double sigma2 = cfg.enabled ? noise.injection_variance(static_cast<std::size_t>(k)) : 0.0;
    int redraws = 0;
    auto demos = collect_round(env, supervisor, sigma2, cfg.demos_per_round,
                               derive_seed(seed, 100, static_cast<std::uint64_t>(k)),
                               cfg.redraw_budget, cfg.demo_start_perturbation, &redraws);
    data.append_round(demos, sigma2, cfg.record_stride);
    if (!cfg.enabled) noise.variances.assign(data.round_count(), cfg.bc_likelihood_variance);

    model_cfg.seed = derive_seed(seed, 200, static_cast<std::uint64_t>(k));
    out.model = fit(data, noise, model_cfg, have_model ? &out.model : nullptr);
    have_model = true;
    noise = out.model.noise;

    RoundRecord rec;
    rec.sigma2_collected = sigma2;
    rec.sigma2_next = cfg.enabled ? noise.variances.back() : 0.0;
    rec.elbo = out.model.elbo_trace.empty() ? 0.0 : out.model.elbo_trace.back();
    rec.n_data = data.size();
    rec.redraws = redraws;
    out.trace.rounds.push_back(rec);
    if (on_round) on_round(rec, out.model);
  }
  return out;
}

}  // namespace bdi
