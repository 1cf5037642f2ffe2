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

#include "bdi/dataset.hpp"
#include "bdi/iomgp.hpp"
#include "bdi/sweep_env.hpp"

namespace bdi {

/// Source of intended actions during demonstration collection.
class Supervisor {
 public:
  virtual ~Supervisor() = default;
  /// Called before each demonstration; `index` counts demonstrations within
  /// a round, including redraws.
  virtual void begin_demo(int index) = 0;
  virtual sweep::Vec2 intended_action(const sweep::SweepWorld& world) = 0;
};

/// PID expert alternating the sweep order between consecutive demonstrations.
class PidSupervisor : public Supervisor {
 public:
  PidSupervisor(int n_boxes, sweep::PidGains gains = {});
  void begin_demo(int index) override;
  sweep::Vec2 intended_action(const sweep::SweepWorld& world) override;

 private:
  int n_boxes_;
  sweep::PidGains gains_;
  sweep::PidExpert expert_;
};

struct InjectionConfig {
  double initial_variance = 1e-4;
  int rounds = 5;
  int demos_per_round = 2;
  bool enabled = true;
  // Keep every record_stride-th step of a demonstration as training data.
  int record_stride = 2;
  int redraw_budget = 20;
  // Fixed likelihood variance used when no noise is injected.
  double bc_likelihood_variance = 1e-4;
  // Demonstrations start from the nominal layout unless this is positive.
  double demo_start_perturbation = 0.0;
};

nlohmann::json injection_config_to_json(const InjectionConfig& c);
InjectionConfig injection_config_from_json(const nlohmann::json& j);

enum class MethodId { UGP_BC, UGP_BDI, MGP_BC, MGP_BDI };

std::string method_name(MethodId m);
MethodId method_from_name(const std::string& name);
inline bool is_bdi(MethodId m) { return m == MethodId::UGP_BDI || m == MethodId::MGP_BDI; }
inline bool is_mixture(MethodId m) { return m == MethodId::MGP_BC || m == MethodId::MGP_BDI; }
inline constexpr MethodId kAllMethods[] = {MethodId::UGP_BC, MethodId::UGP_BDI, MethodId::MGP_BC,
                                           MethodId::MGP_BDI};

/// Deterministic 64-bit seed derivation.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

struct CollectedStep {
  Vector state;
  Vector intended;
  Vector noise;
  Vector executed;
};

/// Runs one noise-injected demonstration. The supervisor's intended action is
/// the label; clamp(intended + eps) drives the world.
sweep::EpisodeResult collect_demo(const sweep::EnvConfig& env, Supervisor& supervisor,
                                  double sigma2, std::uint64_t seed, int demo_index,
                                  double start_perturbation = 0.0);

/// `demos` successful demonstrations collected under variance `sigma2`.
/// Failed ones are discarded and redrawn; CollectionError after the redraw
/// budget is spent for a single demonstration.
std::vector<Trajectory> collect_round(const sweep::EnvConfig& env, Supervisor& supervisor,
                                      double sigma2, int demos, std::uint64_t seed,
                                      int redraw_budget = 20, double start_perturbation = 0.0,
                                      int* redraws = nullptr);

struct RoundRecord {
  double sigma2_collected = 0.0;
  double sigma2_next = 0.0;
  double elbo = 0.0;
  Eigen::Index n_data = 0;
  int redraws = 0;
};

struct BenchTrace {
  MethodId method = MethodId::MGP_BDI;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> rounds;
};

inline constexpr int kTraceSchemaVersion = 1;
nlohmann::json trace_to_json(const BenchTrace& t);
BenchTrace trace_from_json(const nlohmann::json& j);

struct RunResult {
  IomgpModel model;
  BenchTrace trace;
};

/// Model config actually used for `method`: truncation forced to 1 for the
/// unimodal variants, noise optimization only for disturbance injection.
IomgpConfig method_model_config(MethodId method, const IomgpConfig& base);
InjectionConfig method_injection_config(MethodId method, const InjectionConfig& base);

/// Invoked after every round with the model fitted on the data so far.
using RoundCallback = std::function<void(const RoundRecord&, const IomgpModel&)>;

/// Collect, aggregate, fit and re-estimate the injection noise for
/// cfg.rounds rounds.
RunResult run_bdi(const sweep::EnvConfig& env, Supervisor& supervisor, MethodId method,
                  const InjectionConfig& cfg, const IomgpConfig& model_cfg, std::uint64_t seed,
                  const RoundCallback& on_round = {});

}  // namespace bdi
