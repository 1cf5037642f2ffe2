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
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "bdi/dataset.hpp"
#include "bdi/gp_core.hpp"

namespace bdi {

using gp::GpPosterior;
using gp::KernelParams;

struct IomgpConfig {
  int truncation = 5;
  double concentration = 1.0;
  double responsibility_floor = 1e-6;
  double min_noise_variance = 1e-8;
  double tol_e = 1e-6;
  double tol_em = 1e-5;
  int max_e_sweeps = 200;
  int max_outer = 50;
  int max_kernel_iters = 100;
  double kernel_tol = 1e-6;
  // Lengthscale box relative to the median pairwise state distance.
  double min_lengthscale_ratio = 0.1;
  double max_lengthscale_ratio = 20.0;
  // Components holding less total responsibility keep their kernel.
  double min_mass_for_kernel_update = 1.0;
  bool optimize_kernels = true;
  bool optimize_noise = true;
  // Cold fits run this many seeded initializations and keep the best bound.
  int restarts = 8;
  std::uint64_t seed = 0;
};

nlohmann::json iomgp_config_to_json(const IomgpConfig& c);
/// Missing keys keep their defaults; invalid values raise InputError.
IomgpConfig iomgp_config_from_json(const nlohmann::json& j);

struct Responsibilities {
  Matrix r;  // N x M, rows sum to one, entries in [floor, 1]
  double floor = 1e-6;
};

struct StickPosterior {
  Vector alpha;
  Vector beta;
  double concentration = 1.0;
};

/// Scales of the training data, fixed at initialization; kernel parameters
/// are kept inside a box defined relative to them.
struct DataScale {
  double action_variance = 1.0;
  double median_distance = 1.0;
};

/// Infinite overlapping mixture of GPs truncated at M components, with one
/// independent latent function per action dimension and shared assignments.
struct IomgpModel {
  int truncation = 1;
  RoundSegmentedDataset data;
  NoiseSchedule noise;
  std::vector<KernelParams> kernels;              // per component
  std::vector<std::vector<GpPosterior>> components;  // [m][dim]
  Responsibilities resp;
  StickPosterior stick;
  DataScale scale;
  std::vector<double> elbo_trace;
  bool converged = false;

  Eigen::Index size() const { return data.size(); }
  int action_dim() const { return data.action_dim(); }
  int state_dim() const { return data.state_dim(); }
  bool has_components() const { return !components.empty(); }
};

/// Random row-stochastic responsibilities (uniform +-10%), stick posterior at
/// its prior, kernels at (var(actions), median pairwise distance).
IomgpModel init_model(const RoundSegmentedDataset& data, const NoiseSchedule& noise,
                      const IomgpConfig& config);

/// Every action dimension's q(f^(m)) at once; they share one factorization.
std::vector<GpPosterior> update_component(const IomgpModel& model, int m);
GpPosterior update_f(const IomgpModel& model, int dim, int m);
Responsibilities update_z(const IomgpModel& model);
StickPosterior update_v(const IomgpModel& model);

/// E[log pi_m] under q(v) for the truncated stick-breaking weights.
Vector expected_log_weights(const StickPosterior& stick);
/// Normalized E[pi_m] = E[v_m] prod_{j<m} (1 - E[v_j]).
Vector mixture_weights(const StickPosterior& stick);
double stick_kl(const StickPosterior& stick);

/// Variational lower bound evaluated with the stored q(f).
double elbo(const IomgpModel& model);
/// Bound with q(f) collapsed to its optimum for the current responsibilities;
/// equals elbo() right after every component has been updated.
double collapsed_elbo(const IomgpModel& model);

enum class HyperTarget { kernels, noise_last, concentration };

struct HyperResult {
  IomgpModel model;
  bool line_search_failed = false;
};

HyperResult optimize_hyperparams(const IomgpModel& model, HyperTarget which,
                                 const IomgpConfig& config);

/// Closed-form maximizer of the bound over the newest round's variance.
double optimal_last_noise(const IomgpModel& model, const IomgpConfig& config);

/// Kernel evidence sum_d log N(a_d | 0, K^(m) + B^(m)^-1) and its gradient.
gp::EvidenceGradient component_evidence(const IomgpModel& model, int m,
                                        const KernelParams& params);

/// Runs variational EM. With `warm` the previous fit's kernels and the
/// responsibilities of already-seen data are reused; otherwise
/// config.restarts initializations are tried and the highest final bound
/// wins. Restart 0 uses config.seed itself.
IomgpModel fit(const RoundSegmentedDataset& data, const NoiseSchedule& noise,
               const IomgpConfig& config, const IomgpModel* warm = nullptr);

struct Mode {
  double weight = 0.0;
  Vector mean;
  Vector variance;
};

std::vector<Mode> predict_modes(const IomgpModel& model, const Eigen::Ref<const Vector>& query);
/// Per-mode predictive means only (M x D), skipping the variance solves.
Matrix predict_mode_means(const IomgpModel& model, const Eigen::Ref<const Vector>& query);

struct Committed {
  int mode = -1;  // -1: sample from the mixture weights at episode start
};
struct MaxWeight {};
struct NearestPrev {};
/// Mode with the largest mean responsibility among the `neighbours` training
/// states closest to the query.
struct Local {
  int neighbours = 3;
};
using ModePolicy = std::variant<Committed, MaxWeight, NearestPrev, Local>;

std::string mode_policy_name(const ModePolicy& p);
/// "committed", "max_weight", "nearest_prev" or "local".
ModePolicy mode_policy_from_name(const std::string& name);

/// Mean responsibility row over the k nearest training states.
Vector local_responsibility(const IomgpModel& model, const Eigen::Ref<const Vector>& query,
                            int neighbours);

/// Stateless selection. `prev_action` is only used by NearestPrev; an empty
/// vector falls back to the maximum-weight mode.
Vector select_action(const IomgpModel& model, const Eigen::Ref<const Vector>& query,
                     const ModePolicy& policy, const Vector& prev_action = Vector());

/// Mode choice over an episode. Committed modes are drawn once per episode
/// from the mixture weights using the selector's own seeded generator.
class ModeSelector {
 public:
  ModeSelector(ModePolicy policy, std::uint64_t seed);

  void begin_episode(const IomgpModel& model);
  Vector select(const IomgpModel& model, const Eigen::Ref<const Vector>& query);
  void observe_executed(const Vector& action) { prev_ = action; }
  int last_mode() const { return last_mode_; }

 private:
  ModePolicy policy_;
  std::mt19937_64 rng_;
  int committed_ = 0;
  int last_mode_ = 0;
  Vector prev_;
};

// Model snapshot: {version, M, Q, D, kernel_params[], noise_schedule,
// responsibilities, stick, dataset, elbo_trace}. Components are recomputed
// on load from the stored responsibilities, kernels and noise.
inline constexpr int kModelSchemaVersion = 1;
nlohmann::json model_to_json(const IomgpModel& model);
IomgpModel model_from_json(const nlohmann::json& j);

/// Recomputes every q(f^(m)) from the model's current factors.
void refresh_components(IomgpModel& model);

}  // namespace bdi
