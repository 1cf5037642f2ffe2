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

#include "bdi/iomgp.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "bdi/errors.hpp"
#include "bdi/special_functions.hpp"

namespace bdi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double median_pairwise_distance(const Matrix& states) {
  const Eigen::Index n = states.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((states.row(i) - states.row(j)).norm());
  }
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

Vector component_precision(const IomgpModel& model, const Vector& sigma, int m) {
  return model.resp.r.col(m).cwiseQuotient(sigma);
}

// Maximizer of sum_m r_m (logit_m - log r_m) over the simplex restricted to
// r_m >= floor: r_m = max(floor, c * softmax(logit)_m).
void project_row(const Vector& logits, double floor, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
  const auto m = logits.size();
  if (m == 1) {
    out(0) = 1.0;
    return;
  }
  const double lse = log_sum_exp(std::vector<double>(logits.data(), logits.data() + m));
  Vector p = (logits.array() - lse).exp();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p(a) < p(b); });

  double tail = p.sum();
  for (Eigen::Index k = 0; k < m; ++k) {
    const double c = (1.0 - static_cast<double>(k) * floor) / tail;
    const double lo = p(order[static_cast<std::size_t>(k)]);
    if (c * lo >= floor) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto idx = order[static_cast<std::size_t>(i)];
        out(idx) = i < k ? floor : c * p(idx);
      }
      return;
    }
    tail -= lo;
  }
  // Unreachable while M * floor < 1.
  out.setConstant(1.0 / static_cast<double>(m));
}

struct Bounds {
  double lo_sf2, hi_sf2, lo_ell, hi_ell;
};

Bounds kernel_bounds(const DataScale& s, const IomgpConfig& c) {
  return {std::log(1e-4 * s.action_variance), std::log(1e2 * s.action_variance),
          std::log(c.min_lengthscale_ratio * s.median_distance),
          std::log(c.max_lengthscale_ratio * s.median_distance)};
}

KernelParams clamp_params(KernelParams p, const Bounds& b) {
  p.log_signal_variance = std::clamp(p.log_signal_variance, b.lo_sf2, b.hi_sf2);
  p.log_lengthscale = std::clamp(p.log_lengthscale, b.lo_ell, b.hi_ell);
  return p;
}

// Projected BFGS ascent in the two log parameters.
KernelParams maximize_evidence(const IomgpModel& model, int m, const IomgpConfig& config,
                               bool& line_search_failed) {
  const Bounds bounds = kernel_bounds(model.scale, config);
  KernelParams x = clamp_params(model.kernels[static_cast<std::size_t>(m)], bounds);
  auto eval = [&](const KernelParams& p) { return component_evidence(model, m, p); };
  gp::EvidenceGradient cur = eval(x);

  auto projected_grad = [&](const KernelParams& p, const gp::EvidenceGradient& g) {
    Eigen::Vector2d v(g.d_log_signal_variance, g.d_log_lengthscale);
    if ((p.log_signal_variance <= bounds.lo_sf2 && v(0) < 0) ||
        (p.log_signal_variance >= bounds.hi_sf2 && v(0) > 0)) v(0) = 0;
    if ((p.log_lengthscale <= bounds.lo_ell && v(1) < 0) ||
        (p.log_lengthscale >= bounds.hi_ell && v(1) > 0)) v(1) = 0;
    return v;
  };

  Eigen::Vector2d g = projected_grad(x, cur);
  Eigen::Matrix2d h = Eigen::Matrix2d::Identity() * std::min(1.0, 1.0 / (g.norm() + 1e-300));
  for (int it = 0; it < config.max_kernel_iters; ++it) {
    if (g.norm() < 1e-12) break;
    Eigen::Vector2d dir = h * g;
    if (dir.dot(g) <= 0) {
      h = Eigen::Matrix2d::Identity() * std::min(1.0, 1.0 / g.norm());
      dir = h * g;
    }
    if (dir.norm() > 2.0) dir *= 2.0 / dir.norm();
    double t = 1.0;
    bool accepted = false;
    KernelParams trial;
    gp::EvidenceGradient next;
    for (int ls = 0; ls < 30; ++ls) {
      trial = clamp_params({x.log_signal_variance + t * dir(0), x.log_lengthscale + t * dir(1)},
                           bounds);
      try {
        next = eval(trial);
      } catch (const NumericalError&) {
        t *= 0.5;
        continue;
      }
      const Eigen::Vector2d step(trial.log_signal_variance - x.log_signal_variance,
                                 trial.log_lengthscale - x.log_lengthscale);
      if (next.value >= cur.value + 1e-4 * g.dot(step)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      line_search_failed = true;
      break;
    }
    const Eigen::Vector2d s(trial.log_signal_variance - x.log_signal_variance,
                            trial.log_lengthscale - x.log_lengthscale);
    const Eigen::Vector2d g_next = projected_grad(trial, next);
    const double delta = next.value - cur.value;
    // BFGS on the negated objective: y = -(g_next - g).
    const Eigen::Vector2d y = g - g_next;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Eigen::Matrix2d i2 = Eigen::Matrix2d::Identity();
      const double rho = 1.0 / sy;
      h = (i2 - rho * s * y.transpose()) * h * (i2 - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    x = trial;
    cur = next;
    g = g_next;
    if (std::abs(delta) < config.kernel_tol * std::abs(cur.value)) break;
  }
  return x;
}

}  // namespace

nlohmann::json iomgp_config_to_json(const IomgpConfig& c) {
  return {{"truncation", c.truncation},
          {"concentration", c.concentration},
          {"responsibility_floor", c.responsibility_floor},
          {"min_noise_variance", c.min_noise_variance},
          {"tol_e", c.tol_e},
          {"tol_em", c.tol_em},
          {"max_e_sweeps", c.max_e_sweeps},
          {"max_outer", c.max_outer},
          {"max_kernel_iters", c.max_kernel_iters},
          {"kernel_tol", c.kernel_tol},
          {"min_lengthscale_ratio", c.min_lengthscale_ratio},
          {"max_lengthscale_ratio", c.max_lengthscale_ratio},
          {"min_mass_for_kernel_update", c.min_mass_for_kernel_update},
          {"optimize_kernels", c.optimize_kernels},
          {"optimize_noise", c.optimize_noise},
          {"restarts", c.restarts},
          {"seed", c.seed}};
}

IomgpConfig iomgp_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("model config must be a JSON object");
  IomgpConfig c;
  try {
    c.truncation = j.value("truncation", c.truncation);
    c.concentration = j.value("concentration", c.concentration);
    c.responsibility_floor = j.value("responsibility_floor", c.responsibility_floor);
    c.min_noise_variance = j.value("min_noise_variance", c.min_noise_variance);
    c.tol_e = j.value("tol_e", c.tol_e);
    c.tol_em = j.value("tol_em", c.tol_em);
    c.max_e_sweeps = j.value("max_e_sweeps", c.max_e_sweeps);
    c.max_outer = j.value("max_outer", c.max_outer);
    c.max_kernel_iters = j.value("max_kernel_iters", c.max_kernel_iters);
    c.kernel_tol = j.value("kernel_tol", c.kernel_tol);
    c.min_lengthscale_ratio = j.value("min_lengthscale_ratio", c.min_lengthscale_ratio);
    c.max_lengthscale_ratio = j.value("max_lengthscale_ratio", c.max_lengthscale_ratio);
    c.min_mass_for_kernel_update = j.value("min_mass_for_kernel_update", c.min_mass_for_kernel_update);
    c.optimize_kernels = j.value("optimize_kernels", c.optimize_kernels);
    c.optimize_noise = j.value("optimize_noise", c.optimize_noise);
    c.restarts = j.value("restarts", c.restarts);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad model config: ") + e.what());
  }
  if (c.truncation < 1) throw InputError("truncation must be >= 1");
  if (!(c.concentration > 0.0)) throw InputError("concentration must be > 0");
  if (!(c.responsibility_floor > 0.0) || c.responsibility_floor * c.truncation >= 1.0) {
    throw InputError("responsibility_floor must be in (0, 1/truncation)");
  }
  if (!(c.min_noise_variance > 0.0)) throw InputError("min_noise_variance must be > 0");
  if (!(c.min_lengthscale_ratio > 0.0) || !(c.max_lengthscale_ratio > c.min_lengthscale_ratio)) {
    throw InputError("lengthscale ratios must satisfy 0 < min < max");
  }
  if (c.max_e_sweeps < 1 || c.max_outer < 1 || c.max_kernel_iters < 0 || c.restarts < 1) {
    throw InputError("iteration limits must be positive");
  }
  return c;
}

IomgpModel init_model(const RoundSegmentedDataset& data, const NoiseSchedule& noise,
                      const IomgpConfig& config) {
  if (data.empty()) throw InputError("init_model: empty dataset");
  if (config.truncation < 1) throw InputError("init_model: truncation M must be >= 1");
  if (!(config.concentration > 0.0)) throw InputError("init_model: concentration must be > 0");
  if (config.responsibility_floor * config.truncation >= 1.0) {
    throw InputError("init_model: responsibility floor too large for M");
  }
  const int m_count = config.truncation;
  const Eigen::Index n = data.size();

  IomgpModel model;
  model.truncation = m_count;
  model.data = data;
  model.noise = noise.extended_to(data.round_count());
  for (double v : model.noise.variances) {
    if (!(v > 0.0)) throw InputError("init_model: noise variances must be > 0");
  }

  const Matrix& a = data.actions();
  const Eigen::RowVectorXd mean = a.colwise().mean();
  double var = (a.rowwise() - mean).squaredNorm() / static_cast<double>(a.size());
  if (!(var > 0.0)) var = 1e-4;
  model.scale = {var, median_pairwise_distance(data.states())};
  model.kernels.assign(static_cast<std::size_t>(m_count),
                       KernelParams::from_values(var, model.scale.median_distance));

  model.resp.floor = config.responsibility_floor;
  model.resp.r.resize(n, m_count);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (m_count == 1) {
      model.resp.r(i, 0) = 1.0;
      continue;
    }
    for (int m = 0; m < m_count; ++m) model.resp.r(i, m) = (1.0 + jitter(rng)) / m_count;
    model.resp.r.row(i) /= model.resp.r.row(i).sum();
  }

  model.stick.concentration = config.concentration;
  model.stick.alpha = Vector::Ones(m_count);
  model.stick.beta = Vector::Constant(m_count, config.concentration);
  return model;
}

std::vector<GpPosterior> update_component(const IomgpModel& model, int m) {
  if (m < 0 || m >= model.truncation) throw InputError("update_component: bad component index");
  const Vector sigma = hetero_noise_diag(model.data, model.noise);
  const Matrix gram = gp::kernel_matrix(model.data.states(), model.data.states(),
                                        model.kernels[static_cast<std::size_t>(m)]);
  return gp::condition(gram, model.data.actions(), component_precision(model, sigma, m));
}

GpPosterior update_f(const IomgpModel& model, int dim, int m) {
  if (dim < 0 || dim >= model.action_dim()) throw InputError("update_f: bad action dimension");
  return std::move(update_component(model, m)[static_cast<std::size_t>(dim)]);
}

void refresh_components(IomgpModel& model) {
  model.components.resize(static_cast<std::size_t>(model.truncation));
  for (int m = 0; m < model.truncation; ++m) {
    model.components[static_cast<std::size_t>(m)] = update_component(model, m);
  }
}

Vector expected_log_weights(const StickPosterior& stick) {
  const auto m = stick.alpha.size();
  Vector out(m);
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double psi_sum = digamma(stick.alpha(i) + stick.beta(i));
    out(i) = digamma(stick.alpha(i)) - psi_sum + cumulative;
    cumulative += digamma(stick.beta(i)) - psi_sum;
  }
  return out;
}

Vector mixture_weights(const StickPosterior& stick) {
  const auto m = stick.alpha.size();
  Vector w(m);
  double remaining = 1.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double ev = stick.alpha(i) / (stick.alpha(i) + stick.beta(i));
    w(i) = ev * remaining;
    remaining *= 1.0 - ev;
  }
  return w / w.sum();
}

double stick_kl(const StickPosterior& stick) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < stick.alpha.size(); ++i) {
    kl += kl_beta(stick.alpha(i), stick.beta(i), 1.0, stick.concentration);
  }
  return kl;
}

Responsibilities update_z(const IomgpModel& model) {
  if (!model.has_components()) throw InputError("update_z: components not computed");
  const Vector sigma = hetero_noise_diag(model.data, model.noise);
  const Vector elogw = expected_log_weights(model.stick);
  const Matrix& a = model.data.actions();
  const int dims = model.action_dim();
  Responsibilities out{Matrix(model.size(), model.truncation), model.resp.floor};
  Vector logits(model.truncation);
  for (Eigen::Index n = 0; n < model.size(); ++n) {
    const double norm = -0.5 * dims * (kLog2Pi + std::log(sigma(n)));
    for (int m = 0; m < model.truncation; ++m) {
      double sq = 0.0;
      for (int d = 0; d < dims; ++d) {
        const auto& post = model.components[static_cast<std::size_t>(m)][static_cast<std::size_t>(d)];
        const double res = a(n, d) - post.mean(n);
        sq += res * res + post.cov_diag()(n);
      }
      logits(m) = norm - 0.5 * sq / sigma(n) + elogw(m);
    }
    project_row(logits, out.floor, out.r.row(n));
  }
  return out;
}

StickPosterior update_v(const IomgpModel& model) {
  StickPosterior out;
  out.concentration = model.stick.concentration;
  const Vector mass = model.resp.r.colwise().sum().transpose();
  const auto m = mass.size();
  out.alpha = Vector::Ones(m) + mass;
  out.beta.resize(m);
  double tail = 0.0;
  for (Eigen::Index i = m - 1; i >= 0; --i) {
    out.beta(i) = out.concentration + tail;
    tail += mass(i);
  }
  return out;
}

namespace {

double assignment_terms(const IomgpModel& model) {
  const Vector elogw = expected_log_weights(model.stick);
  const Matrix& r = model.resp.r;
  double acc = 0.0;
  for (Eigen::Index n = 0; n < r.rows(); ++n) {
    for (Eigen::Index m = 0; m < r.cols(); ++m) acc += r(n, m) * (elogw(m) - std::log(r(n, m)));
  }
  return acc - stick_kl(model.stick);
}

void check_finite(double value, const IomgpModel& model, const char* what) {
  if (std::isfinite(value)) return;
  std::ostringstream msg;
  msg << what << " is not finite; component mass:";
  for (Eigen::Index m = 0; m < model.resp.r.cols(); ++m) msg << ' ' << model.resp.r.col(m).sum();
  msg << "; kernels:";
  for (const auto& k : model.kernels) msg << " (" << k.log_signal_variance << ',' << k.log_lengthscale << ')';
  throw NumericalError(msg.str());
}

}  // namespace

double elbo(const IomgpModel& model) {
  if (!model.has_components()) throw InputError("elbo: components not computed");
  const Vector sigma = hetero_noise_diag(model.data, model.noise);
  const Matrix& a = model.data.actions();
  const Vector log_norm = -0.5 * (kLog2Pi + sigma.array().log());
  double value = 0.0;
  for (int m = 0; m < model.truncation; ++m) {
    for (int d = 0; d < model.action_dim(); ++d) {
      const auto& post = model.components[static_cast<std::size_t>(m)][static_cast<std::size_t>(d)];
      const Vector expected_sq =
          (a.col(d) - post.mean).array().square() + post.cov_diag().array();
      const Vector per_point = log_norm.array() - 0.5 * expected_sq.array() / sigma.array();
      value += model.resp.r.col(m).dot(per_point) - post.kl_to_prior;
    }
  }
  value += assignment_terms(model);
  check_finite(value, model, "elbo");
  return value;
}

double collapsed_elbo(const IomgpModel& model) {
  const Vector sigma = hetero_noise_diag(model.data, model.noise);
  const Vector log_2pi_sigma = kLog2Pi + sigma.array().log();
  double value = 0.0;
  for (int m = 0; m < model.truncation; ++m) {
    const Vector r = model.resp.r.col(m);
    const auto posts = update_component(model, m);
    // log N(a | 0, K + B^-1) is normalized for variances Sigma/r; shift it back
    // to the r-weighted likelihood of variance Sigma.
    const double shift = 0.5 * (log_2pi_sigma.array() - r.array().log()).sum() -
                         0.5 * r.dot(log_2pi_sigma);
    for (const auto& post : posts) value += post.log_evidence + shift;
  }
  value += assignment_terms(model);
  check_finite(value, model, "collapsed elbo");
  return value;
}

gp::EvidenceGradient component_evidence(const IomgpModel& model, int m,
                                        const KernelParams& params) {
  const Vector sigma = hetero_noise_diag(model.data, model.noise);
  return gp::log_evidence_with_gradient(model.data.states(), model.data.actions(), params,
                                        component_precision(model, sigma, m), 0.0);
}

double optimal_last_noise(const IomgpModel& model, const IomgpConfig& config) {
  if (!model.has_components()) throw InputError("optimal_last_noise: components not computed");
  const std::size_t last = model.data.round_count() - 1;
  const Eigen::Index off = model.data.round_offset(last);
  const Eigen::Index len = model.data.round_sizes()[last];
  const Matrix& a = model.data.actions();
  double acc = 0.0;
  for (int m = 0; m < model.truncation; ++m) {
    for (int d = 0; d < model.action_dim(); ++d) {
      const auto& post = model.components[static_cast<std::size_t>(m)][static_cast<std::size_t>(d)];
      for (Eigen::Index n = off; n < off + len; ++n) {
        const double res = a(n, d) - post.mean(n);
        acc += model.resp.r(n, m) * (res * res + post.cov_diag()(n));
      }
    }
  }
  const double v = acc / (static_cast<double>(model.action_dim()) * static_cast<double>(len));
  if (!std::isfinite(v)) throw NumericalError("noise update is not finite");
  return std::max(v, config.min_noise_variance);
}

HyperResult optimize_hyperparams(const IomgpModel& model, HyperTarget which,
                                 const IomgpConfig& config) {
  HyperResult out{model, false};
  switch (which) {
    case HyperTarget::kernels: {
      const Vector mass = model.resp.r.colwise().sum().transpose();
      for (int m = 0; m < model.truncation; ++m) {
        if (mass(m) < config.min_mass_for_kernel_update) continue;
        bool failed = false;
        out.model.kernels[static_cast<std::size_t>(m)] = maximize_evidence(model, m, config, failed);
        if (failed) {
          std::cerr << "warning: kernel line search failed for component " << m
                    << "; keeping best parameters found\n";
          out.line_search_failed = true;
        }
      }
      refresh_components(out.model);
      break;
    }
    case HyperTarget::noise_last:
      out.model.noise.variances.back() = optimal_last_noise(model, config);
      break;
    case HyperTarget::concentration:
      // Held fixed: no update law for the stick-breaking concentration.
      break;
  }
  return out;
}

namespace {

IomgpModel run_em(IomgpModel model, const IomgpConfig& config) {
  model.stick = update_v(model);

  double outer_prev = -std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < config.max_outer; ++outer) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < config.max_e_sweeps; ++sweep) {
      refresh_components(model);
      model.resp = update_z(model);
      model.stick = update_v(model);
      const double value = elbo(model);
      model.elbo_trace.push_back(value);
      if (std::abs(value - prev) < config.tol_e * std::abs(value)) break;
      prev = value;
    }
    if (config.optimize_kernels) {
      model = optimize_hyperparams(model, HyperTarget::kernels, config).model;
    }
    if (config.optimize_noise) {
      model = optimize_hyperparams(model, HyperTarget::noise_last, config).model;
    }
    const double value = elbo(model);
    model.elbo_trace.push_back(value);
    if (std::abs(value - outer_prev) < config.tol_em * std::abs(value)) {
      model.converged = true;
      break;
    }
    outer_prev = value;
  }
  if (!model.converged) {
    std::cerr << "warning: variational EM did not converge in " << config.max_outer
              << " outer iterations\n";
  }
  // Leave q(f) consistent with the final hyperparameters so the snapshot
  // (responsibilities, kernels, noise) fully determines the predictive.
  refresh_components(model);
  model.elbo_trace.push_back(elbo(model));
  return model;
}

}  // namespace

IomgpModel fit(const RoundSegmentedDataset& data, const NoiseSchedule& noise,
               const IomgpConfig& config, const IomgpModel* warm) {
  IomgpModel model = init_model(data, noise, config);
  if (warm != nullptr && warm->truncation == model.truncation &&
      warm->data.state_dim() == data.state_dim() && warm->size() <= data.size()) {
    model.kernels = warm->kernels;
    model.resp.r.topRows(warm->size()) = warm->resp.r;
    model.scale = warm->scale;
    return run_em(std::move(model), config);
  }
  IomgpModel best = run_em(std::move(model), config);
  const int tries = config.truncation == 1 ? 1 : config.restarts;
  for (int r = 1; r < tries; ++r) {
    IomgpConfig c = config;
    c.seed = config.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(r);
    IomgpModel cand = run_em(init_model(data, noise, c), c);
    if (cand.elbo_trace.back() > best.elbo_trace.back()) best = std::move(cand);
  }
  return best;
}

Matrix predict_mode_means(const IomgpModel& model, const Eigen::Ref<const Vector>& query) {
  if (!model.has_components()) throw InputError("predict: model has no components");
  if (query.size() != model.state_dim()) throw InputError("predict: query dimension mismatch");
  Matrix means(model.truncation, model.action_dim());
  for (int m = 0; m < model.truncation; ++m) {
    const Vector k = gp::kernel_vector(model.data.states(), query,
                                       model.kernels[static_cast<std::size_t>(m)]);
    for (int d = 0; d < model.action_dim(); ++d) {
      means(m, d) = gp::predict_mean(
          model.components[static_cast<std::size_t>(m)][static_cast<std::size_t>(d)], k);
    }
  }
  return means;
}

std::vector<Mode> predict_modes(const IomgpModel& model, const Eigen::Ref<const Vector>& query) {
  if (!model.has_components()) throw InputError("predict: model has no components");
  if (query.size() != model.state_dim()) throw InputError("predict: query dimension mismatch");
  const Vector w = mixture_weights(model.stick);
  std::vector<Mode> modes;
  modes.reserve(static_cast<std::size_t>(model.truncation));
  for (int m = 0; m < model.truncation; ++m) {
    const auto& kp = model.kernels[static_cast<std::size_t>(m)];
    const auto& posts = model.components[static_cast<std::size_t>(m)];
    const Vector k = gp::kernel_vector(model.data.states(), query, kp);
    Mode mode{w(m), Vector(model.action_dim()), Vector(model.action_dim())};
    // All dimensions share one factor, so the variance solve is done once.
    const double var = gp::predict_variance(posts.front(), k, kp.signal_variance());
    for (int d = 0; d < model.action_dim(); ++d) {
      const auto& post = posts[static_cast<std::size_t>(d)];
      mode.mean(d) = gp::predict_mean(post, k);
      mode.variance(d) = post.factor == posts.front().factor
                             ? var
                             : gp::predict_variance(post, k, kp.signal_variance());
    }
    modes.push_back(std::move(mode));
  }
  return modes;
}

std::string mode_policy_name(const ModePolicy& p) {
  if (std::holds_alternative<MaxWeight>(p)) return "max_weight";
  if (std::holds_alternative<NearestPrev>(p)) return "nearest_prev";
  if (std::holds_alternative<Local>(p)) return "local";
  return "committed";
}

ModePolicy mode_policy_from_name(const std::string& name) {
  if (name == "committed") return Committed{};
  if (name == "max_weight") return MaxWeight{};
  if (name == "nearest_prev") return NearestPrev{};
  if (name == "local") return Local{};
  throw InputError("unknown mode policy: " + name);
}

namespace {

int argmax_weight(const Vector& w) {
  int best = 0;
  for (int m = 1; m < w.size(); ++m) {
    if (w(m) > w(best)) best = m;
  }
  return best;
}

int nearest_mode(const Matrix& means, const Vector& prev) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int m = 0; m < means.rows(); ++m) {
    const double d = (means.row(m).transpose() - prev).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

int local_mode(const IomgpModel& model, const Eigen::Ref<const Vector>& query, int k) {
  return argmax_weight(local_responsibility(model, query, k));
}

}  // namespace

Vector local_responsibility(const IomgpModel& model, const Eigen::Ref<const Vector>& query,
                            int neighbours) {
  const Matrix& s = model.data.states();
  if (s.rows() == 0) throw InputError("local_responsibility: empty model");
  if (query.size() != s.cols()) throw InputError("local_responsibility: dimension mismatch");
  if (neighbours < 1) throw InputError("local_responsibility: neighbours must be >= 1");
  const auto k = std::min<Eigen::Index>(neighbours, s.rows());
  std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index n = 0; n < s.rows(); ++n) {
    d[static_cast<std::size_t>(n)] = {(s.row(n).transpose() - query).squaredNorm(), n};
  }
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  Vector g = Vector::Zero(model.resp.r.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    g += model.resp.r.row(d[static_cast<std::size_t>(i)].second).transpose();
  }
  return g / static_cast<double>(k);
}

Vector select_action(const IomgpModel& model, const Eigen::Ref<const Vector>& query,
                     const ModePolicy& policy, const Vector& prev_action) {
  const Matrix means = predict_mode_means(model, query);
  int mode = 0;
  if (const auto* c = std::get_if<Committed>(&policy)) {
    if (c->mode < 0 || c->mode >= model.truncation) {
      throw InputError("select_action: committed mode index out of range");
    }
    mode = c->mode;
  } else if (std::holds_alternative<NearestPrev>(policy) && prev_action.size() == model.action_dim()) {
    mode = nearest_mode(means, prev_action);
  } else if (const auto* l = std::get_if<Local>(&policy)) {
    mode = local_mode(model, query, l->neighbours);
  } else {
    mode = argmax_weight(mixture_weights(model.stick));
  }
  return means.row(mode).transpose();
}

ModeSelector::ModeSelector(ModePolicy policy, std::uint64_t seed)
    : policy_(policy), rng_(seed) {}

void ModeSelector::begin_episode(const IomgpModel& model) {
  prev_.resize(0);
  const Vector w = mixture_weights(model.stick);
  committed_ = argmax_weight(w);
  if (const auto* c = std::get_if<Committed>(&policy_)) {
    if (c->mode >= model.truncation) throw InputError("ModeSelector: committed mode out of range");
    if (c->mode >= 0) {
      committed_ = c->mode;
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double draw = u(rng_);
      double acc = 0.0;
      for (int m = 0; m < w.size(); ++m) {
        acc += w(m);
        if (draw < acc) {
          committed_ = m;
          break;
        }
      }
    }
  }
  last_mode_ = committed_;
}

Vector ModeSelector::select(const IomgpModel& model, const Eigen::Ref<const Vector>& query) {
  if (std::holds_alternative<Committed>(policy_)) {
    last_mode_ = committed_;
    return select_action(model, query, Committed{committed_});
  }
  const Matrix means = predict_mode_means(model, query);
  if (std::holds_alternative<NearestPrev>(policy_) && prev_.size() == model.action_dim()) {
    last_mode_ = nearest_mode(means, prev_);
  } else if (const auto* l = std::get_if<Local>(&policy_)) {
    last_mode_ = local_mode(model, query, l->neighbours);
  } else {
    last_mode_ = argmax_weight(mixture_weights(model.stick));
  }
  return means.row(last_mode_).transpose();
}

nlohmann::json model_to_json(const IomgpModel& model) {
  nlohmann::json j;
  j["version"] = kModelSchemaVersion;
  j["M"] = model.truncation;
  j["Q"] = model.state_dim();
  j["D"] = model.action_dim();
  auto kernels = nlohmann::json::array();
  for (const auto& k : model.kernels) {
    kernels.push_back({{"log_signal_variance", k.log_signal_variance},
                       {"log_lengthscale", k.log_lengthscale}});
  }
  j["kernel_params"] = std::move(kernels);
  j["noise_schedule"] = {{"initial_variance", model.noise.initial_variance},
                         {"variances", model.noise.variances}};
  j["responsibilities"] = matrix_to_json(model.resp.r);
  j["responsibility_floor"] = model.resp.floor;
  j["stick"] = {{"alpha", vector_to_json(model.stick.alpha)},
                {"beta", vector_to_json(model.stick.beta)},
                {"concentration", model.stick.concentration}};
  j["scale"] = {{"action_variance", model.scale.action_variance},
                {"median_distance", model.scale.median_distance}};
  j["dataset"] = dataset_to_json(model.data);
  j["elbo_trace"] = model.elbo_trace;
  j["converged"] = model.converged;
  j["has_components"] = model.has_components();
  return j;
}

IomgpModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kModelSchemaVersion) {
      throw InputError("unsupported model schema version");
    }
    IomgpModel model;
    model.truncation = j.at("M").get<int>();
    model.data = dataset_from_json(j.at("dataset"));
    if (model.state_dim() != j.at("Q").get<int>() || model.action_dim() != j.at("D").get<int>()) {
      throw InputError("model dimensions disagree with its dataset");
    }
    for (const auto& k : j.at("kernel_params")) {
      model.kernels.push_back({k.at("log_signal_variance").get<double>(),
                               k.at("log_lengthscale").get<double>()});
    }
    model.noise.initial_variance = j.at("noise_schedule").at("initial_variance").get<double>();
    model.noise.variances = j.at("noise_schedule").at("variances").get<std::vector<double>>();
    model.resp.r = matrix_from_json(j.at("responsibilities"));
    model.resp.floor = j.at("responsibility_floor").get<double>();
    model.stick.alpha = vector_from_json(j.at("stick").at("alpha"));
    model.stick.beta = vector_from_json(j.at("stick").at("beta"));
    model.stick.concentration = j.at("stick").at("concentration").get<double>();
    model.scale.action_variance = j.at("scale").at("action_variance").get<double>();
    model.scale.median_distance = j.at("scale").at("median_distance").get<double>();
    model.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
    model.converged = j.at("converged").get<bool>();

    const auto m = static_cast<std::size_t>(model.truncation);
    if (model.truncation < 1 || model.kernels.size() != m || model.resp.r.cols() != model.truncation ||
        model.resp.r.rows() != model.size() || model.stick.alpha.size() != model.truncation ||
        model.stick.beta.size() != model.truncation ||
        model.noise.variances.size() < model.data.round_count()) {
      throw InputError("model snapshot fields have inconsistent sizes");
    }
    if (!model.resp.r.allFinite()) throw InputError("model responsibilities are not finite");
    if (j.at("has_components").get<bool>()) refresh_components(model);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model json: ") + e.what());
  }
}

}  // namespace bdi
