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

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bdi::gp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Isotropic squared-exponential kernel, log-parameterized so both the
/// signal variance and the lengthscale stay positive under unconstrained
/// optimization.
struct KernelParams {
  double log_signal_variance = 0.0;
  double log_lengthscale = 0.0;

  static KernelParams from_values(double signal_variance, double lengthscale);
  double signal_variance() const;
  double lengthscale() const;
  bool operator==(const KernelParams&) const = default;
};

double kernel_eval(const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& y, const KernelParams& p);

// Rows of `a` and `b` are states.
Matrix squared_distances(const Matrix& a, const Matrix& b);
Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelParams& p);
Vector kernel_vector(const Matrix& states, const Eigen::Ref<const Vector>& query,
                     const KernelParams& p);

struct GramMatrix {
  Matrix entries;
  double jitter = 0.0;
};

/// Gram matrix of `states` with `jitter` on the diagonal. When the Cholesky
/// factorization fails the jitter is escalated from 1e-8 * mean(diag) by
/// factors of ten up to 1e-2 * mean(diag); beyond that a NumericalError
/// carrying the last jitter is thrown.
GramMatrix build_gram(const Matrix& states, const KernelParams& p, double jitter);

bool is_positive_definite(const Matrix& m);

/// Cholesky data shared by every output column conditioned on the same gram
/// matrix and per-point precision B: L L^T = I + S K S with S = sqrt(B).
struct ConditioningFactor {
  Vector sqrt_precision;
  Matrix chol_lower;
  Vector cov_diag;       // diag of (K^-1 + B)^-1
  double log_det = 0.0;  // log |I + S K S|
  double trace_inv = 0.0;  // tr (I + S K S)^-1
};

/// Gaussian posterior over latent values at the training inputs:
/// cov = (K^-1 + B)^-1, mean = cov B y.
struct GpPosterior {
  std::shared_ptr<const ConditioningFactor> factor;
  Vector mean;
  Vector weights;  // (K + B^-1)^-1 y, so the predictive mean is k*^T weights
  double log_evidence = 0.0;  // log N(y | 0, K + B^-1)
  double kl_to_prior = 0.0;   // KL(N(mean, cov) || N(0, K))

  const Vector& cov_diag() const { return factor->cov_diag; }
  /// Full covariance; needs the same gram matrix used to condition.
  Matrix covariance(const Matrix& gram) const;
};

/// Conditions every column of `targets` on the prior N(0, gram) with
/// diagonal likelihood precision `precision` (entries > 0). Works in the
/// S K S form so tiny precisions never require inverting K.
std::vector<GpPosterior> condition(const Matrix& gram, const Matrix& targets,
                                   const Vector& precision);

/// Single-output GP regression with per-point noise variance.
GpPosterior gp_posterior(const Matrix& states, const Vector& actions,
                         const KernelParams& p, const Vector& noise_diag);

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

Prediction gp_predict(const GpPosterior& posterior, const Matrix& model_states,
                      const KernelParams& p, const Eigen::Ref<const Vector>& query);

/// Predictive mean only, reusing a precomputed kernel vector.
double predict_mean(const GpPosterior& posterior, const Vector& k_star);
double predict_variance(const GpPosterior& posterior, const Vector& k_star,
                        double k_star_star);

struct EvidenceGradient {
  double value = 0.0;
  double d_log_signal_variance = 0.0;
  double d_log_lengthscale = 0.0;
};

/// Sum over target columns of log N(y_d | 0, K + jitter I + B^-1) and its
/// gradient w.r.t. the log kernel parameters (jitter held fixed).
EvidenceGradient log_evidence_with_gradient(const Matrix& states,
                                            const Matrix& targets,
                                            const KernelParams& p,
                                            const Vector& precision,
                                            double jitter);

}  // namespace bdi::gp
