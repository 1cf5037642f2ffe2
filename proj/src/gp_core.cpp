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

#include "bdi/gp_core.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <string>

#include "bdi/errors.hpp"

namespace bdi::gp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Cholesky of I + S K S, escalating jitter on K when the factorization fails.
Eigen::LLT<Matrix> factor_scaled(const Matrix& gram, const Vector& s) {
  const Eigen::Index n = gram.rows();
  Matrix g = s.asDiagonal() * gram * s.asDiagonal();
  g.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() == Eigen::Success) return llt;

  const double mean_diag = gram.diagonal().mean();
  double jitter = 1e-8 * mean_diag;
  while (jitter <= 1e-2 * mean_diag) {
    Matrix gj = g;
    gj.diagonal().array() += jitter * s.array().square();
    llt.compute(gj);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw NumericalError("cholesky of I + S K S failed for n=" + std::to_string(n),
                       jitter / 10.0);
}

}  // namespace

KernelParams KernelParams::from_values(double signal_variance, double lengthscale) {
  if (!(signal_variance > 0.0) || !(lengthscale > 0.0)) {
    throw InputError("kernel signal variance and lengthscale must be positive");
  }
  return {std::log(signal_variance), std::log(lengthscale)};
}

double KernelParams::signal_variance() const { return std::exp(log_signal_variance); }
double KernelParams::lengthscale() const { return std::exp(log_lengthscale); }

double kernel_eval(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                   const KernelParams& p) {
  if (x.size() != y.size()) {
    throw InputError("kernel_eval: dimension mismatch " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  }
  const double ell = p.lengthscale();
  return p.signal_variance() * std::exp(-0.5 * (x - y).squaredNorm() / (ell * ell));
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InputError("squared_distances: dimension mismatch");
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return d;
}

Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelParams& p) {
  const double ell = p.lengthscale();
  const double inv = -0.5 / (ell * ell);
  return p.signal_variance() * (squared_distances(a, b).array() * inv).exp().matrix();
}

Vector kernel_vector(const Matrix& states, const Eigen::Ref<const Vector>& query,
                     const KernelParams& p) {
  if (states.cols() != query.size()) throw InputError("kernel_vector: dimension mismatch");
  const double ell = p.lengthscale();
  const double inv = -0.5 / (ell * ell);
  Vector k(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    k(i) = (states.row(i).transpose() - query).squaredNorm() * inv;
  }
  return p.signal_variance() * k.array().exp().matrix();
}

bool is_positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

GramMatrix build_gram(const Matrix& states, const KernelParams& p, double jitter) {
  if (states.rows() < 1) throw InputError("build_gram: need at least one state");
  if (!(jitter >= 0.0)) throw InputError("build_gram: jitter must be >= 0");
  GramMatrix g{kernel_matrix(states, states, p), jitter};
  const Matrix base = g.entries;
  g.entries.diagonal().array() += jitter;
  if (is_positive_definite(g.entries)) return g;

  const double mean_diag = base.diagonal().mean();
  double tried = std::max(jitter, 1e-8 * mean_diag);
  while (tried <= 1e-2 * mean_diag * (1.0 + 1e-12)) {
    g.entries = base;
    g.entries.diagonal().array() += tried;
    if (is_positive_definite(g.entries)) {
      g.jitter = tried;
      return g;
    }
    tried *= 10.0;
  }
  throw NumericalError("build_gram: cholesky failed after jitter escalation", tried / 10.0);
}

Matrix GpPosterior::covariance(const Matrix& gram) const {
  const auto& f = *factor;
  Matrix v = f.sqrt_precision.asDiagonal() * gram;
  f.chol_lower.triangularView<Eigen::Lower>().solveInPlace(v);
  return gram - v.transpose() * v;
}

std::vector<GpPosterior> condition(const Matrix& gram, const Matrix& targets,
                                   const Vector& precision) {
  const Eigen::Index n = gram.rows();
  if (gram.cols() != n || targets.rows() != n || precision.size() != n) {
    throw InputError("condition: size mismatch");
  }
  if ((precision.array() <= 0.0).any() || !precision.allFinite()) {
    throw InputError("condition: precision entries must be finite and > 0");
  }

  auto factor = std::make_shared<ConditioningFactor>();
  factor->sqrt_precision = precision.cwiseSqrt();
  const Vector& s = factor->sqrt_precision;
  Eigen::LLT<Matrix> llt = factor_scaled(gram, s);
  factor->chol_lower = llt.matrixL();
  const auto lower = factor->chol_lower.triangularView<Eigen::Lower>();

  factor->log_det = 2.0 * factor->chol_lower.diagonal().array().log().sum();

  // V = L^-1 S K gives diag(C) = diag(K) - colnorms(V);
  // tr((I + SKS)^-1) = ||L^-1||_F^2.
  Matrix v = s.asDiagonal() * gram;
  lower.solveInPlace(v);
  factor->cov_diag = gram.diagonal() - v.colwise().squaredNorm().transpose();
  Matrix linv = Matrix::Identity(n, n);
  lower.solveInPlace(linv);
  factor->trace_inv = linv.squaredNorm();

  std::vector<GpPosterior> out;
  out.reserve(static_cast<std::size_t>(targets.cols()));
  const double log_det_b = precision.array().log().sum();
  for (Eigen::Index d = 0; d < targets.cols(); ++d) {
    GpPosterior post;
    post.factor = factor;
    Vector t = s.cwiseProduct(targets.col(d));
    t = llt.solve(t);
    post.weights = s.cwiseProduct(t);
    post.mean = gram * post.weights;
    const double quad = targets.col(d).dot(post.weights);
    post.log_evidence = -0.5 * quad - 0.5 * (factor->log_det - log_det_b) -
                        0.5 * static_cast<double>(n) * kLog2Pi;
    post.kl_to_prior = 0.5 * (factor->trace_inv + post.mean.dot(post.weights) -
                              static_cast<double>(n) + factor->log_det);
    out.push_back(std::move(post));
  }
  return out;
}

GpPosterior gp_posterior(const Matrix& states, const Vector& actions, const KernelParams& p,
                         const Vector& noise_diag) {
  const Eigen::Index n = states.rows();
  if (actions.size() != n || noise_diag.size() != n) {
    throw InputError("gp_posterior: actions/noise length must equal number of states");
  }
  if ((noise_diag.array() <= 0.0).any()) {
    throw InputError("gp_posterior: noise variances must be > 0");
  }
  const Matrix gram = kernel_matrix(states, states, p);
  return std::move(condition(gram, actions, noise_diag.cwiseInverse()).front());
}

double predict_mean(const GpPosterior& posterior, const Vector& k_star) {
  return k_star.dot(posterior.weights);
}

double predict_variance(const GpPosterior& posterior, const Vector& k_star,
                        double k_star_star) {
  const auto& f = *posterior.factor;
  Vector v = f.sqrt_precision.cwiseProduct(k_star);
  f.chol_lower.triangularView<Eigen::Lower>().solveInPlace(v);
  double var = k_star_star - v.squaredNorm();
  if (var < 0.0) {
    if (var < -1e-10) {
      std::cerr << "warning: negative predictive variance " << var << " clamped to 0\n";
    }
    var = 0.0;
  }
  return var;
}

Prediction gp_predict(const GpPosterior& posterior, const Matrix& model_states,
                      const KernelParams& p, const Eigen::Ref<const Vector>& query) {
  if (model_states.rows() != posterior.weights.size()) {
    throw InputError("gp_predict: posterior was built over a different state set");
  }
  const Vector k = kernel_vector(model_states, query, p);
  return {predict_mean(posterior, k), predict_variance(posterior, k, p.signal_variance())};
}

EvidenceGradient log_evidence_with_gradient(const Matrix& states, const Matrix& targets,
                                            const KernelParams& p, const Vector& precision,
                                            double jitter) {
  const Eigen::Index n = states.rows();
  if (targets.rows() != n || precision.size() != n) {
    throw InputError("log_evidence_with_gradient: size mismatch");
  }
  const Matrix d2 = squared_distances(states, states);
  const double ell2 = std::exp(2.0 * p.log_lengthscale);
  const Matrix k_raw = p.signal_variance() * (d2.array() * (-0.5 / ell2)).exp().matrix();
  Matrix gram = k_raw;
  gram.diagonal().array() += jitter;

  const Vector s = precision.cwiseSqrt();
  Eigen::LLT<Matrix> llt = factor_scaled(gram, s);
  const Matrix l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double log_det_b = precision.array().log().sum();

  // A^-1 = S (I + SKS)^-1 S with A = K + B^-1.
  Matrix a_inv = Matrix::Identity(n, n);
  llt.solveInPlace(a_inv);
  a_inv = s.asDiagonal() * a_inv * s.asDiagonal();

  EvidenceGradient out;
  Matrix outer = Matrix::Zero(n, n);
  const auto dims = static_cast<double>(targets.cols());
  for (Eigen::Index d = 0; d < targets.cols(); ++d) {
    const Vector alpha = a_inv * targets.col(d);
    out.value += -0.5 * targets.col(d).dot(alpha) - 0.5 * (log_det - log_det_b) -
                 0.5 * static_cast<double>(n) * kLog2Pi;
    outer.noalias() += alpha * alpha.transpose();
  }
  const Matrix w = outer - dims * a_inv;
  // dK/dlog sf2 = K_raw ; dK/dlog ell = K_raw .* D2 / ell^2
  out.d_log_signal_variance = 0.5 * (w.array() * k_raw.array()).sum();
  out.d_log_lengthscale = 0.5 * (w.array() * k_raw.array() * d2.array()).sum() / ell2;
  if (!std::isfinite(out.value) || !std::isfinite(out.d_log_signal_variance) ||
      !std::isfinite(out.d_log_lengthscale)) {
    throw NumericalError("log evidence or gradient is not finite");
  }
  return out;
}

}  // namespace bdi::gp
