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

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace bdi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One demonstration: observed states, the supervisor's intended actions
/// (the labels) and the noise-perturbed actions actually executed.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> intended;
  std::vector<Vector> executed;
  int score = 0;
  bool success = false;

  std::size_t size() const { return states.size(); }
};

/// State-action pairs stored in collection order and segmented by the
/// round that produced them.
class RoundSegmentedDataset {
 public:
  RoundSegmentedDataset() = default;
  RoundSegmentedDataset(int state_dim, int action_dim);

  /// Appends one round. `collection_variance` is the injection variance the
  /// round was collected under (0 for plain behavior cloning).
  void append_round(const Matrix& states, const Matrix& actions, double collection_variance);
  void append_round(const std::vector<Trajectory>& demos, double collection_variance,
                    int record_stride = 1);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  Eigen::Index size() const { return states_.rows(); }
  bool empty() const { return states_.rows() == 0; }
  std::size_t round_count() const { return round_sizes_.size(); }

  const Matrix& states() const { return states_; }
  const Matrix& actions() const { return actions_; }
  const std::vector<int>& round_sizes() const { return round_sizes_; }
  const std::vector<double>& collection_variances() const { return collection_variances_; }
  Eigen::Index round_offset(std::size_t round) const;
  std::size_t round_of(Eigen::Index n) const { return round_index_[static_cast<std::size_t>(n)]; }

  bool operator==(const RoundSegmentedDataset& other) const;

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  Matrix states_;
  Matrix actions_;
  std::vector<int> round_sizes_;
  std::vector<double> collection_variances_;
  std::vector<std::size_t> round_index_;
};

/// Injection-noise variances. `variances[j]` is the likelihood variance
/// attached to round j's data; it is also the variance injected while
/// collecting round j + 1. Round 0 is collected under `initial_variance`.
struct NoiseSchedule {
  double initial_variance = 1e-4;
  std::vector<double> variances;

  double injection_variance(std::size_t round) const;
  /// Pads `variances` to `rounds` entries with the latest injection variance.
  NoiseSchedule extended_to(std::size_t rounds) const;
  bool operator==(const NoiseSchedule&) const = default;
};

/// Per-datum likelihood variance Sigma_nn, piecewise constant over rounds.
Vector hetero_noise_diag(const RoundSegmentedDataset& data, const NoiseSchedule& noise);

// Dataset file: {version, Q, D, rounds: [{sigma2, pairs: [{s, a}]}]}.
inline constexpr int kDatasetSchemaVersion = 1;
nlohmann::json dataset_to_json(const RoundSegmentedDataset& data);
RoundSegmentedDataset dataset_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace bdi
