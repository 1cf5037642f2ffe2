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

#include "bdi/dataset.hpp"

#include <cmath>
#include <fstream>

#include "bdi/errors.hpp"

namespace bdi {

RoundSegmentedDataset::RoundSegmentedDataset(int state_dim, int action_dim)
    : state_dim_(state_dim), action_dim_(action_dim), states_(0, state_dim),
      actions_(0, action_dim) {
  if (state_dim < 1 || action_dim < 1) throw InputError("dataset dimensions must be >= 1");
}

void RoundSegmentedDataset::append_round(const Matrix& states, const Matrix& actions,
                                         double collection_variance) {
  if (states.rows() < 1) throw InputError("append_round: a round needs at least one pair");
  if (states.rows() != actions.rows()) throw InputError("append_round: states/actions length mismatch");
  if (state_dim_ == 0 && action_dim_ == 0) {
    state_dim_ = static_cast<int>(states.cols());
    action_dim_ = static_cast<int>(actions.cols());
    states_.resize(0, state_dim_);
    actions_.resize(0, action_dim_);
  }
  if (states.cols() != state_dim_ || actions.cols() != action_dim_) {
    throw InputError("append_round: dimension mismatch with dataset");
  }
  if (!states.allFinite() || !actions.allFinite()) throw InputError("append_round: non-finite entries");
  if (!(collection_variance >= 0.0)) throw InputError("append_round: collection variance must be >= 0");

  const Eigen::Index old = states_.rows();
  const Eigen::Index add = states.rows();
  states_.conservativeResize(old + add, Eigen::NoChange);
  actions_.conservativeResize(old + add, Eigen::NoChange);
  states_.bottomRows(add) = states;
  actions_.bottomRows(add) = actions;
  round_index_.insert(round_index_.end(), static_cast<std::size_t>(add), round_sizes_.size());
  round_sizes_.push_back(static_cast<int>(add));
  collection_variances_.push_back(collection_variance);
}

void RoundSegmentedDataset::append_round(const std::vector<Trajectory>& demos,
                                         double collection_variance, int record_stride) {
  if (record_stride < 1) throw InputError("record_stride must be >= 1");
  std::vector<const Vector*> s;
  std::vector<const Vector*> a;
  for (const auto& d : demos) {
    for (std::size_t t = 0; t < d.size(); t += static_cast<std::size_t>(record_stride)) {
      s.push_back(&d.states[t]);
      a.push_back(&d.intended[t]);
    }
  }
  if (s.empty()) throw InputError("append_round: demonstrations are empty");
  Matrix sm(static_cast<Eigen::Index>(s.size()), s.front()->size());
  Matrix am(static_cast<Eigen::Index>(a.size()), a.front()->size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    sm.row(static_cast<Eigen::Index>(i)) = s[i]->transpose();
    am.row(static_cast<Eigen::Index>(i)) = a[i]->transpose();
  }
  append_round(sm, am, collection_variance);
}

Eigen::Index RoundSegmentedDataset::round_offset(std::size_t round) const {
  Eigen::Index off = 0;
  for (std::size_t j = 0; j < round && j < round_sizes_.size(); ++j) off += round_sizes_[j];
  return off;
}

bool RoundSegmentedDataset::operator==(const RoundSegmentedDataset& o) const {
  return state_dim_ == o.state_dim_ && action_dim_ == o.action_dim_ &&
         round_sizes_ == o.round_sizes_ && collection_variances_ == o.collection_variances_ &&
         states_ == o.states_ && actions_ == o.actions_;
}

double NoiseSchedule::injection_variance(std::size_t round) const {
  if (round == 0) return initial_variance;
  if (round - 1 >= variances.size()) throw InputError("injection_variance: round not yet optimized");
  return variances[round - 1];
}

NoiseSchedule NoiseSchedule::extended_to(std::size_t rounds) const {
  NoiseSchedule out = *this;
  while (out.variances.size() < rounds) {
    out.variances.push_back(out.variances.empty() ? initial_variance : out.variances.back());
  }
  return out;
}

Vector hetero_noise_diag(const RoundSegmentedDataset& data, const NoiseSchedule& noise) {
  if (noise.variances.size() < data.round_count()) {
    throw InputError("hetero_noise_diag: noise schedule shorter than round count");
  }
  Vector diag(data.size());
  for (Eigen::Index n = 0; n < data.size(); ++n) {
    const double v = noise.variances[data.round_of(n)];
    if (!(v > 0.0)) throw InputError("hetero_noise_diag: variances must be > 0");
    diag(n) = v;
  }
  return diag;
}

nlohmann::json vector_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("matrix must be a nested array");
  if (j.empty()) return Matrix(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw InputError("ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

nlohmann::json dataset_to_json(const RoundSegmentedDataset& data) {
  nlohmann::json j;
  j["version"] = kDatasetSchemaVersion;
  j["Q"] = data.state_dim();
  j["D"] = data.action_dim();
  auto rounds = nlohmann::json::array();
  for (std::size_t r = 0; r < data.round_count(); ++r) {
    nlohmann::json round;
    round["sigma2"] = data.collection_variances()[r];
    auto pairs = nlohmann::json::array();
    const Eigen::Index off = data.round_offset(r);
    for (Eigen::Index n = off; n < off + data.round_sizes()[r]; ++n) {
      pairs.push_back({{"s", vector_to_json(data.states().row(n).transpose())},
                       {"a", vector_to_json(data.actions().row(n).transpose())}});
    }
    round["pairs"] = std::move(pairs);
    rounds.push_back(std::move(round));
  }
  j["rounds"] = std::move(rounds);
  return j;
}

RoundSegmentedDataset dataset_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kDatasetSchemaVersion) {
      throw InputError("unsupported dataset schema version");
    }
    RoundSegmentedDataset data(j.at("Q").get<int>(), j.at("D").get<int>());
    for (const auto& round : j.at("rounds")) {
      const auto& pairs = round.at("pairs");
      Matrix s(static_cast<Eigen::Index>(pairs.size()), data.state_dim());
      Matrix a(static_cast<Eigen::Index>(pairs.size()), data.action_dim());
      Eigen::Index i = 0;
      for (const auto& p : pairs) {
        const Vector sv = vector_from_json(p.at("s"));
        const Vector av = vector_from_json(p.at("a"));
        if (sv.size() != s.cols() || av.size() != a.cols()) {
          throw InputError("dataset pair has wrong dimension");
        }
        s.row(i) = sv.transpose();
        a.row(i) = av.transpose();
        ++i;
      }
      data.append_round(s, a, round.at("sigma2").get<double>());
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed dataset json: ") + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << j.dump(1) << '\n';
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("invalid json in " + path + ": " + e.what());
  }
}

}  // namespace bdi
