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
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bdi/dataset.hpp"

namespace bdi::sweep {

using Vec2 = Eigen::Vector2d;

/// Physical and layout constants of the table-sweep world. Lengths in
/// meters, velocities in m/s.
struct EnvConfig {
  int n_boxes = 2;
  double table_half_extent = 0.25;
  double friction_slip = 0.2;
  double dt = 0.05;
  int horizon = 200;
  double action_limit = 0.1;
  double start_perturbation = 0.01;

  double robot_radius = 0.02;
  double box_half_size = 0.015;
  Vec2 robot_start{0.0, 0.0};
  // Two-box layout: boxes at (-x, y) and (x, y).
  Vec2 two_box_offset{0.05, 0.16};
  // Three-box layout: one box per third of the table width, y drawn from
  // this band, kept `third_margin` away from each third's borders.
  double three_box_y_lo = 0.10;
  double three_box_y_hi = 0.17;
  double third_margin = 0.02;

  bool operator==(const EnvConfig&) const = default;
};

nlohmann::json env_config_to_json(const EnvConfig& c);
/// Missing keys keep their defaults; invalid values raise InputError.
EnvConfig env_config_from_json(const nlohmann::json& j);
void validate(const EnvConfig& c);

struct Box {
  Vec2 pos;
  bool on_table = true;
  double half_size = 0.015;
};

struct SweepWorld {
  double half_extent = 0.25;
  Vec2 robot = Vec2::Zero();
  double robot_radius = 0.02;
  std::vector<Box> boxes;
  double friction_slip = 0.2;
  double dt = 0.05;
  int horizon = 200;
  double action_limit = 0.1;
  int t = 0;

  int score() const;
  bool success() const { return score() == static_cast<int>(boxes.size()); }
  bool operator==(const SweepWorld& o) const;
};

/// Fresh world. Two boxes sit at fixed mirror-symmetric positions; three
/// boxes are drawn one per table third. The robot starts at
/// robot_start + U(-p, p)^2.
SweepWorld reset(const EnvConfig& config, double start_perturbation, std::uint64_t seed);

/// Relative coordinates box_i - robot, flattened (Q = 2 * n_boxes).
Vector observe(const SweepWorld& world);

/// Action clamped to the world's speed limit (vector norm).
Vec2 clamp_action(const SweepWorld& world, const Vec2& action);

/// Quasi-static transition: move the robot by clamp(action) * dt, then push
/// each overlapped box along the contact normal by overlap * (1 - slip) while
/// the robot gives back overlap * slip. Boxes whose centre leaves the table
/// are marked off-table and frozen.
void advance(SweepWorld& world, const Vec2& action);

struct StepResult {
  SweepWorld world;
  Vector observation;
};
StepResult step(const SweepWorld& world, const Vec2& action);

struct PidGains {
  double kp = 6.0;
  double ki = 0.0;
  double kd = 0.0;
  double lateral_gain = 6.0;
  double staging_margin = 0.008;
  double follow_through = 0.03;
  // Largest change of the commanded velocity per step (0 disables).
  double max_delta = 0.0;
};

nlohmann::json pid_gains_to_json(const PidGains& g);
PidGains pid_gains_from_json(const nlohmann::json& j);

/// Algorithmic supervisor. Sweeps the on-table boxes in `order`, pushing each
/// one across its nearest table edge: approach a staging point behind the
/// box, then drive through it. PID on the position error, output clamped to
/// the action limit and optionally slew-limited between steps.
class PidExpert {
 public:
  PidExpert(std::vector<int> order, PidGains gains = {});

  void reset();
  Vec2 intended_action(const SweepWorld& world);
  int current_target(const SweepWorld& world) const;
  const std::vector<int>& order() const { return order_; }

 private:
  Vec2 raw_action(const SweepWorld& world);
  void reset_pid();

  std::vector<int> order_;
  PidGains gains_;
  Vec2 last_output_ = Vec2::Zero();
  Vec2 integral_ = Vec2::Zero();
  Vec2 prev_error_ = Vec2::Zero();
  bool has_prev_ = false;
  int followed_ = -1;
};

/// Direction (unit axis) of the table edge closest to `pos`.
Vec2 nearest_edge_direction(double half_extent, const Vec2& pos);

/// Sweep orders used by demonstrations: index 0 ascending, 1 descending.
std::vector<int> sweep_order(int n_boxes, int variant);

struct EpisodeResult {
  Trajectory trajectory;
  int score = 0;
  bool success = false;
  bool policy_error = false;
};

using Policy = std::function<Vec2(const SweepWorld&, const Vector& observation)>;

/// Steps the world with `policy` until success or `horizon` steps.
EpisodeResult rollout(SweepWorld world, const Policy& policy, int horizon);

}  // namespace bdi::sweep
