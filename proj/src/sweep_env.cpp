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

#include "bdi/sweep_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bdi/errors.hpp"

namespace bdi::sweep {

namespace {

Vec2 vec2_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw InputError("expected a 2-vector");
  return {v[0], v[1]};
}

}  // namespace

void validate(const EnvConfig& c) {
  if (c.n_boxes < 2 || c.n_boxes > 3) throw InputError("n_boxes must be 2 or 3");
  if (!(c.table_half_extent > 0.0)) throw InputError("table_half_extent must be > 0");
  if (!(c.friction_slip >= 0.0 && c.friction_slip < 1.0)) throw InputError("friction_slip must be in [0, 1)");
  if (!(c.dt > 0.0)) throw InputError("dt must be > 0");
  if (c.horizon < 1) throw InputError("horizon must be >= 1");
  if (!(c.action_limit > 0.0)) throw InputError("action_limit must be > 0");
  if (!(c.start_perturbation >= 0.0)) throw InputError("start_perturbation must be >= 0");
  if (!(c.robot_radius > 0.0) || !(c.box_half_size > 0.0)) throw InputError("sizes must be > 0");
  if (c.n_boxes == 2 && c.two_box_offset.x() <= c.box_half_size) {
    throw InputError("two-box layout overlaps at the centre line");
  }
  if (c.n_boxes == 3 && 2.0 * (c.third_margin + c.box_half_size) >= 2.0 * c.table_half_extent / 3.0) {
    throw InputError("third_margin too large for the table");
  }
}

nlohmann::json env_config_to_json(const EnvConfig& c) {
  return {{"n_boxes", c.n_boxes},
          {"table_half_extent", c.table_half_extent},
          {"friction_slip", c.friction_slip},
          {"dt", c.dt},
          {"horizon", c.horizon},
          {"action_limit", c.action_limit},
          {"start_perturbation", c.start_perturbation},
          {"robot_radius", c.robot_radius},
          {"box_half_size", c.box_half_size},
          {"robot_start", {c.robot_start.x(), c.robot_start.y()}},
          {"two_box_offset", {c.two_box_offset.x(), c.two_box_offset.y()}},
          {"three_box_y_lo", c.three_box_y_lo},
          {"three_box_y_hi", c.three_box_y_hi},
          {"third_margin", c.third_margin}};
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("environment config must be a JSON object");
  EnvConfig c;
  try {
    c.n_boxes = j.value("n_boxes", c.n_boxes);
    c.table_half_extent = j.value("table_half_extent", c.table_half_extent);
    c.friction_slip = j.value("friction_slip", c.friction_slip);
    c.dt = j.value("dt", c.dt);
    c.horizon = j.value("horizon", c.horizon);
    c.action_limit = j.value("action_limit", c.action_limit);
    c.start_perturbation = j.value("start_perturbation", c.start_perturbation);
    c.robot_radius = j.value("robot_radius", c.robot_radius);
    c.box_half_size = j.value("box_half_size", c.box_half_size);
    if (j.contains("robot_start")) c.robot_start = vec2_from_json(j["robot_start"]);
    if (j.contains("two_box_offset")) c.two_box_offset = vec2_from_json(j["two_box_offset"]);
    c.three_box_y_lo = j.value("three_box_y_lo", c.three_box_y_lo);
    c.three_box_y_hi = j.value("three_box_y_hi", c.three_box_y_hi);
    c.third_margin = j.value("third_margin", c.third_margin);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad environment config: ") + e.what());
  }
  validate(c);
  return c;
}

int SweepWorld::score() const {
  return static_cast<int>(std::count_if(boxes.begin(), boxes.end(),
                                        [](const Box& b) { return !b.on_table; }));
}

bool SweepWorld::operator==(const SweepWorld& o) const {
  if (boxes.size() != o.boxes.size()) return false;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].pos != o.boxes[i].pos || boxes[i].on_table != o.boxes[i].on_table) return false;
  }
  return robot == o.robot && t == o.t && half_extent == o.half_extent;
}

SweepWorld reset(const EnvConfig& config, double start_perturbation, std::uint64_t seed) {
  validate(config);
  if (!(start_perturbation >= 0.0)) throw InputError("start perturbation must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  SweepWorld w;
  w.half_extent = config.table_half_extent;
  w.robot_radius = config.robot_radius;
  w.friction_slip = config.friction_slip;
  w.dt = config.dt;
  w.horizon = config.horizon;
  w.action_limit = config.action_limit;

  const double h = config.box_half_size;
  if (config.n_boxes == 2) {
    const Vec2 o = config.two_box_offset;
    w.boxes.push_back({Vec2(-o.x(), o.y()), true, h});
    w.boxes.push_back({Vec2(o.x(), o.y()), true, h});
  } else {
    const double width = 2.0 * config.table_half_extent / 3.0;
    for (int i = 0; i < 3; ++i) {
      const double lo = -config.table_half_extent + i * width + config.third_margin + h;
      const double hi = -config.table_half_extent + (i + 1) * width - config.third_margin - h;
      std::uniform_real_distribution<double> ux(lo, hi);
      std::uniform_real_distribution<double> uy(config.three_box_y_lo, config.three_box_y_hi);
      const double x = ux(rng);
      const double y = uy(rng);
      w.boxes.push_back({Vec2(x, y), true, h});
    }
  }
  w.robot = config.robot_start;
  if (start_perturbation > 0.0) {
    const double dx = unit(rng);
    const double dy = unit(rng);
    w.robot += start_perturbation * Vec2(dx, dy);
  }
  return w;
}

Vector observe(const SweepWorld& world) {
  Vector s(2 * static_cast<Eigen::Index>(world.boxes.size()));
  for (std::size_t i = 0; i < world.boxes.size(); ++i) {
    s.segment<2>(2 * static_cast<Eigen::Index>(i)) = world.boxes[i].pos - world.robot;
  }
  return s;
}

Vec2 clamp_action(const SweepWorld& world, const Vec2& action) {
  const double n = action.norm();
  // Tolerance keeps the clamp idempotent under rounding.
  if (n > world.action_limit * (1.0 + 8.0 * std::numeric_limits<double>::epsilon())) {
    return action * (world.action_limit / n);
  }
  return action;
}

void advance(SweepWorld& world, const Vec2& action) {
  world.robot += clamp_action(world, action) * world.dt;
  const double bound = world.half_extent + 2.0 * world.robot_radius;
  world.robot = world.robot.cwiseMax(Vec2::Constant(-bound)).cwiseMin(Vec2::Constant(bound));

  const double r = world.robot_radius;
  for (auto& box : world.boxes) {
    if (!box.on_table) continue;
    const Vec2 d = world.robot - box.pos;
    const double h = box.half_size;
    const Vec2 closest = box.pos + d.cwiseMax(Vec2::Constant(-h)).cwiseMin(Vec2::Constant(h));
    const Vec2 gap = closest - world.robot;
    const double dist = gap.norm();
    Vec2 normal;
    double overlap = 0.0;
    if (dist > 0.0) {
      if (dist >= r) continue;
      normal = gap / dist;
      overlap = r - dist;
    } else {
      // Robot centre inside the box: leave through the shallowest face.
      const double px = h - std::abs(d.x());
      const double py = h - std::abs(d.y());
      if (px < py) {
        normal = Vec2(d.x() > 0 ? -1.0 : 1.0, 0.0);
        overlap = r + px;
      } else {
        normal = Vec2(0.0, d.y() > 0 ? -1.0 : 1.0);
        overlap = r + py;
      }
    }
    box.pos += normal * (overlap * (1.0 - world.friction_slip));
    world.robot -= normal * (overlap * world.friction_slip);
    if (std::abs(box.pos.x()) > world.half_extent || std::abs(box.pos.y()) > world.half_extent) {
      box.on_table = false;
    }
  }
  ++world.t;
}

StepResult step(const SweepWorld& world, const Vec2& action) {
  StepResult out{world, {}};
  advance(out.world, action);
  out.observation = observe(out.world);
  return out;
}

Vec2 nearest_edge_direction(double half_extent, const Vec2& pos) {
  const double left = pos.x() + half_extent;
  const double right = half_extent - pos.x();
  const double bottom = pos.y() + half_extent;
  const double top = half_extent - pos.y();
  const double best = std::min({left, right, bottom, top});
  if (best == top) return {0.0, 1.0};
  if (best == left) return {-1.0, 0.0};
  if (best == right) return {1.0, 0.0};
  return {0.0, -1.0};
}

std::vector<int> sweep_order(int n_boxes, int variant) {
  std::vector<int> order(static_cast<std::size_t>(n_boxes));
  for (int i = 0; i < n_boxes; ++i) order[static_cast<std::size_t>(i)] = i;
  if (variant % 2 == 1) std::reverse(order.begin(), order.end());
  return order;
}

nlohmann::json pid_gains_to_json(const PidGains& g) {
  return {{"kp", g.kp},
          {"ki", g.ki},
          {"kd", g.kd},
          {"lateral_gain", g.lateral_gain},
          {"staging_margin", g.staging_margin},
          {"follow_through", g.follow_through},
          {"max_delta", g.max_delta}};
}

PidGains pid_gains_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("gains must be a JSON object");
  PidGains g;
  try {
    g.kp = j.value("kp", g.kp);
    g.ki = j.value("ki", g.ki);
    g.kd = j.value("kd", g.kd);
    g.lateral_gain = j.value("lateral_gain", g.lateral_gain);
    g.staging_margin = j.value("staging_margin", g.staging_margin);
    g.follow_through = j.value("follow_through", g.follow_through);
    g.max_delta = j.value("max_delta", g.max_delta);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad gains: ") + e.what());
  }
  if (!(g.kp > 0.0) || g.ki < 0.0 || g.kd < 0.0 || g.lateral_gain < 0.0 || g.staging_margin < 0.0 ||
      g.follow_through < 0.0 || g.max_delta < 0.0) {
    throw InputError("gains must be non-negative with kp > 0");
  }
  return g;
}

PidExpert::PidExpert(std::vector<int> order, PidGains gains)
    : order_(std::move(order)), gains_(gains) {}

void PidExpert::reset() {
  reset_pid();
  last_output_.setZero();
  followed_ = -1;
}

void PidExpert::reset_pid() {
  integral_.setZero();
  prev_error_.setZero();
  has_prev_ = false;
}

int PidExpert::current_target(const SweepWorld& world) const {
  for (int idx : order_) {
    if (idx >= 0 && idx < static_cast<int>(world.boxes.size()) &&
        world.boxes[static_cast<std::size_t>(idx)].on_table) {
      return idx;
    }
  }
  return -1;
}

Vec2 PidExpert::intended_action(const SweepWorld& world) {
  Vec2 out = raw_action(world);
  if (gains_.max_delta > 0.0) {
    Vec2 change = out - last_output_;
    const double n = change.norm();
    if (n > gains_.max_delta) change *= gains_.max_delta / n;
    out = last_output_ + change;
  }
  last_output_ = out;
  return out;
}

Vec2 PidExpert::raw_action(const SweepWorld& world) {
  const int target = current_target(world);
  if (target < 0) return Vec2::Zero();

  // Follow through on the box swept last: keep driving toward its edge for a
  // short distance after it has left the table.
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    if (*it < 0 || *it >= static_cast<int>(world.boxes.size())) continue;
    const Box& prev = world.boxes[static_cast<std::size_t>(*it)];
    if (prev.on_table) continue;
    const double contact = prev.half_size + world.robot_radius;
    const Vec2 e = nearest_edge_direction(world.half_extent, prev.pos);
    const Vec2 p = world.robot - prev.pos;
    const Vec2 side(-e.y(), e.x());
    if (followed_ == *it) break;
    if (std::abs(p.dot(side)) < prev.half_size && p.dot(e) < -contact + gains_.follow_through &&
        p.dot(e) > -contact - 0.01) {
      return world.action_limit * e;
    }
    // Once left, the zone stays inactive for this box.
    followed_ = *it;
    break;
  }

  const Box& box = world.boxes[static_cast<std::size_t>(target)];
  const Vec2 e = nearest_edge_direction(world.half_extent, box.pos);
  const Vec2 side(-e.y(), e.x());
  const double contact = box.half_size + world.robot_radius;
  const double staging_along = -(contact + gains_.staging_margin);

  const Vec2 p = world.robot - box.pos;
  const double along = p.dot(e);
  const double lateral = p.dot(side);

  // Pushing: behind the box within its face, drive through it toward the
  // edge while correcting the lateral offset.
  if (along >= staging_along - 0.004 && along <= -box.half_size &&
      std::abs(lateral) < 0.8 * box.half_size) {
    reset_pid();
    const Vec2 push = world.action_limit * e - gains_.lateral_gain * lateral * side;
    return clamp_action(world, push);
  }

  Vec2 goal;
  if (along <= staging_along + 0.003) {
    goal = box.pos + staging_along * e;
  } else {
    // In front of or beside the box: reach the staging plane on the side
    // the robot is already on, clear of the box.
    const double clear = contact + gains_.staging_margin + 0.005;
    const double sign = lateral >= 0.0 ? 1.0 : -1.0;
    if (std::abs(lateral) < clear - 1e-3) {
      goal = world.robot + (sign * clear - lateral) * side;
    } else {
      goal = box.pos + staging_along * e + sign * clear * side;
    }
  }

  const Vec2 error = goal - world.robot;
  integral_ += error * world.dt;
  const Vec2 derivative = has_prev_ ? Vec2((error - prev_error_) / world.dt) : Vec2::Zero();
  prev_error_ = error;
  has_prev_ = true;
  return clamp_action(world, gains_.kp * error + gains_.ki * integral_ + gains_.kd * derivative);
}

EpisodeResult rollout(SweepWorld world, const Policy& policy, int horizon) {
  EpisodeResult out;
  for (int t = 0; t < horizon && !world.success(); ++t) {
    const Vector obs = observe(world);
    const Vec2 action = policy(world, obs);
    if (!action.allFinite()) {
      out.policy_error = true;
      break;
    }
    out.trajectory.states.push_back(obs);
    out.trajectory.intended.push_back(action);
    out.trajectory.executed.push_back(clamp_action(world, action));
    advance(world, action);
  }
  out.score = world.score();
  out.success = world.success();
  out.trajectory.score = out.score;
  out.trajectory.success = out.success;
  return out;
}

}  // namespace bdi::sweep
