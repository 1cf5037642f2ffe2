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

#include "bdi/demo_session.hpp"

#include <cmath>

#include "bdi/disturbance_loop.hpp"
#include "bdi/errors.hpp"

namespace bdi::demo {

std::string status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::succeeded: return "succeeded";
    case SessionStatus::failed: return "failed";
    case SessionStatus::discarded: return "discarded";
  }
  return "?";
}

namespace {

nlohmann::json vec2_json(const sweep::Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }

sweep::Vec2 vec2_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw InputError("expected a 2-vector of numbers");
  }
  const sweep::Vec2 v(j[0].get<double>(), j[1].get<double>());
  if (!v.allFinite()) throw InputError("action must be finite");
  return v;
}

}  // namespace

DemoSession::DemoSession(std::string id, const sweep::EnvConfig& env, double sigma2,
                         std::uint64_t seed)
    : id_(std::move(id)), env_(env), sigma2_(sigma2), rng_(derive_seed(seed, 500)) {
  sweep::validate(env_);
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw InputError("sigma2 must be finite and >= 0");
  world_ = sweep::reset(env_, env_.start_perturbation, derive_seed(seed, 501));
}

void DemoSession::require_active(const char* op) const {
  if (status_ != SessionStatus::active) {
    throw ProtocolError(std::string(op) + ": session " + id_ + " is " + status_name(status_));
  }
}

void DemoSession::command(const sweep::Vec2& intended) {
  require_active("step");
  if (!intended.allFinite()) throw InputError("action must be finite");
  held_ = intended;
  fresh_ = true;
}

const StepLog& DemoSession::advance_tick() {
  require_active("tick");
  StepLog rec;
  rec.tick = world_.t;
  rec.state = sweep::observe(world_);
  rec.intended = held_;
  rec.held = !fresh_;
  sweep::Vec2 eps = sweep::Vec2::Zero();
  if (sigma2_ > 0.0) {
    const double sd = std::sqrt(sigma2_);
    const double e0 = normal_(rng_);
    const double e1 = normal_(rng_);
    eps = sd * sweep::Vec2(e0, e1);
  }
  const sweep::Vec2 disturbed = held_ + eps;
  rec.noise = disturbed - held_;
  rec.executed = sweep::clamp_action(world_, disturbed);
  sweep::advance(world_, rec.executed);
  fresh_ = false;
  log_.push_back(rec);
  if (world_.success()) {
    status_ = SessionStatus::succeeded;
  } else if (world_.t >= env_.horizon) {
    status_ = SessionStatus::failed;
  }
  return log_.back();
}

const StepLog& DemoSession::step(const sweep::Vec2& intended) {
  command(intended);
  return advance_tick();
}

void DemoSession::abort() {
  require_active("abort");
  status_ = SessionStatus::failed;
}

std::optional<nlohmann::json> DemoSession::finish(bool accept) {
  if (finished_) throw ProtocolError("finish: session " + id_ + " already finished");
  if (status_ == SessionStatus::active) status_ = SessionStatus::failed;
  finished_ = true;
  if (!accept) {
    status_ = SessionStatus::discarded;
    log_.clear();
    return std::nullopt;
  }
  return fragment();
}

nlohmann::json DemoSession::view() const {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : world_.boxes) {
    boxes.push_back({{"pos", vec2_json(b.pos)}, {"on_table", b.on_table}, {"half_size", b.half_size}});
  }
  const StepLog* last = log_.empty() ? nullptr : &log_.back();
  return {{"session", id_},
          {"tick", world_.t},
          {"robot", vec2_json(world_.robot)},
          {"robot_radius", world_.robot_radius},
          {"half_extent", world_.half_extent},
          {"boxes", boxes},
          {"intended", vec2_json(last ? last->intended : held_)},
          {"executed", vec2_json(last ? last->executed : sweep::Vec2::Zero().eval())},
          {"score", world_.score()},
          {"status", status_name(status_)},
          {"sigma2", sigma2_}};
}

nlohmann::json DemoSession::fragment() const {
  const int q = 2 * env_.n_boxes;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& s : log_) {
    pairs.push_back({{"s", vector_to_json(s.state)}, {"a", vec2_json(s.intended)}});
  }
  const int score = world_.score();
  return {{"version", kDatasetSchemaVersion},
          {"Q", q},
          {"D", 2},
          {"rounds", nlohmann::json::array({{{"sigma2", sigma2_}, {"pairs", pairs}}})},
          {"metadata",
           {{"session", id_},
            {"score", score},
            {"n_boxes", env_.n_boxes},
            {"success", score == env_.n_boxes},
            {"incomplete", score < env_.n_boxes},
            {"steps", static_cast<int>(log_.size())}}}};
}

RoundSegmentedDataset dataset_from_fragments(const std::vector<nlohmann::json>& fragments) {
  if (fragments.empty()) throw InputError("no fragments");
  RoundSegmentedDataset out;
  bool first = true;
  for (const auto& f : fragments) {
    const RoundSegmentedDataset part = dataset_from_json(f);
    if (first) {
      out = RoundSegmentedDataset(part.state_dim(), part.action_dim());
      first = false;
    }
    if (part.state_dim() != out.state_dim() || part.action_dim() != out.action_dim()) {
      throw InputError("fragments disagree on dimensions");
    }
    for (std::size_t r = 0; r < part.round_count(); ++r) {
      const auto off = part.round_offset(r);
      const auto n = part.round_sizes()[r];
      out.append_round(part.states().middleRows(off, n), part.actions().middleRows(off, n),
                       part.collection_variances()[r]);
    }
  }
  return out;
}

bool audit_labels(const DemoSession& session) {
  const double limit = session.world().action_limit;
  for (const auto& s : session.log()) {
    const sweep::Vec2 disturbed = s.intended + s.noise;
    if (s.executed == disturbed) {
      if (s.executed - s.intended != s.noise) return false;
    } else {
      if (!(disturbed.norm() > limit)) return false;
      // Clamped steps keep the disturbed direction at the speed limit.
      const sweep::Vec2 expect = disturbed * (limit / disturbed.norm());
      if ((expect - s.executed).norm() > 1e-15 * limit) return false;
    }
  }
  return true;
}

double next_injection_variance(const IomgpModel& model) {
  if (model.noise.variances.empty()) return model.noise.initial_variance;
  return model.noise.variances.back();
}

SessionManager::SessionManager(sweep::EnvConfig default_env, double default_sigma2,
                               std::uint64_t base_seed)
    : default_env_(default_env), default_sigma2_(default_sigma2), base_seed_(base_seed) {
  sweep::validate(default_env_);
}

std::shared_ptr<SessionManager::Slot> SessionManager::find(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ProtocolError("unknown session: " + id);
  return it->second;
}

nlohmann::json SessionManager::start(const nlohmann::json& request) {
  sweep::EnvConfig env = default_env_;
  if (request.contains("config")) env = sweep::env_config_from_json(request.at("config"));
  const double sigma2 = request.value("sigma2", default_sigma2_);
  std::string id;
  std::uint64_t seed = 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    id = "s" + std::to_string(counter_++);
    seed = request.contains("seed") ? request.at("seed").get<std::uint64_t>()
                                    : derive_seed(base_seed_, counter_);
  }
  auto slot = std::make_shared<Slot>();
  slot->session = std::make_unique<DemoSession>(id, env, sigma2, seed);
  nlohmann::json view = slot->session->view();
  std::lock_guard<std::mutex> lock(mu_);
  sessions_[id] = std::move(slot);
  return view;
}

nlohmann::json SessionManager::handle(const nlohmann::json& request) {
  try {
    if (!request.is_object() || !request.contains("type")) throw InputError("request needs a type");
    const std::string type = request.at("type").get<std::string>();
    if (type == "start") return start(request);

    const auto slot = find(request.at("session").get<std::string>());
    std::lock_guard<std::mutex> lock(slot->mu);
    DemoSession& s = *slot->session;
    if (type == "state") return s.view();
    if (type == "step") {
      const sweep::Vec2 a = vec2_from(request.at("intended"));
      // Lockstep clients advance the world themselves; realtime clients only
      // update the held command and let the ticker advance.
      if (request.value("advance", true)) {
        s.step(a);
      } else {
        s.command(a);
      }
      nlohmann::json v = s.view();
      if (!s.log().empty()) v["noise"] = vec2_json(s.log().back().noise);
      return v;
    }
    if (type == "finish") {
      auto frag = s.finish(request.value("accept", false));
      nlohmann::json v = s.view();
      if (frag) {
        v["fragment"] = *frag;
        std::lock_guard<std::mutex> g(mu_);
        accepted_.push_back(*frag);
      }
      return v;
    }
    throw InputError("unknown request type: " + type);
  } catch (const ProtocolError& e) {
    return {{"error", "protocol"}, {"reason", e.what()}};
  } catch (const std::exception& e) {
    return {{"error", "invalid"}, {"reason", e.what()}};
  }
}

void SessionManager::tick_all() {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, slot] : sessions_) slots.push_back(slot);
  }
  for (auto& slot : slots) {
    std::lock_guard<std::mutex> lock(slot->mu);
    if (slot->session->status() == SessionStatus::active) slot->session->advance_tick();
  }
}

std::size_t SessionManager::session_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return sessions_.size();
}

std::vector<nlohmann::json> SessionManager::accepted() const {
  std::lock_guard<std::mutex> lock(mu_);
  return accepted_;
}

}  // namespace bdi::demo
