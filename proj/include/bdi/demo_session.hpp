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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdi/dataset.hpp"
#include "bdi/iomgp.hpp"
#include "bdi/sweep_env.hpp"

namespace bdi::demo {

enum class SessionStatus { active, succeeded, failed, discarded };

std::string status_name(SessionStatus s);

/// One processed tick. `noise` is the disturbance actually applied, so
/// clamp(intended + noise) == executed bit for bit.
struct StepLog {
  int tick = 0;
  Vector state;
  sweep::Vec2 intended = sweep::Vec2::Zero();
  sweep::Vec2 noise = sweep::Vec2::Zero();
  sweep::Vec2 executed = sweep::Vec2::Zero();
  bool held = false;  // no fresh command arrived; previous intended reused
};

/// A single live demonstration. The server samples the noise and records
/// the intended actions; clients only submit commands.
class DemoSession {
 public:
  DemoSession(std::string id, const sweep::EnvConfig& env, double sigma2, std::uint64_t seed);

  const std::string& id() const { return id_; }
  SessionStatus status() const { return status_; }
  double sigma2() const { return sigma2_; }
  const sweep::SweepWorld& world() const { return world_; }
  const std::vector<StepLog>& log() const { return log_; }
  int tick() const { return world_.t; }

  /// Sets the command used by the next tick.
  void command(const sweep::Vec2& intended);
  /// Advances one tick with the latest command (zero-order hold).
  const StepLog& advance_tick();
  /// command() followed by advance_tick().
  const StepLog& step(const sweep::Vec2& intended);
  /// Ends an active episode early; status becomes failed.
  void abort();
  /// Ends the session. Accepting returns the recorded fragment; an active
  /// episode is aborted first. Declining discards the buffer.
  std::optional<nlohmann::json> finish(bool accept);

  /// {session, tick, robot, boxes[], intended, executed, score, status, sigma2}
  nlohmann::json view() const;
  /// Standard dataset document holding one round, plus a metadata block.
  nlohmann::json fragment() const;

 private:
  void require_active(const char* op) const;

  std::string id_;
  sweep::EnvConfig env_;
  double sigma2_;
  sweep::SweepWorld world_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  SessionStatus status_ = SessionStatus::active;
  bool finished_ = false;
  sweep::Vec2 held_ = sweep::Vec2::Zero();
  bool fresh_ = false;
  std::vector<StepLog> log_;
};

/// Rebuilds a round-segmented dataset from accepted fragments, one round per
/// fragment.
RoundSegmentedDataset dataset_from_fragments(const std::vector<nlohmann::json>& fragments);

/// True when every logged step satisfies executed == clamp(intended + noise).
bool audit_labels(const DemoSession& session);

/// Injection variance a trained model hands to the next round.
double next_injection_variance(const IomgpModel& model);

/// Sessions keyed by id, each guarded by its own lock.
class SessionManager {
 public:
  explicit SessionManager(sweep::EnvConfig default_env = {}, double default_sigma2 = 0.0,
                          std::uint64_t base_seed = 0);

  /// Handles one protocol message {type: start|step|finish|state, ...}.
  /// Errors are returned as {error, reason} rather than thrown.
  nlohmann::json handle(const nlohmann::json& request);

  /// Advances every active session by one tick.
  void tick_all();

  std::size_t session_count() const;
  /// Accepted fragments in acceptance order.
  std::vector<nlohmann::json> accepted() const;

 private:
  struct Slot {
    std::mutex mu;
    std::unique_ptr<DemoSession> session;
  };
  std::shared_ptr<Slot> find(const std::string& id) const;

  nlohmann::json start(const nlohmann::json& request);

  sweep::EnvConfig default_env_;
  double default_sigma2_;
  std::uint64_t base_seed_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::vector<nlohmann::json> accepted_;
  std::uint64_t counter_ = 0;
};

}  // namespace bdi::demo
