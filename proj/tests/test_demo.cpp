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

#include <chrono>
#include <filesystem>
#include <thread>

#include "bdi/demo_server.hpp"
#include "bdi/demo_session.hpp"
#include "bdi/disturbance_loop.hpp"
#include "bdi/errors.hpp"
#include "doctest.h"
#include "httplib.h"

using namespace bdi;
using namespace bdi::demo;
namespace fs = std::filesystem;

namespace {

// Drives a session with the PID expert until the episode ends.
void expert_drive(DemoSession& s, int variant) {
  sweep::PidExpert ex(sweep::sweep_order(s.world().boxes.size() == 3 ? 3 : 2, variant));
  while (s.status() == SessionStatus::active) s.step(ex.intended_action(s.world()));
}

}  // namespace

TEST_CASE("same seed gives the same initial view") {
  sweep::EnvConfig env;
  DemoSession a("a", env, 1e-3, 42), b("a", env, 1e-3, 42);
  CHECK(a.view() == b.view());
  DemoSession c("a", env, 1e-3, 43);
  CHECK(c.view() != a.view());
  CHECK(a.view().at("status") == "active");
  CHECK(a.view().at("boxes").size() == 2);
}

TEST_CASE("zero variance echoes the intended action") {
  sweep::EnvConfig env;
  DemoSession s("z", env, 0.0, 1);
  for (int i = 0; i < 10; ++i) {
    const auto& log = s.step(sweep::Vec2(0.01 * i, -0.005));
    CHECK(log.executed == log.intended);
    CHECK(log.noise == sweep::Vec2::Zero());
  }
  CHECK(audit_labels(s));
}

TEST_CASE("disturbance variance matches the session variance") {
  sweep::EnvConfig env;
  env.action_limit = 100.0;
  env.horizon = 500;
  env.table_half_extent = 10.0;
  const double sigma2 = 0.004;
  DemoSession s("v", env, sigma2, 7);
  for (int i = 0; i < 500; ++i) s.step(sweep::Vec2::Zero());
  REQUIRE(s.log().size() == 500);
  for (int d = 0; d < 2; ++d) {
    double mean = 0.0;
    for (const auto& l : s.log()) mean += (l.executed - l.intended)(d);
    mean /= 500.0;
    double var = 0.0;
    for (const auto& l : s.log()) {
      const double e = (l.executed - l.intended)(d) - mean;
      var += e * e;
    }
    var /= 499.0;
    CHECK(std::abs(var - sigma2) < 0.2 * sigma2);
  }
  CHECK(audit_labels(s));
}

TEST_CASE("labels survive clamping") {
  sweep::EnvConfig env;
  DemoSession s("c", env, 0.05, 3);
  for (int i = 0; i < 30 && s.status() == SessionStatus::active; ++i) s.step(sweep::Vec2(0.09, 0.0));
  int clamped = 0;
  for (const auto& l : s.log()) {
    CHECK(l.intended == sweep::Vec2(0.09, 0.0));
    CHECK(l.executed.norm() <= env.action_limit * (1.0 + 1e-12));
    clamped += l.executed != l.intended + l.noise ? 1 : 0;
  }
  CHECK(clamped > 0);
  CHECK(audit_labels(s));
}

TEST_CASE("stepping a finished episode is a protocol error") {
  sweep::EnvConfig env;
  DemoSession s("e", env, 0.0, 0);
  expert_drive(s, 0);
  CHECK(s.status() == SessionStatus::succeeded);
  CHECK(s.log().size() <= static_cast<std::size_t>(env.horizon));
  CHECK_THROWS_AS(s.step(sweep::Vec2::Zero()), ProtocolError);
  CHECK_THROWS_AS(s.command(sweep::Vec2::Zero()), ProtocolError);
  CHECK_THROWS_AS(s.command(sweep::Vec2(std::nan(""), 0.0)), ProtocolError);
  DemoSession t("h", env, 0.0, 0);
  for (int i = 0; i < env.horizon; ++i) t.step(sweep::Vec2::Zero());
  CHECK(t.status() == SessionStatus::failed);
  CHECK_THROWS_AS(t.step(sweep::Vec2::Zero()), ProtocolError);
}

TEST_CASE("zero-order hold reuses the last command") {
  sweep::EnvConfig env;
  DemoSession s("o", env, 0.0, 0);
  s.command(sweep::Vec2(0.02, 0.01));
  const auto first = s.advance_tick();
  const auto second = s.advance_tick();
  CHECK_FALSE(first.held);
  CHECK(second.held);
  CHECK(second.intended == first.intended);
  CHECK(s.tick() == 2);
}

TEST_CASE("accepted fragments rebuild a dataset the model can fit") {
  sweep::EnvConfig env;
  DemoSession a("a", env, 1e-4, 1), b("b", env, 1e-4, 2);
  expert_drive(a, 0);
  expert_drive(b, 1);
  const auto fa = a.finish(true);
  const auto fb = b.finish(true);
  REQUIRE(fa);
  REQUIRE(fb);
  CHECK(fa->at("metadata").at("success") == true);
  CHECK(fa->at("metadata").at("incomplete") == false);
  const auto data = dataset_from_fragments({*fa, *fb});
  REQUIRE(data.round_count() == 2);
  CHECK(data.round_sizes()[0] == static_cast<int>(a.log().size()));
  CHECK(data.round_sizes()[1] == static_cast<int>(b.log().size()));
  CHECK(data.collection_variances()[0] == 1e-4);
  for (std::size_t i = 0; i < a.log().size(); ++i) {
    CHECK(data.actions().row(static_cast<Eigen::Index>(i)).transpose() == Vector(a.log()[i].intended));
  }
  // Same schema as the PID collection path: loadable and fittable as is.
  const auto reloaded = dataset_from_json(dataset_to_json(data));
  CHECK(reloaded == data);
  IomgpConfig cfg;
  cfg.truncation = 2;
  cfg.max_outer = 3;
  NoiseSchedule noise{1e-4, {1e-4, 1e-4}};
  const IomgpModel m = fit(data, noise, cfg);
  CHECK(m.size() == data.size());
  CHECK(next_injection_variance(m) == m.noise.variances.back());
  CHECK_THROWS_AS(dataset_from_fragments({}), InputError);
}

TEST_CASE("finishing twice, discarding and incomplete episodes") {
  sweep::EnvConfig env;
  DemoSession s("d", env, 0.0, 0);
  s.step(sweep::Vec2(0.01, 0.0));
  CHECK_FALSE(s.finish(false).has_value());
  CHECK(s.status() == SessionStatus::discarded);
  CHECK(s.log().empty());
  CHECK_THROWS_AS(s.finish(true), ProtocolError);

  DemoSession p("p", env, 0.0, 0);
  for (int i = 0; i < 5; ++i) p.step(sweep::Vec2(0.01, 0.0));
  const auto frag = p.finish(true);
  REQUIRE(frag);
  CHECK(p.status() == SessionStatus::failed);
  CHECK(frag->at("metadata").at("incomplete") == true);
  CHECK(frag->at("metadata").at("score") == 0);
  CHECK(frag->at("metadata").at("steps") == 5);
}

TEST_CASE("session manager speaks the message protocol") {
  SessionManager mgr({}, 0.0, 9);
  const auto v = mgr.handle({{"type", "start"}, {"sigma2", 0.0}, {"seed", 5}});
  REQUIRE(v.contains("session"));
  const std::string id = v.at("session");
  CHECK(v.at("tick") == 0);
  const auto st = mgr.handle({{"type", "step"}, {"session", id}, {"intended", {0.02, 0.01}}});
  CHECK(st.at("tick") == 1);
  CHECK(st.at("executed") == st.at("intended"));
  CHECK(st.at("noise") == nlohmann::json::array({0.0, 0.0}));
  CHECK(mgr.handle({{"type", "state"}, {"session", id}}).at("tick") == 1);
  CHECK(mgr.handle({{"type", "step"}, {"session", "nope"}, {"intended", {0, 0}}}).at("error") == "protocol");
  CHECK(mgr.handle({{"type", "step"}, {"session", id}, {"intended", {0}}}).at("error") == "invalid");
  CHECK(mgr.handle({{"type", "start"}, {"config", {{"n_boxes", 7}}}}).at("error") == "invalid");
  CHECK(mgr.handle({{"type", "start"}, {"sigma2", -1.0}}).at("error") == "invalid");
  CHECK(mgr.handle({{"type", "dance"}}).at("error") == "invalid");
  const auto fin = mgr.handle({{"type", "finish"}, {"session", id}, {"accept", true}});
  CHECK(fin.contains("fragment"));
  CHECK(mgr.accepted().size() == 1);
  CHECK(mgr.handle({{"type", "finish"}, {"session", id}, {"accept", true}}).at("error") == "protocol");
  CHECK(mgr.handle({{"type", "step"}, {"session", id}, {"intended", {0, 0}}}).at("error") == "protocol");

  const auto a = mgr.handle({{"type", "start"}, {"seed", 77}});
  const auto b = mgr.handle({{"type", "start"}, {"seed", 77}});
  nlohmann::json va = a, vb = b;
  va.erase("session");
  vb.erase("session");
  CHECK(va == vb);
  CHECK(mgr.session_count() == 3);
}

TEST_CASE("sessions are isolated under concurrent messages") {
  SessionManager mgr({}, 1e-3, 1);
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(mgr.handle({{"type", "start"}}).at("session"));
  std::vector<std::thread> th;
  for (const auto& id : ids) {
    th.emplace_back([&mgr, id] {
      for (int k = 0; k < 50; ++k) mgr.handle({{"type", "step"}, {"session", id}, {"intended", {0.0, 0.0}}});
    });
  }
  for (int k = 0; k < 20; ++k) mgr.tick_all();
  for (auto& t : th) t.join();
  for (const auto& id : ids) CHECK(mgr.handle({{"type", "state"}, {"session", id}}).at("tick") == 70);
}

TEST_CASE("HTTP endpoint in lockstep mode") {
  const fs::path frag_dir = fs::temp_directory_path() / "bdi_test_fragments";
  fs::remove_all(frag_dir);
  SessionManager mgr({}, 0.0, 2);
  ServerOptions opt;
  opt.port = 0;
  opt.realtime = false;
  opt.fragment_dir = frag_dir.string();
  DemoServer server(mgr, opt);
  const int port = server.bind();
  REQUIRE(port > 0);
  std::thread serve([&] { server.serve_bound(); });

  httplib::Client cli("127.0.0.1", port);
  auto post = [&](const nlohmann::json& msg) {
    auto res = cli.Post("/api", msg.dump(), "application/json");
    REQUIRE(res);
    return std::make_pair(res->status, nlohmann::json::parse(res->body));
  };
  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto [code, view] = post({{"type", "start"}, {"seed", 3}});
  CHECK(code == 200);
  const std::string id = view.at("session");
  auto [c2, v2] = post({{"type", "step"}, {"session", id}, {"intended", {0.03, 0.0}}});
  CHECK(c2 == 200);
  CHECK(v2.at("tick") == 1);
  auto [c3, v3] = post({{"type", "finish"}, {"session", id}, {"accept", false}});
  CHECK(c3 == 200);
  CHECK(v3.at("status") == "discarded");
  CHECK_FALSE(fs::exists(frag_dir / ("fragment_" + id + ".json")));

  auto [c4, v4] = post({{"type", "start"}, {"seed", 4}});
  const std::string id2 = v4.at("session");
  post({{"type", "step"}, {"session", id2}, {"intended", {0.03, 0.0}}});
  auto [c5, v5] = post({{"type", "finish"}, {"session", id2}, {"accept", true}});
  CHECK(c5 == 200);
  REQUIRE(fs::exists(frag_dir / ("fragment_" + id2 + ".json")));
  const auto data = dataset_from_json(read_json_file((frag_dir / ("fragment_" + id2 + ".json")).string()));
  CHECK(data.size() == 1);

  auto [c6, v6] = post({{"type", "step"}, {"session", id2}, {"intended", {0.0, 0.0}}});
  CHECK(c6 == 400);
  CHECK(v6.at("error") == "protocol");
  auto bad = cli.Post("/api", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  server.stop();
  serve.join();
  fs::remove_all(frag_dir);
}

TEST_CASE("HTTP endpoint in realtime mode ticks on its own") {
  SessionManager mgr({}, 0.0, 2);
  ServerOptions opt;
  opt.port = 0;
  opt.realtime = true;
  opt.tick_hz = 100.0;
  DemoServer server(mgr, opt);
  const int port = server.bind();
  REQUIRE(port > 0);
  std::thread serve([&] { server.serve_bound(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Post("/api", nlohmann::json{{"type", "start"}}.dump(), "application/json");
  REQUIRE(res);
  const std::string id = nlohmann::json::parse(res->body).at("session");
  auto st = cli.Post("/api", nlohmann::json{{"type", "step"}, {"session", id}, {"intended", {0.01, 0.0}}}.dump(),
                     "application/json");
  REQUIRE(st);
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  auto view = cli.Post("/api", nlohmann::json{{"type", "state"}, {"session", id}}.dump(), "application/json");
  REQUIRE(view);
  const auto v = nlohmann::json::parse(view->body);
  CHECK(v.at("tick").get<int>() > 2);
  CHECK(v.at("intended") == nlohmann::json::array({0.01, 0.0}));
  server.stop();
  serve.join();
}
