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

#include "bdi/demo_server.hpp"

#include <chrono>
#include <filesystem>
#include <mutex>

#include "httplib.h"

namespace bdi::demo {

struct DemoServer::Impl {
  SessionManager& sessions;
  ServerOptions options;
  httplib::Server http;
  std::thread ticker;
  std::mutex ticker_mu;
  std::atomic<bool> running{false};

  Impl(SessionManager& s, ServerOptions o) : sessions(s), options(std::move(o)) {}

  void start_ticker() {
    if (!options.realtime || options.tick_hz <= 0.0) return;
    std::lock_guard<std::mutex> lock(ticker_mu);
    if (ticker.joinable()) return;
    running = true;
    ticker = std::thread([this] {
      const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / options.tick_hz));
      auto next = std::chrono::steady_clock::now() + period;
      while (running) {
        std::this_thread::sleep_until(next);
        next += period;
        sessions.tick_all();
      }
    });
  }

  void stop_ticker() {
    std::lock_guard<std::mutex> lock(ticker_mu);
    running = false;
    if (ticker.joinable()) ticker.join();
  }
};

DemoServer::DemoServer(SessionManager& sessions, ServerOptions options)
    : impl_(std::make_unique<Impl>(sessions, std::move(options))) {
  Impl* impl = impl_.get();
  impl->http.Post("/api", [impl](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json reply;
    try {
      nlohmann::json msg = nlohmann::json::parse(req.body);
      if (impl->options.realtime && msg.value("type", "") == "step" && !msg.contains("advance")) {
        msg["advance"] = false;
      }
      reply = impl->sessions.handle(msg);
      if (reply.contains("fragment") && !impl->options.fragment_dir.empty()) {
        std::filesystem::create_directories(impl->options.fragment_dir);
        const auto path = std::filesystem::path(impl->options.fragment_dir) /
                          ("fragment_" + reply.at("session").get<std::string>() + ".json");
        write_json_file(path.string(), reply.at("fragment"));
        reply["fragment_path"] = path.string();
      }
    } catch (const std::exception& e) {
      reply = {{"error", "invalid"}, {"reason", e.what()}};
    }
    res.status = reply.contains("error") ? 400 : 200;
    res.set_content(reply.dump(), "application/json");
  });
  impl->http.Get("/health", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"ok", true}, {"tick_hz", impl->options.tick_hz}}.dump(),
                    "application/json");
  });
  if (!impl->options.static_dir.empty()) impl->http.set_mount_point("/", impl->options.static_dir);
}

DemoServer::~DemoServer() { stop(); }

bool DemoServer::run() {
  if (bind() < 0) return false;
  serve_bound();
  return true;
}

int DemoServer::bind() {
  if (impl_->options.port == 0) return impl_->http.bind_to_any_port(impl_->options.host);
  return impl_->http.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
}

void DemoServer::serve_bound() {
  impl_->start_ticker();
  impl_->http.listen_after_bind();
  impl_->stop_ticker();
}

void DemoServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  impl_->stop_ticker();
}

}  // namespace bdi::demo
