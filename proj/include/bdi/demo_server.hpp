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

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "bdi/demo_session.hpp"

namespace bdi::demo {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8765;
  double tick_hz = 20.0;
  // With realtime ticking the server advances sessions itself and step
  // requests only update the held command.
  bool realtime = true;
  // Accepted fragments are written here as fragment_<session>.json.
  std::string fragment_dir;
  // Optional directory of static files served under /.
  std::string static_dir;
};

/// JSON-over-HTTP endpoint: POST /api with one protocol message per request.
class DemoServer {
 public:
  DemoServer(SessionManager& sessions, ServerOptions options);
  ~DemoServer();
  DemoServer(const DemoServer&) = delete;
  DemoServer& operator=(const DemoServer&) = delete;

  /// Binds and serves until stop(). Returns false if the port cannot be bound.
  bool run();
  /// Binds to an ephemeral port when options.port is 0; returns the port.
  int bind();
  void serve_bound();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bdi::demo
