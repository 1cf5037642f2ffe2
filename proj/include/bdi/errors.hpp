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

#include <stdexcept>
#include <string>

namespace bdi {

// Bad arguments: dimension mismatches, non-positive variances, empty data.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Factorization failures and non-finite intermediate values.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, double last_jitter = 0.0)
      : std::runtime_error(what), last_jitter_(last_jitter) {}
  double last_jitter() const { return last_jitter_; }

 private:
  double last_jitter_;
};

// The supervisor could not finish a demonstration within the redraw budget.
class CollectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Demo-bridge request that is invalid for the session's current status.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bdi
