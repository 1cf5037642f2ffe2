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

namespace bdi {

/// Digamma for x > 0: upward recurrence to x >= 10, then the asymptotic
/// series. Absolute error below 1e-12 for x >= 1e-3.
double digamma(double x);

double log_beta(double a, double b);

/// KL(Beta(a, b) || Beta(a0, b0)).
double kl_beta(double a, double b, double a0, double b0);

/// log(sum(exp(values))) without overflow.
template <typename Vec>
double log_sum_exp(const Vec& values);

}  // namespace bdi

#include <cmath>
#include <limits>

namespace bdi {

template <typename Vec>
double log_sum_exp(const Vec& values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (auto v : values) peak = v > peak ? v : peak;
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (auto v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

}  // namespace bdi
