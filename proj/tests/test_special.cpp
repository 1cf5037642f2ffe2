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

#include <cmath>
#include <random>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bdi/special_functions.hpp"
#include "doctest.h"

using namespace bdi;

TEST_CASE("digamma against an independent implementation") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> logu(std::log(1e-3), std::log(1e4));
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(logu(rng));
    CHECK(std::abs(digamma(x) - boost::math::digamma(x)) < 1e-12 * std::max(1.0, std::abs(digamma(x))));
  }
  CHECK(digamma(1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-15));
}

TEST_CASE("log_beta and kl_beta") {
  for (double a : {0.3, 1.0, 2.5, 40.0}) {
    for (double b : {0.7, 1.0, 3.0, 100.0}) {
      CHECK(log_beta(a, b) == doctest::Approx(std::log(boost::math::beta(a, b))).epsilon(1e-12));
    }
  }
  CHECK(std::abs(kl_beta(2.0, 3.0, 2.0, 3.0)) < 1e-14);

  // KL by quadrature of the log density ratio.
  auto log_pdf = [](double x, double a, double b) {
    return (a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - std::log(boost::math::beta(a, b));
  };
  const std::vector<std::array<double, 4>> cases = {{3.0, 2.0, 1.0, 1.0}, {5.0, 4.0, 1.0, 2.0}, {2.5, 7.0, 1.0, 0.5}};
  for (const auto& c : cases) {
    auto f = [&](double x) {
      return std::exp(log_pdf(x, c[0], c[1])) * (log_pdf(x, c[0], c[1]) - log_pdf(x, c[2], c[3]));
    };
    const double ref = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-13);
    CHECK(kl_beta(c[0], c[1], c[2], c[3]) == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("log_sum_exp is overflow safe") {
  std::vector<double> v{1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
  std::vector<double> w{-1e308, 0.0};
  CHECK(log_sum_exp(w) == doctest::Approx(0.0));
}
