// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "avatar/bounds.hpp"
#include "avatar/error.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/rng.hpp"

using namespace avatar;

namespace {

// log density of the noisy mixture at step t, written out directly.
double log_density(const GaussianMixtureSpec& spec, const DiffusionSchedule& s, int t, std::span<const double> x) {
  const double a = s.alpha_bar(t);
  double total = 0.0;
  for (const auto& c : spec.components) {
    const double var = a * c.variance + 1.0 - a;
    double q = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double r = x[j] - std::sqrt(a) * c.mean[j];
      q += r * r;
    }
    total += c.weight * std::exp(-0.5 * q / var) / std::pow(2.0 * M_PI * var, 0.5 * x.size());
  }
  return std::log(total);
}

}  // namespace

TEST_SUITE("oracle") {
  const auto lin = std::make_shared<const DiffusionSchedule>(DiffusionSchedule::default_linear());

  TEST_CASE("marginal parameters") {
    const auto unit = oracle_marginal_params(GaussianMixtureSpec::single({0.0}, 1.0), *lin, 300);
    CHECK(unit[0].mean[0] == 0.0);
    CHECK(unit[0].variance == doctest::Approx(1.0).epsilon(1e-14));

    const auto point = oracle_marginal_params(GaussianMixtureSpec::single({2.0}, 0.0), *lin, 100);
    CHECK(point[0].mean[0] == doctest::Approx(2.0 * std::sqrt(lin->alpha_bar(100))));
    CHECK(point[0].mean[0] == doctest::Approx(1.894).epsilon(1e-3));
    CHECK(point[0].variance == doctest::Approx(0.103).epsilon(1e-3));

    const auto start = oracle_marginal_params(GaussianMixtureSpec::single({2.0}, 0.3), *lin, 0);
    CHECK(start[0].mean[0] == 2.0);
    CHECK(start[0].variance == doctest::Approx(0.3));
  }

  TEST_CASE("unit Gaussian score is -x at every t") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single({0.0, 0.0}, 1.0), lin);
    std::vector<double> out(2);
    for (int t : {1, 10, 500, 1000}) {
      const std::vector<double> x{0.7, -1.3};
      score.evaluate_sample(x, t, out);
      CHECK(out[0] == doctest::Approx(-0.7).epsilon(1e-12));
      CHECK(out[1] == doctest::Approx(1.3).epsilon(1e-12));
    }
  }

  TEST_CASE("point mass score") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single({2.0}, 0.0), lin);
    const double a = lin->alpha_bar(100);
    std::vector<double> out(1);
    const std::vector<double> x{0.4};
    score.evaluate_sample(x, 100, out);
    CHECK(out[0] == doctest::Approx(-(0.4 - std::sqrt(a) * 2.0) / (1.0 - a)).epsilon(1e-12));
  }

  TEST_CASE("symmetric mixture has zero score at the symmetry point") {
    GaussianMixtureSpec spec;
    spec.dimension = 1;
    spec.components = {{0.5, {1.0}, 0.1}, {0.5, {-1.0}, 0.1}};
    const GaussianMixtureScore score(spec, lin);
    std::vector<double> out(1);
    for (int t : {1, 50, 400}) {
      score.evaluate_sample(std::vector<double>{0.0}, t, out);
      CHECK(std::abs(out[0]) < 1e-14);
    }
  }

  TEST_CASE("mixture score is the gradient of the log density") {
    GaussianMixtureSpec spec;
    spec.dimension = 3;
    spec.components = {{0.2, {0.1, 0.9, 0.5}, 0.02}, {0.5, {0.8, 0.2, 0.4}, 0.05}, {0.3, {0.5, 0.5, 0.9}, 0.01}};
    const GaussianMixtureScore score(spec, lin);
    RngStream rng(3, 0);
    for (int t : {5, 60, 250}) {
      std::vector<double> x(3), out(3);
      for (auto& v : x) v = rng.uniform();
      score.evaluate_sample(x, t, out);
      for (std::size_t j = 0; j < 3; ++j) {
        const double h = 1e-5;
        auto xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const double fd = (log_density(spec, *lin, t, xp) - log_density(spec, *lin, t, xm)) / (2 * h);
        CHECK(out[j] == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("far-tail inputs stay finite") {
    GaussianMixtureSpec spec;
    spec.dimension = 2;
    spec.components = {{0.5, {0.0, 0.0}, 1e-6}, {0.5, {1.0, 1.0}, 1e-6}};
    const GaussianMixtureScore score(spec, lin);
    std::vector<double> out(2);
    score.evaluate_sample(std::vector<double>{1e4, -1e4}, 1, out);
    CHECK(std::isfinite(out[0]));
    CHECK(std::isfinite(out[1]));
  }

  TEST_CASE("contraction factor identities") {
    for (int t : {2, 10, 100, 999}) {
      CHECK(exact_contraction_factor(1.0, *lin, t) == doctest::Approx(std::sqrt(1.0 - lin->beta(t))).epsilon(1e-14));
      const double lam = *lambda_t(*lin, t, LambdaConvention::kSkipFirst);
      CHECK(exact_contraction_factor(0.0, *lin, t) == doctest::Approx(lam).epsilon(1e-12));
      CHECK(exact_contraction_factor(INFINITY, *lin, t) == doctest::Approx(1.0 / std::sqrt(1.0 - lin->beta(t))));
      CHECK(exact_contraction_factor(1e12, *lin, t) > 1.0);
    }
  }

  TEST_CASE("mixture validation") {
    GaussianMixtureSpec bad;
    bad.dimension = 2;
    bad.components = {{0.7, {0.0, 0.0}, 1.0}};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad.components = {{1.0, {0.0}, 1.0}};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad.components = {{1.0, {0.0, 0.0}, -1.0}};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  }

  TEST_CASE("mixture sampling reproduces component moments") {
    GaussianMixtureSpec spec;
    spec.dimension = 1;
    spec.components = {{0.25, {-1.0}, 0.04}, {0.75, {1.0}, 0.04}};
    RngStream rng(8, 0);
    const int n = 100000;
    double sum = 0.0;
    std::vector<double> x(1);
    for (int i = 0; i < n; ++i) {
      sample_mixture(spec, rng, x);
      sum += x[0];
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
  }
}
