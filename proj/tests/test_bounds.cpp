// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "avatar/bounds.hpp"
#include "avatar/error.hpp"
#include "avatar/gaussian_oracle.hpp"

using namespace avatar;

namespace {

// prod_{s=2}^{t} lambda_s^2 telescopes to (abar_t / abar_1) (beta_1 / (1 - abar_t))^2.
double telescoped_product(const DiffusionSchedule& s, int t) {
  const double r = s.beta(1) / (1.0 - s.alpha_bar(t));
  return s.alpha_bar(t) / s.alpha_bar(1) * r * r;
}

std::vector<double> spread(double norm, std::size_t d) {
  return std::vector<double>(d, norm / std::sqrt(static_cast<double>(d)));
}

}  // namespace

TEST_SUITE("bounds") {
  const auto lin = DiffusionSchedule::default_linear();
  const auto cos = DiffusionSchedule::default_cosine();
  const auto toy = DiffusionSchedule::custom({0.1, 0.2});

  TEST_CASE("lambda_t hand values and conventions") {
    CHECK(*lambda_t(toy, 2, LambdaConvention::kSkipFirst) == doctest::Approx(std::sqrt(0.8) * 0.1 / 0.28));
    CHECK(*lambda_t(toy, 2, LambdaConvention::kSkipFirst) == doctest::Approx(0.31944).epsilon(1e-4));
    CHECK(*lambda_t(toy, 1, LambdaConvention::kAlphaZeroOne) == 0.0);
    CHECK(!lambda_t(toy, 1, LambdaConvention::kSkipFirst).has_value());
    CHECK_THROWS_AS(lambda_t(toy, 3, LambdaConvention::kSkipFirst), OutOfRange);
    CHECK(*lambda_t(lin, 2, LambdaConvention::kSkipFirst) == doctest::Approx(0.4547).epsilon(1e-3));
  }

  TEST_CASE("every linear lambda_t lies in (0, 1)") {
    for (int t = 2; t <= lin.steps(); ++t) {
      const double l = *lambda_t(lin, t, LambdaConvention::kSkipFirst);
      CHECK(l > 0.0);
      CHECK(l < 1.0);
    }
  }

  TEST_CASE("noise trace constant") {
    CHECK(noise_trace_constant(toy, 2, 3) == doctest::Approx(0.6));
    CHECK(noise_trace_constant(lin, 100, 4) == doctest::Approx(0.008288).epsilon(1e-3));
    CHECK(noise_trace_constant(lin, 100, 8) == doctest::Approx(2.0 * noise_trace_constant(lin, 100, 4)));
  }

  TEST_CASE("product bound at linear t* = 100 matches the telescoped form") {
    const auto p = lambda_product_bound(lin, 100, LambdaConvention::kSkipFirst);
    CHECK(p.product == doctest::Approx(telescoped_product(lin, 100)).epsilon(1e-10));
    CHECK(p.product == doctest::Approx(8.5e-7).epsilon(0.01));
    CHECK(p.exp_bound == doctest::Approx(std::exp(-100 * lin.beta(100) / 2)));
    CHECK(p.exp_bound == doctest::Approx(0.9016).epsilon(1e-4));
    CHECK(p.holds);
  }

  TEST_CASE("telescoping identity across t") {
    for (const auto* s : {&lin, &cos}) {
      for (int t = 2; t <= 1000; t += 37) {
        CHECK(lambda_product_bound(*s, t, LambdaConvention::kSkipFirst).product ==
              doctest::Approx(telescoped_product(*s, t)).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("alpha0-one products vanish") {
    for (int t : {1, 10, 500}) {
      const auto p = lambda_product_bound(lin, t, LambdaConvention::kAlphaZeroOne);
      CHECK(p.product == 0.0);
      CHECK(p.holds);
    }
  }

  TEST_CASE("cosine product bound holds on the documented grid") {
    for (int t = 50; t <= 900; t += 50) CHECK(lambda_product_bound(cos, t, LambdaConvention::kSkipFirst).holds);
  }

  TEST_CASE("cumulative bound") {
    const double b = lin.beta(100);
    const double expected = (0.25 + 8.0) * std::exp(-100 * b / 2) + 8.0 * 100 * b;
    CHECK(cumulative_error_bound(lin, 100, 0.25, 4) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(cumulative_error_bound(lin, 100, 0.25, 4) == doctest::Approx(9.10).epsilon(1e-3));
    // t* beta -> 0 leaves the 2d term.
    const auto flat = DiffusionSchedule::custom(std::vector<double>(3, 1e-15));
    CHECK(cumulative_error_bound(flat, 1, 0.0, 5) == doctest::Approx(10.0));
    double prev = -1.0;
    for (double dn : {0.0, 0.1, 1.0, 10.0}) {
      const double v = cumulative_error_bound(lin, 100, dn, 4);
      CHECK(v > prev);
      prev = v;
    }
  }

  TEST_CASE("t* window arithmetic") {
    const auto a = tstar_window(0.0, 16, 8.0, 8.0, lin);
    CHECK(a.lower == 0.0);
    CHECK(a.upper == doctest::Approx(1.0));
    CHECK(a.feasible);
    CHECK(!a.admissible_ts.empty());
    for (int t : a.admissible_ts) CHECK(t * lin.beta(t) <= 1.0);

    const auto b = tstar_window(32.0, 16, 8.0, 8.0, lin);
    CHECK(b.lower == doctest::Approx(2.0 * std::log(2.0)));
    CHECK(!b.feasible);

    const auto c = tstar_window(2.0, 4, 2.0, 1.0, lin);
    CHECK(c.lower == doctest::Approx(2.0 * std::log(10.0)));
    CHECK(c.upper == doctest::Approx(0.125));
    CHECK(!c.feasible);

    CHECK_THROWS_AS(tstar_window(0.0, 4, 0.0, 1.0, lin), InvalidArgument);
  }

  TEST_CASE("admissible timesteps are contiguous and shrink as delta grows") {
    std::size_t prev = 100000;
    for (double dn : {0.0, 1.0, 4.0, 8.0}) {
      const auto w = tstar_window(dn, 16, 8.0, 8.0, lin);
      for (std::size_t i = 1; i < w.admissible_ts.size(); ++i) CHECK(w.admissible_ts[i] == w.admissible_ts[i - 1] + 1);
      CHECK(w.admissible_ts.size() <= prev);
      prev = w.admissible_ts.size();
    }
  }

  TEST_CASE("verifier preconditions") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 999;
    CHECK_THROWS_AS(verify_contraction_mc(spec, lin, 100, spread(0.5, 4), o), InvalidArgument);
    o.trajectories = 1000;
    CHECK_THROWS_AS(verify_contraction_mc(spec, lin, 100, spread(0.5, 3), o), ShapeMismatch);
    // sigma^2 = 1e-4 is only certified once 1 - abar_t >= 0.1.
    CHECK_THROWS_AS(verify_contraction_mc(spec, lin, 50, spread(0.5, 4), o), InvalidArgument);
  }

  TEST_CASE("shared noise with delta = 0 gives identical trajectories") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 1000;
    o.coupling = NoiseCoupling::kShared;
    const auto r = verify_contraction_mc(spec, lin, 100, std::vector<double>(4, 0.0), o);
    CHECK(r.red_term.mean == 0.0);
    for (const auto& s : r.steps) CHECK(s.after.mean == 0.0);
    CHECK(r.final_distance.mean == 0.0);
    CHECK(r.holds);
  }

  TEST_CASE("contraction holds for the near-delta oracle and is seed-stable") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 10000;
    o.threads = 4;
    o.seed = 1;
    const auto a = verify_contraction_mc(spec, lin, 100, spread(0.5, 4), o);
    o.seed = 2;
    const auto b = verify_contraction_mc(spec, lin, 100, spread(0.5, 4), o);
    CHECK(a.holds);
    CHECK(b.holds);
    CHECK(a.delta_norm_sq == doctest::Approx(0.25));
    CHECK(std::abs(a.final_distance.mean - b.final_distance.mean) / a.final_distance.mean < 0.05);
    CHECK(std::abs(a.red_term.mean - a.red_term_expected) <= 3.0 * a.red_term.std_error);
    CHECK(a.final_distance.mean <= a.cumulative_bound);
  }

  TEST_CASE("verification does not depend on the thread count") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 1500;
    const auto a = verify_contraction_mc(spec, lin, 100, spread(0.5, 4), o);
    o.threads = 5;
    const auto b = verify_contraction_mc(spec, lin, 100, spread(0.5, 4), o);
    CHECK(a.final_distance.mean == b.final_distance.mean);
    CHECK(a.red_term.std_error == b.red_term.std_error);
  }

  TEST_CASE("theorem check with delta = 0 holds whenever the window is feasible") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 2000;
    o.threads = 4;
    const double delta_hat = measure_reconstruction_error(spec, lin, 100, o).mean;
    const auto r = theorem_check_mc(spec, lin, std::vector<double>(4, 0.0), 20.0 / delta_hat, o);
    CHECK(r.theorem_checked);
    REQUIRE(r.feasible);
    CHECK(r.holds);
    CHECK(r.sanitized_error.mean <= r.theorem_bound);
  }

  TEST_CASE("infeasible windows make no claim") {
    const auto spec = GaussianMixtureSpec::single(std::vector<double>(4, 0.0), 1e-4);
    MonteCarloOptions o;
    o.trajectories = 1000;
    const auto r = theorem_check_mc(spec, lin, spread(100.0, 4), 2.0, o);
    CHECK(!r.feasible);
    CHECK(!r.holds);
    CHECK(!r.notes.empty());
  }
}
