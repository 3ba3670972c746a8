// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "avatar/diffusion.hpp"
#include "avatar/error.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/rng.hpp"

using namespace avatar;

namespace {

class ZeroScore final : public ScoreFunction {
 public:
  explicit ZeroScore(std::size_t d) : d_(d) {}
  std::size_t dimension() const override { return d_; }
  void evaluate_sample(std::span<const double>, int, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }

 private:
  std::size_t d_;
};

class NanScore final : public ScoreFunction {
 public:
  std::size_t dimension() const override { return 1; }
  void evaluate_sample(std::span<const double>, int, std::span<double> out) const override { out[0] = std::nan(""); }
};

Tensor random_batch(std::uint64_t rows, std::uint64_t cols, std::uint64_t seed) {
  Tensor t({rows, cols});
  RngStream rng(seed, 0);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

struct Stats {
  double mean = 0, var = 0;
};

Stats column_stats(const std::vector<double>& v) {
  Stats s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  for (double x : v) s.var += (x - s.mean) * (x - s.mean);
  s.var /= (v.size() - 1);
  return s;
}

}  // namespace

TEST_SUITE("diffusion") {
  const auto lin = std::make_shared<const DiffusionSchedule>(DiffusionSchedule::default_linear());

  TEST_CASE("forward at t = 0 is the identity") {
    const auto x0 = random_batch(5, 3, 1);
    RngStream rng(1, 0);
    const auto r = forward_diffuse(x0, *lin, 0, rng);
    CHECK(bitwise_equal(r.x_t, x0));
  }

  TEST_CASE("forward of the zero vector is scaled noise, bit-exactly reproducible") {
    const Tensor zero({1, 6});
    RngStream a(11, 4), b(11, 4);
    const auto r1 = forward_diffuse(zero, *lin, 100, a);
    const auto r2 = forward_diffuse(zero, *lin, 100, b);
    CHECK(bitwise_equal(r1.x_t, r2.x_t));
    RngStream c(11, 4);
    const double sd = std::sqrt(1.0 - lin->alpha_bar(100));
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(r1.x_t[j] == doctest::Approx(sd * c.normal()).epsilon(1e-6));
    }
  }

  TEST_CASE("forward moments from e1 match the closed form") {
    const int n = 100000;
    const std::size_t d = 8;
    std::vector<std::vector<double>> cols(d, std::vector<double>(n));
    std::vector<double> x(d);
    for (int i = 0; i < n; ++i) {
      std::fill(x.begin(), x.end(), 0.0);
      x[0] = 1.0;
      RngStream rng(77, static_cast<std::uint64_t>(i));
      forward_diffuse_sample(x, *lin, 100, rng);
      for (std::size_t j = 0; j < d; ++j) cols[j][i] = x[j];
    }
    const double a = lin->alpha_bar(100);
    const auto s0 = column_stats(cols[0]);
    CHECK(s0.mean == doctest::Approx(std::sqrt(a)).epsilon(0.01));
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(column_stats(cols[j]).var == doctest::Approx(1.0 - a).epsilon(0.01));
    }
  }

  TEST_CASE("zero score without last-step noise scales by 1/sqrt(1 - beta_1)") {
    const ZeroScore score(3);
    const auto x = random_batch(4, 3, 2);
    RngStream rng(0, 0);
    const auto y = reverse_step(x, 1, *lin, score, rng, false);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 - lin->beta(1))).epsilon(1e-6));
    }
  }

  TEST_CASE("reverse step with the N(0,1) oracle preserves unit variance") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single({0.0}, 1.0), lin);
    const int n = 100000;
    for (int t : {2, 100, 700}) {
      std::vector<double> out(n);
      std::vector<double> x(1), scratch(1);
      for (int i = 0; i < n; ++i) {
        RngStream rng(5, static_cast<std::uint64_t>(i));
        x[0] = rng.normal();
        reverse_step_sample(x, t, *lin, score, rng, true, scratch);
        out[i] = x[0];
      }
      const auto s = column_stats(out);
      CHECK(std::abs(s.mean) < 4.0 / std::sqrt(n));
      CHECK(s.var == doctest::Approx(1.0).epsilon(0.02));
    }
  }

  TEST_CASE("reverse steps are deterministic for a fixed seed") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single({0.5, 0.5}, 0.01), lin);
    const auto x = random_batch(3, 2, 3);
    RngStream a(9, 1), b(9, 1);
    CHECK(bitwise_equal(reverse_step(x, 50, *lin, score, a, true), reverse_step(x, 50, *lin, score, b, true)));
  }

  TEST_CASE("non-finite scores are reported") {
    const NanScore score;
    const Tensor x({1, 1});
    RngStream rng(0, 0);
    CHECK_THROWS_AS(reverse_step(x, 5, *lin, score, rng, true), NumericalError);
  }

  TEST_CASE("denoising a narrow Gaussian returns to its mean") {
    const auto spec = GaussianMixtureSpec::single({2.0}, 0.01);
    const GaussianMixtureScore score(spec, lin);
    const int n = 10000;
    std::vector<double> out(n);
    std::vector<double> x(1), scratch(1);
    for (int i = 0; i < n; ++i) {
      RngStream rng(21, static_cast<std::uint64_t>(i));
      sample_mixture(spec, rng, x);
      forward_diffuse_sample(x, *lin, 100, rng);
      denoise_sample(x, 100, *lin, score, rng, true, scratch);
      out[i] = x[0];
    }
    const auto s = column_stats(out);
    CHECK(std::abs(s.mean - 2.0) <= 3.0 * std::sqrt(s.var / n));
    CHECK(s.var == doctest::Approx(0.01).epsilon(0.05));
  }

  TEST_CASE("denoise from t = 0 is the identity") {
    const ZeroScore score(2);
    const auto x = random_batch(3, 2, 4);
    RngStream rng(0, 0);
    CHECK(bitwise_equal(denoise_from(x, 0, *lin, score, rng, true), x));
  }

  TEST_CASE("sanitising at t* = 0 returns the clamped batch") {
    const ZeroScore score(4);
    auto x = random_batch(6, 4, 5);
    x[0] = 1.5f;
    x[1] = -0.25f;
    const auto y = sanitize_batch(x, 0, *lin, score, 1);
    CHECK(y[0] == 1.0f);
    CHECK(y[1] == 0.0f);
    for (std::size_t i = 2; i < x.size(); ++i) CHECK(y[i] == x[i]);
    SanitizeOptions raw;
    raw.clamp.reset();
    CHECK(bitwise_equal(sanitize_batch(x, 0, *lin, score, 1, raw), x));
  }

  TEST_CASE("sanitised output does not depend on the thread count") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single(std::vector<double>(16, 0.5), 0.01), lin);
    const auto x = random_batch(97, 16, 6);
    SanitizeOptions one, many;
    many.threads = 7;
    const auto a = sanitize_batch(x, 60, *lin, score, 123, one);
    const auto b = sanitize_batch(x, 60, *lin, score, 123, many);
    CHECK(bitwise_equal(a, b));
    CHECK(!bitwise_equal(a, sanitize_batch(x, 60, *lin, score, 124, one)));
  }

  TEST_CASE("permuting rows with their stream ids permutes the output") {
    const GaussianMixtureScore score(GaussianMixtureSpec::single(std::vector<double>(5, 0.5), 0.02), lin);
    const auto x = random_batch(20, 5, 7);
    const auto base = sanitize_batch(x, 40, *lin, score, 99);

    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    RngStream rng(1, 1);
    shuffle_indices(std::span(perm), rng);
    Tensor xp(x.dims());
    std::vector<std::uint64_t> ids(20);
    for (std::size_t i = 0; i < 20; ++i) {
      std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), xp.row(i).begin());
      ids[i] = perm[i];
    }
    const auto yp = sanitize_batch(xp, 40, *lin, score, 99, {}, ids);
    for (std::size_t i = 0; i < 20; ++i) {
      for (std::size_t j = 0; j < 5; ++j) CHECK(yp.row(i)[j] == base.row(perm[i])[j]);
    }
  }

  TEST_CASE("dimension mismatches are rejected") {
    const ZeroScore score(3);
    const Tensor x({2, 4});
    CHECK_THROWS_AS(score.evaluate(x, 1), ShapeMismatch);
    CHECK_THROWS_AS(sanitize_batch(x, 5, *lin, score, 0), ShapeMismatch);
  }

  TEST_CASE("parallel_for propagates worker exceptions") {
    CHECK_THROWS_AS(parallel_for(100, 4, [](std::size_t i) {
                      if (i == 57) throw NumericalError("boom");
                    }),
                    NumericalError);
  }
}
