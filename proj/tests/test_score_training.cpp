// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <vector>

#include "avatar/error.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/io.hpp"
#include "avatar/rng.hpp"
#include "avatar/score_training.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

Tensor draws(const GaussianMixtureSpec& spec, std::size_t n, std::uint64_t seed) {
  Tensor t({n, spec.dimension});
  RngStream rng(seed, 0);
  std::vector<double> x(spec.dimension);
  for (std::size_t i = 0; i < n; ++i) {
    sample_mixture(spec, rng, x);
    for (std::size_t j = 0; j < spec.dimension; ++j) t.row(i)[j] = static_cast<float>(x[j]);
  }
  return t;
}

double score_at(const ScoreFunction& s, double x, int t) {
  std::vector<double> in{x}, out(1);
  s.evaluate_sample(in, t, out);
  return out[0];
}

}  // namespace

TEST_SUITE("score_training") {
  const auto lin = std::make_shared<const DiffusionSchedule>(DiffusionSchedule::default_linear());

  TEST_CASE("eps_to_score conversions") {
    const Tensor zero({2, 3});
    const auto s0 = eps_to_score(zero, *lin, 10);
    for (float v : s0.values()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(eps_to_score(zero, *lin, 0), InvalidArgument);

    // Point mass at 0: the optimal eps-hat is x_t / sqrt(1 - abar), which must map to the oracle score.
    const GaussianMixtureScore oracle(GaussianMixtureSpec::single({0.0}, 0.0), lin);
    const int t = 100;
    const double x = 0.37;
    std::vector<double> eps{x / std::sqrt(1.0 - lin->alpha_bar(t))}, out(1);
    eps_to_score(eps, *lin, t, out);
    CHECK(out[0] == doctest::Approx(score_at(oracle, x, t)).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(-x / (1.0 - lin->alpha_bar(t))).epsilon(1e-12));

    std::vector<double> twice{2.0 * eps[0]}, out2(1);
    eps_to_score(twice, *lin, t, out2);
    CHECK(out2[0] == doctest::Approx(2.0 * out[0]));
  }

  TEST_CASE("timestep embedding is bounded and distinguishes steps") {
    std::vector<float> a(32), b(32);
    timestep_embedding(10, 32, a);
    timestep_embedding(11, 32, b);
    CHECK(a != b);
    for (float v : a) CHECK(std::abs(v) <= 1.0f);
  }

  TEST_CASE("zero training steps reproduce the initialisation") {
    const auto data = draws(GaussianMixtureSpec::single({0.0}, 1.0), 100, 1);
    ScoreTrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 17;
    const auto a = train_score_model(data, *lin, {}, cfg);
    const auto b = train_score_model(data, *lin, {}, cfg);
    const auto pa = a.model->network().parameters();
    const auto pb = b.model->network().parameters();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
    CHECK(a.losses.empty());
  }

  TEST_CASE("learned score of a unit Gaussian approaches -x") {
    const auto data = draws(GaussianMixtureSpec::single({0.0}, 1.0), 10000, 2);
    EpsModelConfig arch;
    arch.hidden = {64, 64};
    ScoreTrainConfig cfg;
    cfg.steps = 5000;
    cfg.seed = 3;
    const auto r = train_score_model(data, *lin, arch, cfg);
    double err = 0.0;
    int count = 0;
    for (double x = -2.0; x <= 2.0 + 1e-9; x += 0.1) {
      err += std::abs(score_at(*r.score, x, 100) + x);
      ++count;
    }
    CHECK(err / count < 0.1);
  }

  TEST_CASE("learned score of a symmetric mixture crosses zero near the symmetry point") {
    GaussianMixtureSpec spec;
    spec.dimension = 1;
    spec.components = {{0.5, {-1.0}, 0.05}, {0.5, {1.0}, 0.05}};
    const auto data = draws(spec, 10000, 4);
    EpsModelConfig arch;
    arch.hidden = {64, 64};
    ScoreTrainConfig cfg;
    cfg.steps = 5000;
    cfg.seed = 5;
    const auto r = train_score_model(data, *lin, arch, cfg);
    const int t = 100;
    double lo = -0.4, hi = 0.4;
    REQUIRE(score_at(*r.score, lo, t) < 0.0);
    REQUIRE(score_at(*r.score, hi, t) > 0.0);
    for (int i = 0; i < 40; ++i) {
      const double mid = 0.5 * (lo + hi);
      (score_at(*r.score, mid, t) < 0.0 ? lo : hi) = mid;
    }
    CHECK(std::abs(lo) < 0.1);
  }

  TEST_CASE("checkpoints round trip and pin the schedule") {
    const auto data = draws(GaussianMixtureSpec::single({0.0, 1.0}, 0.5), 256, 6);
    ScoreTrainConfig cfg;
    cfg.steps = 20;
    cfg.seed = 7;
    EpsModelConfig arch;
    arch.hidden = {16};
    arch.time_embedding = 8;
    const auto r = train_score_model(data, *lin, arch, cfg);
    const auto path = fs::temp_directory_path() / "avatar_test_ckpt" / "score.avck";
    save_checkpoint(path, *r.model, *lin, cfg.seed);
    const auto loaded = load_checkpoint(path, *lin);
    const auto pa = r.model->network().parameters();
    const auto pb = loaded->network().parameters();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
    CHECK(loaded->config().hidden == arch.hidden);
    CHECK_THROWS_AS(load_checkpoint(path, DiffusionSchedule::default_cosine()), FormatError);

    auto bytes = read_file(path);
    bytes.pop_back();
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path, *lin), FormatError);
    bytes[0] = 'X';
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path, *lin), FormatError);
  }
}
