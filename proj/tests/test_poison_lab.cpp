// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "avatar/diffusion.hpp"
#include "avatar/error.hpp"
#include "avatar/poison_lab.hpp"
#include "avatar/rng.hpp"

using namespace avatar;

namespace {

SyntheticData default_data() {
  SyntheticConfig cfg;
  cfg.seed = 11;
  return generate_synthetic_dataset(cfg);
}

}  // namespace

TEST_SUITE("poison_lab") {
  const auto data = default_data();
  const auto poisoned = shortcut_attack(data.train, PerturbationBudget{}, 5);

  TEST_CASE("synthetic data is reproducible and well formed") {
    SyntheticConfig cfg;
    cfg.seed = 11;
    const auto again = generate_synthetic_dataset(cfg);
    CHECK(bitwise_equal(again.train.samples, data.train.samples));
    CHECK(again.train.labels == data.train.labels);
    CHECK(data.train.size() == 1000);
    CHECK(data.test.size() == 1000);
    CHECK(data.train.dimension() == 64);
    CHECK(data.distribution.components.size() == 8);
    data.train.validate();
    cfg.seed = 12;
    CHECK(!bitwise_equal(generate_synthetic_dataset(cfg).train.samples, data.train.samples));
  }

  TEST_CASE("sampled datasets follow the component classes") {
    const auto extra = sample_dataset(data, 50, 3, Split::kTest);
    CHECK(extra.size() == 50);
    CHECK(extra.split == Split::kTest);
    extra.validate();
  }

  TEST_CASE("indistinguishable classes stay near chance") {
    SyntheticConfig cfg;
    cfg.separation = 0.0;
    cfg.seed = 2;
    const auto d = generate_synthetic_dataset(cfg);
    ClassifierConfig c;
    c.epochs = 10;
    const auto m = train_classifier(d.train, d.test, c, 1);
    CHECK(m.final_accuracy <= 0.60);
  }

  TEST_CASE("one cluster per class is linearly separable") {
    SyntheticConfig cfg;
    cfg.clusters_per_class = 1;
    cfg.noise = 0.02;
    cfg.seed = 3;
    const auto d = generate_synthetic_dataset(cfg);
    ClassifierConfig c;
    c.hidden = {};
    c.epochs = 10;
    CHECK(train_classifier(d.train, d.test, c, 1).final_accuracy >= 0.99);
  }

  TEST_CASE("shortcut perturbations respect the budget") {
    CHECK(poisoned.within_budget());
    CHECK(poisoned.attack == "shortcut-classwise");
    // Unclamped coordinates carry the full radius up to float rounding.
    double largest = 0.0;
    for (float v : poisoned.perturbations.values()) largest = std::max(largest, static_cast<double>(std::abs(v)));
    CHECK(largest <= 8.0 / 255.0);
    CHECK(largest >= 8.0 / 255.0 - 1e-6);
    for (std::size_t i = 0; i < poisoned.data.samples.size(); ++i) {
      const float clean = data.train.samples[i];
      if (clean < 0.0f || clean > 1.0f) continue;
      CHECK(poisoned.data.samples[i] >= 0.0f);
      CHECK(poisoned.data.samples[i] <= 1.0f);
    }
    CHECK(poisoned.data.labels == data.train.labels);
  }

  TEST_CASE("clean values outside the unit range keep the budget") {
    LabeledDataset odd;
    odd.samples = Tensor({2, 3});
    odd.labels = {0, 1};
    const float values[] = {-0.5f, -0.01f, 1.3f, 1e-30f, 0.5f, -1e-30f};
    for (std::size_t i = 0; i < 6; ++i) odd.samples[i] = values[i];
    for (const auto& budget : {PerturbationBudget{}, PerturbationBudget{NormKind::kL2, 0.05}}) {
      const auto p = shortcut_attack(odd, budget, 3);
      CHECK(p.within_budget());
      // Values move toward [0, 1] by at most the radius.
      CHECK(p.data.samples[0] >= -0.5f);
      CHECK(p.data.samples[2] <= 1.3f);
    }
    const auto linf = shortcut_attack(odd, PerturbationBudget{}, 3);
    CHECK(linf.data.samples[0] == doctest::Approx(-0.5 + 8.0 / 255.0).epsilon(1e-6));
    CHECK(linf.data.samples[1] >= 0.0f);
  }

  TEST_CASE("l2 and sample-wise budgets") {
    const auto l2 = shortcut_attack(data.train, PerturbationBudget{NormKind::kL2, 0.5}, 5);
    CHECK(l2.within_budget());
    CHECK(l2.max_norm() == doctest::Approx(0.5).epsilon(1e-3));
    const auto sw = shortcut_attack(data.train, PerturbationBudget{}, 5, AttackGranularity::kSampleWise);
    CHECK(sw.within_budget());
    CHECK(!bitwise_equal(sw.perturbations, poisoned.perturbations));
  }

  TEST_CASE("zero budget leaves the data untouched") {
    const auto none = shortcut_attack(data.train, PerturbationBudget{NormKind::kLinf, 0.0}, 5);
    CHECK(bitwise_equal(none.data.samples, data.train.samples));
  }

  TEST_CASE("a linear probe on the perturbations alone is perfect") {
    LabeledDataset probe = data.train;
    probe.samples = poisoned.perturbations;
    ClassifierConfig c;
    c.hidden = {};
    c.epochs = 5;
    CHECK(train_classifier(probe, probe, c, 1).final_accuracy == 1.0);
  }

  TEST_CASE("clean training succeeds and poisoned training collapses") {
    const ClassifierConfig c;
    const auto clean = train_classifier(data.train, data.test, c, 21);
    const auto dirty = train_classifier(poisoned.data, data.test, c, 21);
    CHECK(clean.final_accuracy >= 0.95);
    CHECK(dirty.final_accuracy <= 0.65);
    CHECK(dirty.best_accuracy <= 0.65);
    for (const auto* m : {&clean, &dirty}) {
      CHECK(m->best_accuracy >= m->final_accuracy);
      CHECK(m->history.size() == c.epochs);
      CHECK(m->history[m->best_epoch - 1].test_accuracy == m->best_accuracy);
    }
  }

  TEST_CASE("adversarial training") {
    ClassifierConfig c;
    const auto vanilla = train_classifier(poisoned.data, data.test, c, 4);

    PgdConfig none;
    const auto degenerate = adversarial_train(poisoned.data, data.test, c, none, 4);
    const auto pa = vanilla.network.parameters();
    const auto pb = degenerate.network.parameters();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));

    const PgdConfig pgd{10, 0.0, 9.0 / 255.0, NormKind::kLinf};
    const auto robust = adversarial_train(poisoned.data, data.test, c, pgd, 4);
    CHECK(robust.final_accuracy > vanilla.final_accuracy);

    const auto clean = train_classifier(data.train, data.test, c, 4);
    const auto clean_robust = adversarial_train(data.train, data.test, c, pgd, 4);
    CHECK(clean_robust.final_accuracy <= clean.final_accuracy);
  }

  TEST_CASE("noise-only ablation") {
    const auto schedule = DiffusionSchedule::default_linear();
    const auto same = noise_only_ablation(poisoned, 0, schedule, 1);
    CHECK(bitwise_equal(same.samples, poisoned.data.samples));
    const auto noise = noise_only_ablation(poisoned, schedule.steps(), schedule, 1);
    ClassifierConfig c;
    c.epochs = 10;
    // Errors are correlated within each of the 8 test clusters, so a single run
    // sits within about 0.18 of chance; average three seeds.
    double mean = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) mean += train_classifier(noise, data.test, c, seed).final_accuracy / 3.0;
    CHECK(std::abs(mean - 0.5) <= 0.15);
  }

  TEST_CASE("evaluation") {
    RngStream rng(8, 0);
    Classifier untrained;
    untrained.network = Mlp({64, 128, 128, 2}, rng);
    const double acc = evaluate(untrained, data.test);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(std::abs(acc - 0.5) <= 3.0 * std::sqrt(0.25 / data.test.size()));
    LabeledDataset empty;
    empty.samples = Tensor({0, 64});
    CHECK_THROWS(evaluate(untrained, empty));
    CHECK(predict(untrained.network, data.test.samples).size() == data.test.size());
  }

  TEST_CASE("training configuration errors") {
    ClassifierConfig c;
    c.epochs = 0;
    CHECK_THROWS_AS(train_classifier(data.train, data.test, c, 1), InvalidArgument);
  }

  TEST_CASE("invalid datasets are rejected") {
    LabeledDataset bad = data.train;
    bad.labels[0] = 5;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad.labels.pop_back();
    CHECK_THROWS(bad.validate());
  }
}
