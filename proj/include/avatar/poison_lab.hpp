// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avatar/bounds.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/mlp.hpp"
#include "avatar/schedule.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

enum class Split { kTrain, kTest };

std::string_view to_string(Split split) noexcept;

/// Samples (n x d) with 0-based class labels.
struct LabeledDataset {
  Tensor samples;
  std::vector<int> labels;
  std::size_t classes = 2;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dimension() const noexcept { return samples.row_size(); }
  /// Throws unless labels are in [0, classes) and match the leading dimension.
  void validate() const;
};

/// Toy data: K * clusters_per_class isotropic Gaussian clusters evenly spaced on
/// a circle of radius `separation` inside a random 2-D subspace, centred at
/// `center` in every coordinate. Clusters alternate between classes around the
/// circle, so the classes are not linearly separable (K = 2 with two clusters
/// per class is XOR) and separation 0 makes them indistinguishable.
struct SyntheticConfig {
  std::size_t classes = 2;
  std::size_t clusters_per_class = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 500;
  std::size_t dimension = 64;
  double separation = 1.2;
  double noise = 0.06;
  double center = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  LabeledDataset train;
  LabeledDataset test;
  GaussianMixtureSpec distribution;    ///< the clean data law, cluster by cluster
  std::vector<int> component_classes;  ///< class of each mixture component
};

SyntheticData generate_synthetic_dataset(const SyntheticConfig& config);

/// n fresh draws from a synthetic distribution (labels from the component drawn).
LabeledDataset sample_dataset(const SyntheticData& source, std::size_t n, std::uint64_t seed, Split split);

enum class AttackGranularity { kClassWise, kSampleWise };

/// Protected copy of a dataset: samples are x + delta clamped to [0, 1] and
/// `perturbations` holds the realised delta, which always respects the budget.
struct PoisonedDataset {
  std::shared_ptr<const LabeledDataset> base;
  LabeledDataset data;
  Tensor perturbations;
  PerturbationBudget budget;
  std::string attack;
  std::uint64_t seed = 0;

  /// Largest realised norm of a per-sample perturbation under the budget's norm.
  double max_norm() const;
  bool within_budget() const { return max_norm() <= budget.epsilon; }
};

/// Shortcut-style availability attack: one random pattern per class, scaled to
/// the budget (sign pattern for L-inf, unit direction for L2), added to every
/// sample of that class. Sample-wise mode perturbs each sample's copy of its
/// class pattern with a random sign flip on a quarter of the coordinates.
PoisonedDataset shortcut_attack(const LabeledDataset& data, const PerturbationBudget& budget, std::uint64_t seed,
                                AttackGranularity granularity = AttackGranularity::kClassWise);

/// SGD training protocol scaled down from the image-classifier recipe:
/// lr 0.1 decayed x0.1 at 2/3 and 5/6 of the epochs, batch 128, weight decay 5e-4.
struct ClassifierConfig {
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.1;
  std::vector<double> milestones = {2.0 / 3.0, 5.0 / 6.0};  ///< fractions of `epochs`
};

struct PgdConfig {
  std::size_t steps = 10;
  double step_size = 0.0;  ///< 0 selects epsilon / 4
  double epsilon = 0.0;
  NormKind norm = NormKind::kLinf;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

struct Classifier {
  Mlp network;
  std::size_t classes = 2;
  std::vector<EpochMetrics> history;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;  ///< early-stopping metric: best per-epoch clean-test accuracy
  std::size_t best_epoch = 0;
};

/// Trains on `train`; `eval` (typically the clean test split) is scored after every epoch.
Classifier train_classifier(const LabeledDataset& train, const LabeledDataset& eval, const ClassifierConfig& cfg,
                            std::uint64_t seed);

/// PGD adversarial training. epsilon = 0 reproduces train_classifier exactly.
Classifier adversarial_train(const LabeledDataset& train, const LabeledDataset& eval, const ClassifierConfig& cfg,
                             const PgdConfig& pgd, std::uint64_t seed);

/// Fraction of argmax predictions equal to the label. Throws on an empty dataset.
double evaluate(const Classifier& model, const LabeledDataset& data);
/// Predicted class per row.
std::vector<int> predict(const Mlp& network, const Tensor& samples);

/// Forward diffusion to t_star without the reverse pass (sample i uses stream i).
LabeledDataset noise_only_ablation(const PoisonedDataset& data, int t_star, const DiffusionSchedule& schedule,
                                   std::uint64_t seed);

}  // namespace avatar
