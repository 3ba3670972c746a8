// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/poison_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "avatar/diffusion.hpp"
#include "avatar/error.hpp"
#include "avatar/rng.hpp"

namespace avatar {

std::string_view to_string(Split split) noexcept { return split == Split::kTrain ? "train" : "test"; }

void LabeledDataset::validate() const {
  if (classes < 2) throw InvalidArgument("a dataset needs at least two classes");
  if (samples.rows() != labels.size() && !(labels.empty() && samples.empty())) {
    throw ShapeMismatch("label count does not match the number of samples");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InvalidArgument("label out of range");
  }
}

namespace {

std::vector<double> random_unit(std::size_t d, RngStream& rng) {
  std::vector<double> v(d);
  rng.fill_normal(v);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

SyntheticData generate_synthetic_dataset(const SyntheticConfig& config) {
  const std::size_t k = config.classes;
  const std::size_t d = config.dimension;
  if (k < 2) throw InvalidArgument("synthetic data needs K >= 2");
  if (d < k || d < 2) throw InvalidArgument("synthetic data needs d >= K and d >= 2");
  if (config.clusters_per_class == 0) throw InvalidArgument("synthetic data needs at least one cluster per class");
  if (config.train_per_class == 0) throw InvalidArgument("synthetic data needs at least one sample per class");
  if (!(config.separation >= 0.0) || !(config.noise >= 0.0)) {
    throw InvalidArgument("separation and noise must be non-negative");
  }

  RngStream basis_rng(config.seed, 0);
  auto u = random_unit(d, basis_rng);
  auto v = random_unit(d, basis_rng);
  double dot = 0.0;
  for (std::size_t j = 0; j < d; ++j) dot += u[j] * v[j];
  double norm = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    v[j] -= dot * u[j];
    norm += v[j] * v[j];
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;

  SyntheticData out;
  const std::size_t per_class_modes = config.clusters_per_class;
  const std::size_t clusters = per_class_modes * k;
  out.distribution.dimension = d;
  for (std::size_t c = 0; c < clusters; ++c) {
    const double theta = std::numbers::pi * (1.0 + 2.0 * static_cast<double>(c)) / static_cast<double>(clusters);
    GaussianComponent comp;
    comp.weight = 1.0 / static_cast<double>(clusters);
    comp.variance = config.noise * config.noise;
    comp.mean.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      comp.mean[j] = config.center + config.separation * (std::cos(theta) * u[j] + std::sin(theta) * v[j]);
    }
    out.distribution.components.push_back(std::move(comp));
    out.component_classes.push_back(static_cast<int>(c % k));
  }
  out.distribution.validate();

  auto draw = [&](std::size_t per_class, std::uint64_t stream, Split split) {
    LabeledDataset ds;
    ds.classes = k;
    ds.split = split;
    ds.samples = Tensor({static_cast<std::uint64_t>(per_class * k), static_cast<std::uint64_t>(d)});
    ds.labels.resize(per_class * k);
    RngStream rng(config.seed, stream);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < per_class * k; ++i) {
      const std::size_t cls = i % k;
      const std::size_t cluster = cls + k * static_cast<std::size_t>(rng.below(per_class_modes));
      const auto& comp = out.distribution.components[cluster];
      auto row = ds.samples.row(i);
      for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(comp.mean[j] + config.noise * rng.normal());
      ds.labels[i] = static_cast<int>(cls);
    }
    return ds;
  };
  out.train = draw(config.train_per_class, 1, Split::kTrain);
  out.test = draw(config.test_per_class, 2, Split::kTest);
  return out;
}

LabeledDataset sample_dataset(const SyntheticData& source, std::size_t n, std::uint64_t seed, Split split) {
  const auto& spec = source.distribution;
  LabeledDataset ds;
  ds.classes = source.train.classes;
  ds.split = split;
  ds.samples = Tensor({static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(spec.dimension)});
  ds.labels.resize(n);
  RngStream rng(seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(rng.below(spec.components.size()));
    const auto& comp = spec.components[c];
    const double sd = std::sqrt(comp.variance);
    auto row = ds.samples.row(i);
    for (std::size_t j = 0; j < spec.dimension; ++j) row[j] = static_cast<float>(comp.mean[j] + sd * rng.normal());
    ds.labels[i] = source.component_classes[c];
  }
  return ds;
}

double PoisonedDataset::max_norm() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < perturbations.rows(); ++i) {
    double n = 0.0;
    for (float v : perturbations.row(i)) {
      if (budget.norm == NormKind::kLinf) {
        n = std::max(n, static_cast<double>(std::abs(v)));
      } else {
        n += static_cast<double>(v) * v;
      }
    }
    if (budget.norm == NormKind::kL2) n = std::sqrt(n);
    worst = std::max(worst, n);
  }
  return worst;
}

PoisonedDataset shortcut_attack(const LabeledDataset& data, const PerturbationBudget& budget, std::uint64_t seed,
                                AttackGranularity granularity) {
  data.validate();
  if (!(budget.epsilon >= 0.0)) throw InvalidArgument("perturbation budget must be non-negative");
  const std::size_t d = data.dimension();
  const std::size_t n = data.size();

  RngStream pattern_rng(seed, 0);
  std::vector<std::vector<double>> patterns(data.classes);
  for (auto& p : patterns) {
    p = random_unit(d, pattern_rng);
    for (auto& x : p) {
      x = budget.norm == NormKind::kLinf ? (x >= 0.0 ? budget.epsilon : -budget.epsilon) : x * budget.epsilon;
    }
  }

  PoisonedDataset out;
  out.base = std::make_shared<const LabeledDataset>(data);
  out.data = data;
  out.perturbations = Tensor(data.samples.dims());
  out.budget = budget;
  out.attack = granularity == AttackGranularity::kClassWise ? "shortcut-classwise" : "shortcut-samplewise";
  out.seed = seed;

  std::vector<double> delta(d);
  for (std::size_t i = 0; i < n; ++i) {
    delta = patterns[static_cast<std::size_t>(data.labels[i])];
    if (granularity == AttackGranularity::kSampleWise) {
      RngStream rng(seed, 1 + i);
      for (auto& x : delta) {
        if (rng.below(4) == 0) x = -x;
      }
    }
    const auto src = data.samples.row(i);
    auto dst = out.data.samples.row(i);
    auto pert = out.perturbations.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = src[j];
      double target = std::clamp(c + delta[j], 0.0, 1.0);
      // A clean value outside [0, 1] by more than the radius cannot be clamped without
      // breaking the budget; the budget wins.
      if (budget.norm == NormKind::kLinf) target = std::clamp(target, c - budget.epsilon, c + budget.epsilon);
      float x = static_cast<float>(target);
      // Rounding in float can overshoot the radius by an ulp; pull back toward the clean value.
      if (budget.norm == NormKind::kLinf) {
        auto over = [&] {
          return std::abs(static_cast<double>(x) - src[j]) > budget.epsilon ||
                 std::abs(static_cast<double>(x - src[j])) > budget.epsilon;
        };
        while (over()) x = std::nextafter(x, src[j]);
      }
      dst[j] = x;
      pert[j] = x - src[j];
    }
    if (budget.norm == NormKind::kL2) {
      auto l2 = [&] {
        double s = 0.0;
        for (float v : pert) s += static_cast<double>(v) * v;
        return std::sqrt(s);
      };
      // Clamping can lengthen delta when the clean sample lies outside [0, 1]; rescale once,
      // then absorb float rounding.
      double scale = std::min(1.0, budget.epsilon / std::max(l2(), 1e-300));
      while (l2() > budget.epsilon) {
        for (std::size_t j = 0; j < d; ++j) {
          dst[j] = static_cast<float>(src[j] + scale * static_cast<double>(pert[j]));
          pert[j] = dst[j] - src[j];
        }
        scale = 1.0 - 1e-6;
      }
    }
  }
  return out;
}

namespace {

void gather(const LabeledDataset& data, std::span<const std::size_t> idx, std::vector<float>& x, std::vector<int>& y) {
  const std::size_t d = data.dimension();
  x.resize(idx.size() * d);
  y.resize(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto row = data.samples.row(idx[n]);
    std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(n * d));
    y[n] = data.labels[idx[n]];
  }
}

// Inner maximisation: PGD on the cross-entropy, projected onto the budget ball
// and the [0, 1] data range. Starts from a uniform point of the L-inf ball
// (or the origin for L2).
void pgd_perturb(const Mlp& net, std::size_t classes, std::vector<float>& x, std::span<const int> y,
                 const PgdConfig& pgd, RngStream& rng) {
  const std::size_t batch = y.size();
  const std::size_t d = net.input_dim();
  const std::vector<float> clean = x;
  const auto eps = static_cast<float>(pgd.epsilon);
  const auto alpha = static_cast<float>(pgd.step_size > 0.0 ? pgd.step_size : pgd.epsilon / 4.0);
  if (pgd.norm == NormKind::kLinf) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] = std::clamp(clean[k] + static_cast<float>((2.0 * rng.uniform() - 1.0) * pgd.epsilon), 0.0f, 1.0f);
    }
  }
  Mlp::Workspace ws;
  std::vector<float> grad_logits(batch * classes), grad_input(x.size()), grad_params(net.parameter_count());
  for (std::size_t step = 0; step < pgd.steps; ++step) {
    const auto logits = net.forward(x, batch, ws);
    softmax_cross_entropy(logits, y, classes, grad_logits);
    net.backward(ws, grad_logits, grad_params, grad_input);
    for (std::size_t n = 0; n < batch; ++n) {
      float* xn = x.data() + n * d;
      const float* cn = clean.data() + n * d;
      const float* gn = grad_input.data() + n * d;
      if (pgd.norm == NormKind::kLinf) {
        for (std::size_t j = 0; j < d; ++j) {
          const float s = gn[j] > 0.0f ? 1.0f : (gn[j] < 0.0f ? -1.0f : 0.0f);
          const float delta = std::clamp(xn[j] + alpha * s - cn[j], -eps, eps);
          xn[j] = std::clamp(cn[j] + delta, 0.0f, 1.0f);
        }
      } else {
        double gnorm = 0.0;
        for (std::size_t j = 0; j < d; ++j) gnorm += static_cast<double>(gn[j]) * gn[j];
        gnorm = std::sqrt(gnorm);
        if (gnorm > 0.0) {
          for (std::size_t j = 0; j < d; ++j) xn[j] += alpha * static_cast<float>(gn[j] / gnorm);
        }
        double dnorm = 0.0;
        for (std::size_t j = 0; j < d; ++j) dnorm += static_cast<double>(xn[j] - cn[j]) * (xn[j] - cn[j]);
        dnorm = std::sqrt(dnorm);
        const float shrink = dnorm > pgd.epsilon ? static_cast<float>(pgd.epsilon / dnorm) : 1.0f;
        for (std::size_t j = 0; j < d; ++j) xn[j] = std::clamp(cn[j] + shrink * (xn[j] - cn[j]), 0.0f, 1.0f);
      }
    }
  }
}

Classifier train_impl(const LabeledDataset& train, const LabeledDataset& eval, const ClassifierConfig& cfg,
                      const PgdConfig* pgd, std::uint64_t seed) {
  train.validate();
  if (train.size() == 0) throw InvalidArgument("classifier training needs a non-empty train split");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw InvalidArgument("epochs and batch size must be positive");
  const std::size_t d = train.dimension();
  const std::size_t k = train.classes;

  std::vector<std::size_t> widths{d};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(k);
  RngStream init_rng(seed, 0);
  Classifier model{Mlp(widths, init_rng), k, {}, 0.0, 0.0, 0};
  Mlp& net = model.network;
  SgdMomentum opt(net.parameter_count(), cfg.momentum, cfg.weight_decay);
  RngStream order_rng(seed, 1);
  RngStream pgd_rng(seed, 2);
  const bool adversarial = pgd != nullptr && pgd->epsilon > 0.0 && pgd->steps > 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> x, grad_logits, grads(net.parameter_count());
  std::vector<int> y;
  Mlp::Workspace ws;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    for (double m : cfg.milestones) {
      if (epoch >= static_cast<std::size_t>(m * static_cast<double>(cfg.epochs))) lr *= cfg.lr_decay;
    }
    shuffle_indices(std::span(order), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      gather(train, std::span(order).subspan(start, end - start), x, y);
      if (adversarial) pgd_perturb(net, k, x, y, *pgd, pgd_rng);
      const auto logits = net.forward(x, y.size(), ws);
      grad_logits.resize(logits.size());
      const double loss = softmax_cross_entropy(logits, y, k, grad_logits);
      if (!std::isfinite(loss)) {
        throw NumericalError("classifier training diverged in epoch " + std::to_string(epoch + 1));
      }
      loss_sum += loss;
      ++batches;
      std::fill(grads.begin(), grads.end(), 0.0f);
      net.backward(ws, grad_logits, grads);
      opt.step(net.parameters(), grads, lr);
    }
    EpochMetrics m{epoch + 1, loss_sum / static_cast<double>(batches), 0.0};
    if (eval.size() > 0) m.test_accuracy = evaluate(model, eval);
    model.history.push_back(m);
    if (epoch == 0 || m.test_accuracy > model.best_accuracy) {
      model.best_accuracy = m.test_accuracy;
      model.best_epoch = m.epoch;
    }
  }
  if (!net.all_finite()) throw NumericalError("classifier parameters became non-finite");
  model.final_accuracy = model.history.back().test_accuracy;
  return model;
}

}  // namespace

Classifier train_classifier(const LabeledDataset& train, const LabeledDataset& eval, const ClassifierConfig& cfg,
                            std::uint64_t seed) {
  return train_impl(train, eval, cfg, nullptr, seed);
}

Classifier adversarial_train(const LabeledDataset& train, const LabeledDataset& eval, const ClassifierConfig& cfg,
                             const PgdConfig& pgd, std::uint64_t seed) {
  if (!(pgd.epsilon >= 0.0)) throw InvalidArgument("PGD epsilon must be non-negative");
  return train_impl(train, eval, cfg, &pgd, seed);
}

std::vector<int> predict(const Mlp& network, const Tensor& samples) {
  const std::size_t d = network.input_dim();
  if (samples.row_size() != d) throw ShapeMismatch("sample dimension does not match the classifier input");
  const std::size_t k = network.output_dim();
  std::vector<int> out(samples.rows());
  Mlp::Workspace ws;
  constexpr std::size_t kBatch = 256;
  for (std::size_t start = 0; start < samples.rows(); start += kBatch) {
    const std::size_t n = std::min(samples.rows() - start, kBatch);
    const auto logits = network.forward(samples.values().subspan(start * d, n * d), n, ws);
    for (std::size_t i = 0; i < n; ++i) {
      const float* z = logits.data() + i * k;
      out[start + i] = static_cast<int>(std::max_element(z, z + k) - z);
    }
  }
  return out;
}

double evaluate(const Classifier& model, const LabeledDataset& data) {
  if (data.size() == 0) throw InvalidArgument("cannot evaluate on an empty dataset");
  if (data.dimension() != model.network.input_dim()) {
    throw ShapeMismatch("dataset dimension does not match the classifier input");
  }
  const auto pred = predict(model.network, data.samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

LabeledDataset noise_only_ablation(const PoisonedDataset& data, int t_star, const DiffusionSchedule& schedule,
                                   std::uint64_t seed) {
  if (t_star < 0 || t_star > schedule.steps()) throw OutOfRange("t_star out of range");
  LabeledDataset out = data.data;
  if (t_star == 0) return out;
  std::vector<double> x(out.dimension());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = out.samples.row(i);
    std::copy(row.begin(), row.end(), x.begin());
    RngStream rng(seed, i);
    forward_diffuse_sample(x, schedule, t_star, rng);
    for (std::size_t j = 0; j < x.size(); ++j) row[j] = static_cast<float>(x[j]);
  }
  return out;
}

}  // namespace avatar
