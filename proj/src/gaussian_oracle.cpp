// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/gaussian_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avatar/error.hpp"

namespace avatar {

void GaussianMixtureSpec::validate() const {
  if (dimension < 1) throw InvalidArgument("mixture dimension must be >= 1");
  if (components.empty()) throw InvalidArgument("mixture needs at least one component");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0.0)) throw InvalidArgument("mixture weights must be positive");
    if (!(c.variance >= 0.0) || !std::isfinite(c.variance)) {
      throw InvalidArgument("mixture variances must be finite and non-negative");
    }
    if (c.mean.size() != dimension) {
      throw InvalidArgument("component mean has " + std::to_string(c.mean.size()) + " entries, expected " +
                            std::to_string(dimension));
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("mixture weights must sum to 1");
}

GaussianMixtureSpec GaussianMixtureSpec::single(std::vector<double> mean, double variance) {
  GaussianMixtureSpec spec;
  spec.dimension = mean.size();
  spec.components.push_back({1.0, std::move(mean), variance});
  spec.validate();
  return spec;
}

double GaussianMixtureSpec::max_variance() const noexcept {
  double m = 0.0;
  for (const auto& c : components) m = std::max(m, c.variance);
  return m;
}

std::vector<ComponentMarginal> oracle_marginal_params(const GaussianMixtureSpec& spec,
                                                      const DiffusionSchedule& schedule, int t) {
  const double a = schedule.alpha_bar(t);
  const double scale = std::sqrt(a);
  std::vector<ComponentMarginal> out;
  out.reserve(spec.components.size());
  for (const auto& c : spec.components) {
    ComponentMarginal m{c.weight, c.mean, a * c.variance + (1.0 - a)};
    for (auto& v : m.mean) v *= scale;
    out.push_back(std::move(m));
  }
  return out;
}

GaussianMixtureScore::GaussianMixtureScore(GaussianMixtureSpec spec,
                                           std::shared_ptr<const DiffusionSchedule> schedule)
    : spec_(std::move(spec)), schedule_(std::move(schedule)) {
  spec_.validate();
  if (!schedule_) throw InvalidArgument("oracle score needs a schedule");
}

void GaussianMixtureScore::evaluate_sample(std::span<const double> x, int t, std::span<double> out) const {
  if (x.size() != spec_.dimension || out.size() != spec_.dimension) {
    throw ShapeMismatch("oracle score dimension mismatch");
  }
  const double a = schedule_->alpha_bar(t);
  const double scale = std::sqrt(a);
  const auto& comps = spec_.components;
  const double d = static_cast<double>(spec_.dimension);

  if (comps.size() == 1) {
    const double var = a * comps[0].variance + (1.0 - a);
    if (!(var > 0.0)) throw NumericalError("degenerate marginal variance at t = " + std::to_string(t));
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = -(x[j] - scale * comps[0].mean[j]) / var;
    return;
  }

  std::vector<double> log_resp(comps.size());
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double var = a * comps[k].variance + (1.0 - a);
    if (!(var > 0.0)) throw NumericalError("degenerate marginal variance at t = " + std::to_string(t));
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double r = x[j] - scale * comps[k].mean[j];
      sq += r * r;
    }
    log_resp[k] = std::log(comps[k].weight) - 0.5 * d * std::log(var) - 0.5 * sq / var;
    max_log = std::max(max_log, log_resp[k]);
  }
  double norm = 0.0;
  for (auto& l : log_resp) {
    l = std::exp(l - max_log);
    norm += l;
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double r = log_resp[k] / norm;
    if (r == 0.0) continue;
    const double var = a * comps[k].variance + (1.0 - a);
    for (std::size_t j = 0; j < x.size(); ++j) out[j] -= r * (x[j] - scale * comps[k].mean[j]) / var;
  }
}

std::shared_ptr<const GaussianMixtureScore> oracle_score(const GaussianMixtureSpec& spec,
                                                         const DiffusionSchedule& schedule) {
  return std::make_shared<const GaussianMixtureScore>(spec, std::make_shared<const DiffusionSchedule>(schedule));
}

double exact_contraction_factor(double sigma2, const DiffusionSchedule& schedule, int t) {
  if (!(sigma2 >= 0.0)) throw InvalidArgument("sigma2 must be non-negative");
  const double b = schedule.beta(t);
  const double keep = std::sqrt(1.0 - b);
  if (std::isinf(sigma2)) return 1.0 / keep;
  const double a = schedule.alpha_bar(t);
  return (1.0 - b / (a * sigma2 + 1.0 - a)) / keep;
}

void sample_mixture(const GaussianMixtureSpec& spec, RngStream& rng, std::span<double> out) {
  std::size_t k = 0;
  if (spec.components.size() > 1) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (k = 0; k + 1 < spec.components.size(); ++k) {
      acc += spec.components[k].weight;
      if (u < acc) break;
    }
  }
  const auto& c = spec.components[k];
  const double sd = std::sqrt(c.variance);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = c.mean[j] + sd * rng.normal();
}

}  // namespace avatar
