// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "avatar/diffusion.hpp"
#include "avatar/rng.hpp"
#include "avatar/schedule.hpp"

namespace avatar {

/// One isotropic component N(mean, variance * I) of a Gaussian mixture.
struct GaussianComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double variance = 0.0;
};

/// Isotropic Gaussian mixture used as a closed-form data distribution.
struct GaussianMixtureSpec {
  std::size_t dimension = 1;
  std::vector<GaussianComponent> components;

  /// Throws InvalidArgument unless weights are positive and sum to 1 (1e-12),
  /// variances are non-negative and every mean has `dimension` entries.
  void validate() const;

  /// Single component N(mean, variance * I).
  static GaussianMixtureSpec single(std::vector<double> mean, double variance);
  /// Largest component variance.
  double max_variance() const noexcept;
};

/// Noisy-marginal parameters of one component at step t.
struct ComponentMarginal {
  double weight;
  std::vector<double> mean;  ///< sqrt(abar_t) * m_k
  double variance;           ///< abar_t * sigma_k^2 + 1 - abar_t
};

std::vector<ComponentMarginal> oracle_marginal_params(const GaussianMixtureSpec& spec,
                                                      const DiffusionSchedule& schedule, int t);

/// Exact score of the forward-diffused mixture. Responsibilities are computed
/// in log space so far-tail inputs stay finite.
class GaussianMixtureScore final : public ScoreFunction {
 public:
  GaussianMixtureScore(GaussianMixtureSpec spec, std::shared_ptr<const DiffusionSchedule> schedule);

  std::size_t dimension() const override { return spec_.dimension; }
  void evaluate_sample(std::span<const double> x, int t, std::span<double> out) const override;

  const GaussianMixtureSpec& spec() const noexcept { return spec_; }

 private:
  GaussianMixtureSpec spec_;
  std::shared_ptr<const DiffusionSchedule> schedule_;
};

std::shared_ptr<const GaussianMixtureScore> oracle_score(const GaussianMixtureSpec& spec,
                                                         const DiffusionSchedule& schedule);

/// Slope of the oracle reverse map for a single isotropic Gaussian of variance sigma2:
///   (1 - beta_t / (abar_t sigma2 + 1 - abar_t)) / sqrt(1 - beta_t).
/// Infinite sigma2 gives the expansion limit 1 / sqrt(1 - beta_t).
double exact_contraction_factor(double sigma2, const DiffusionSchedule& schedule, int t);

/// Draws one sample of the mixture into `out`.
void sample_mixture(const GaussianMixtureSpec& spec, RngStream& rng, std::span<double> out);

}  // namespace avatar
