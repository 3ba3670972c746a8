// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avatar/gaussian_oracle.hpp"
#include "avatar/schedule.hpp"

namespace avatar {

enum class NormKind { kL2, kLinf };

std::string_view to_string(NormKind kind) noexcept;

/// Radius of an admissible data-protecting perturbation.
struct PerturbationBudget {
  NormKind norm = NormKind::kLinf;
  double epsilon = 8.0 / 255.0;
};

/// How lambda_1 is treated. With alpha_bar_0 = 1 the literal formula gives
/// lambda_1 = 0, which zeroes every product that includes it.
enum class LambdaConvention {
  kAlphaZeroOne,  ///< literal: lambda_1 = 0
  kSkipFirst,     ///< lambda_1 excluded from products and step checks
};

std::string_view to_string(LambdaConvention c) noexcept;

/// lambda_t = sqrt(1 - beta_t) (1 - abar_{t-1}) / (1 - abar_t).
/// Returns nullopt for t = 1 under kSkipFirst.
std::optional<double> lambda_t(const DiffusionSchedule& schedule, int t, LambdaConvention convention);

/// C_t = d * beta_t, the trace bound of the reverse-step noise.
double noise_trace_constant(const DiffusionSchedule& schedule, int t, std::size_t d);

struct ProductBound {
  double product = 0.0;    ///< prod lambda_s^2 over the convention's index set
  double exp_bound = 0.0;  ///< exp(-t* beta_{t*} / 2)
  bool holds = false;
};

ProductBound lambda_product_bound(const DiffusionSchedule& schedule, int t_star, LambdaConvention convention);

/// (||delta||^2 + 2d) exp(-t* beta_{t*} / 2) + 2 d t* beta_{t*}.
double cumulative_error_bound(const DiffusionSchedule& schedule, int t_star, double delta_norm_sq, std::size_t d);

/// Interval of t * beta_t values for which the sanitisation error bound applies.
struct TstarWindow {
  double lower = 0.0;  ///< max(0, 2 log((2 ||delta||^2 + 4d) / (mu Delta)))
  double upper = 0.0;  ///< mu Delta / (4d)
  bool feasible = false;
  std::vector<int> admissible_ts;  ///< contiguous since t * beta_t increases with t
};

TstarWindow tstar_window(double delta_norm_sq, std::size_t d, double mu, double Delta,
                         const DiffusionSchedule& schedule);

enum class NoiseCoupling {
  kIndependent,  ///< the two trajectories draw independent noise at every step
  kShared,       ///< both trajectories reuse the same draws
};

struct MonteCarloOptions {
  std::size_t trajectories = 10000;
  std::uint64_t seed = 0;
  NoiseCoupling coupling = NoiseCoupling::kIndependent;
  LambdaConvention convention = LambdaConvention::kSkipFirst;
  unsigned threads = 1;
  /// Standard errors subtracted from the empirical side before comparing.
  double cushion = 2.0;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// One per-step contraction inequality
///   E||x_{t-1} - xbar_{t-1}||^2 <= lambda_t^2 E||x_t - xbar_t||^2 + 2 C_t.
struct StepCheck {
  int t = 0;
  Estimate before;  ///< squared distance at step t
  Estimate after;   ///< squared distance at step t - 1
  std::optional<double> lambda;
  double oracle_factor = 0.0;  ///< exact slope of the oracle reverse map (largest component variance)
  double rhs = 0.0;
  bool certified = false;  ///< oracle slope within 0.1% of lambda_t; only certified steps are asserted
  bool holds = true;  ///< evaluated for every step; informational when not certified
};

struct BoundReport {
  int t_star = 0;
  LambdaConvention convention = LambdaConvention::kSkipFirst;
  NoiseCoupling coupling = NoiseCoupling::kIndependent;
  std::size_t trajectories = 0;
  std::uint64_t seed = 0;
  std::size_t dimension = 0;
  double delta_norm_sq = 0.0;

  std::vector<std::optional<double>> lambdas;  ///< lambda_1..lambda_{t*}
  std::vector<double> c_values;                ///< C_1..C_{t*}
  double lambda_product = 0.0;
  double exp_bound = 0.0;
  double cumulative_bound = 0.0;  ///< closed-form bound on E||xbar_0 - x_0||^2

  Estimate red_term;                ///< E||xbar_{t*} - x_{t*}||^2
  double red_term_expected = 0.0;   ///< abar ||delta||^2 + 2 (1 - abar) d (independent coupling)
  std::vector<StepCheck> steps;     ///< t = t*, ..., 1
  Estimate final_distance;          ///< E||xbar_0 - x_0||^2
  bool cumulative_holds = false;

  Estimate reconstruction_error;    ///< Delta-hat = E||x_0 - x||^2 for clean trajectories
  Estimate sanitized_error;         ///< E||xbar_0 - x||^2

  // Only populated by theorem_check_mc.
  bool theorem_checked = false;
  double mu = 0.0;
  std::optional<TstarWindow> window;
  bool feasible = true;
  double theorem_bound = 0.0;  ///< 2 (mu + 1) Delta-hat

  std::vector<std::string> notes;
  bool holds = false;
};

/// Regime check used as the t* precondition: component variance <= 1e-3 * (1 - abar_t).
bool oracle_lambda_certified(const GaussianMixtureSpec& spec, const DiffusionSchedule& schedule, int t);

/// Simulates paired clean / perturbed trajectories through forward diffusion to
/// t_star and the oracle reverse chain (noise at every step, including t = 1),
/// and checks every certified per-step contraction inequality plus the
/// closed-form cumulative bound.
BoundReport verify_contraction_mc(const GaussianMixtureSpec& spec, const DiffusionSchedule& schedule, int t_star,
                                  std::span<const double> delta, const MonteCarloOptions& options);

/// Delta-hat at step t: E||x_0 - x||^2 for x from the spec, forward-diffused
/// to t and denoised with the oracle. Uses the same streams as the verifiers.
Estimate measure_reconstruction_error(const GaussianMixtureSpec& spec, const DiffusionSchedule& schedule, int t,
                                      const MonteCarloOptions& options);

/// End-to-end check of E||xbar_0 - x||^2 <= 2 (mu + 1) Delta-hat.
///
/// Delta-hat depends on t* while the admissible t* depend on Delta-hat, so the
/// search starts at `start_t` (default T / 10), measures Delta-hat there, moves
/// to the nearest admissible t and repeats until the chosen t is admissible for
/// its own Delta-hat. An empty or never-consistent window yields
/// feasible = false and no claim.
BoundReport theorem_check_mc(const GaussianMixtureSpec& spec, const DiffusionSchedule& schedule,
                             std::span<const double> delta, double mu, const MonteCarloOptions& options,
                             std::optional<int> start_t = std::nullopt);

}  // namespace avatar
