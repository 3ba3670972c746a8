// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "avatar/diffusion.hpp"
#include "avatar/schedule.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

/// PSNR in decibels with an explicit +infinity sentinel for identical inputs.
struct Psnr {
  double db = 0.0;
  bool infinite = false;

  static Psnr perfect() noexcept { return {0.0, true}; }
  bool at_least(double threshold_db) const noexcept { return infinite || db >= threshold_db; }
};

/// 10 log10(max_value^2 / MSE(a, b)).
Psnr psnr(std::span<const float> a, std::span<const float> b, double max_value = 1.0);
Psnr psnr(const Tensor& a, const Tensor& b, double max_value = 1.0);

/// Timestep of `target` whose alpha_bar is closest to alpha_bar_ref(t_ref); ties go to the smaller t.
int match_timestep(const DiffusionSchedule& reference, int t_ref, const DiffusionSchedule& target);

struct PsnrPoint {
  int t = 0;
  Psnr mean;          ///< infinite only if every sample reconstructs exactly
  double std_db = 0;  ///< over finite per-sample values
  std::size_t n = 0;
};

struct PsnrCurve {
  std::vector<PsnrPoint> points;
};

struct PsnrSelection {
  int t_star = 0;
  PsnrCurve curve;
};

struct PsnrSelectionOptions {
  double threshold_db = 22.0;
  std::vector<int> t_grid;
  std::size_t samples_per_t = 0;  ///< 0: use the whole validation batch
  std::uint64_t seed = 0;
  double max_value = 1.0;
  SanitizeOptions sanitize;
};

/// Sanitises the clean validation batch at every grid t and returns the largest
/// t whose mean reconstruction PSNR clears the threshold (0 if none does).
PsnrSelection select_by_psnr(const ScoreFunction& score, const DiffusionSchedule& schedule,
                             const Tensor& validation, const PsnrSelectionOptions& options);

/// Threshold rule applied to an existing curve.
int select_from_curve(const PsnrCurve& curve, double threshold_db);

}  // namespace avatar
