// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace avatar {

enum class ScheduleKind { kLinear, kCosine, kCustom };

std::string_view to_string(ScheduleKind kind) noexcept;

/// Variance schedule beta_1..beta_T with its cumulative signal retention
/// table alpha_bar_0..alpha_bar_T, alpha_bar_0 = 1.
///
/// Both tables are materialised at construction through the recurrence
/// alpha_bar_t = (1 - beta_t) * alpha_bar_{t-1}; lookups never recompute products.
/// Immutable once built.
class DiffusionSchedule {
 public:
  /// beta_t interpolated linearly from beta_start (t = 1) to beta_end (t = T).
  static DiffusionSchedule linear(int steps, double beta_start, double beta_end);
  /// alpha_bar_t ~ cos^2(((t/T + s)/(1 + s)) * pi/2), betas clamped to max_beta.
  static DiffusionSchedule cosine(int steps, double s_offset, double max_beta = 0.999);
  /// Arbitrary betas, each in (0, 1).
  static DiffusionSchedule custom(std::vector<double> betas);

  /// Defaults used throughout the tools: T = 1000, 1e-4 -> 0.02.
  static DiffusionSchedule default_linear() { return linear(1000, 1e-4, 0.02); }
  /// T = 1000, s = 0.008.
  static DiffusionSchedule default_cosine() { return cosine(1000, 0.008); }

  ScheduleKind kind() const noexcept { return kind_; }
  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  /// beta_t for 1 <= t <= T.
  double beta(int t) const;
  /// alpha_bar_t for 0 <= t <= T.
  double alpha_bar(int t) const;

  /// beta_1..beta_T (index 0 holds beta_1).
  std::span<const double> betas() const noexcept { return betas_; }
  /// alpha_bar_0..alpha_bar_T.
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

  /// Stable 64-bit fingerprint of the beta table, recorded in checkpoints.
  std::uint64_t fingerprint() const noexcept;
  /// Human-readable constructor description, e.g. "linear(T=1000, 0.0001, 0.02)".
  const std::string& description() const noexcept { return description_; }

 private:
  DiffusionSchedule(ScheduleKind kind, std::vector<double> betas, std::string description);

  ScheduleKind kind_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::string description_;
};

/// Free-function lookup of alpha_bar_t.
inline double alpha_bar(const DiffusionSchedule& schedule, int t) { return schedule.alpha_bar(t); }

}  // namespace avatar
