// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/schedule.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <utility>

#include "avatar/error.hpp"

namespace avatar {

std::string_view to_string(ScheduleKind kind) noexcept {
  switch (kind) {
    case ScheduleKind::kLinear:
      return "linear";
    case ScheduleKind::kCosine:
      return "cosine";
    case ScheduleKind::kCustom:
      return "custom";
  }
  return "unknown";
}

DiffusionSchedule::DiffusionSchedule(ScheduleKind kind, std::vector<double> betas, std::string description)
    : kind_(kind), betas_(std::move(betas)), description_(std::move(description)) {
  if (betas_.empty()) throw InvalidArgument("schedule needs at least one step");
  alpha_bars_.resize(betas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    const double b = betas_[t - 1];
    if (!(b > 0.0 && b < 1.0)) {
      throw InvalidArgument("beta_" + std::to_string(t) + " = " + std::to_string(b) + " is outside (0, 1)");
    }
    alpha_bars_[t] = (1.0 - b) * alpha_bars_[t - 1];
  }
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("linear schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("linear schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  std::ostringstream desc;
  desc << "linear(T=" << steps << ", " << beta_start << ", " << beta_end << ")";
  return DiffusionSchedule(ScheduleKind::kLinear, std::move(betas), desc.str());
}

DiffusionSchedule DiffusionSchedule::cosine(int steps, double s_offset, double max_beta) {
  if (steps < 1) throw InvalidArgument("cosine schedule needs T >= 1");
  if (!(s_offset > 0.0)) throw InvalidArgument("cosine schedule needs s_offset > 0");
  if (!(max_beta > 0.0 && max_beta < 1.0)) throw InvalidArgument("cosine schedule needs max_beta in (0, 1)");
  auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / steps + s_offset) / (1.0 + s_offset)) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  std::vector<double> betas(static_cast<std::size_t>(steps));
  double prev = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double cur = f(t) / f0;
    betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - cur / prev, max_beta);
    prev = cur;
  }
  std::ostringstream desc;
  desc << "cosine(T=" << steps << ", s=" << s_offset << ", max_beta=" << max_beta << ")";
  return DiffusionSchedule(ScheduleKind::kCosine, std::move(betas), desc.str());
}

DiffusionSchedule DiffusionSchedule::custom(std::vector<double> betas) {
  std::ostringstream desc;
  desc << "custom(T=" << betas.size() << ")";
  return DiffusionSchedule(ScheduleKind::kCustom, std::move(betas), desc.str());
}

double DiffusionSchedule::beta(int t) const {
  if (t < 1 || t > steps()) {
    throw OutOfRange("beta index " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return betas_[static_cast<std::size_t>(t - 1)];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw OutOfRange("alpha_bar index " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  }
  return alpha_bars_[static_cast<std::size_t>(t)];
}

std::uint64_t DiffusionSchedule::fingerprint() const noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (double b : betas_) {
    std::uint64_t bits;
    std::memcpy(&bits, &b, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

}  // namespace avatar
