// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/selection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avatar/error.hpp"
#include "avatar/rng.hpp"

namespace avatar {

Psnr psnr(std::span<const float> a, std::span<const float> b, double max_value) {
  if (a.size() != b.size()) throw ShapeMismatch("psnr inputs differ in size");
  if (a.empty()) throw InvalidArgument("psnr of empty inputs");
  if (!(max_value > 0.0)) throw InvalidArgument("psnr peak value must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += r * r;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return Psnr::perfect();
  return {10.0 * std::log10(max_value * max_value / mse), false};
}

Psnr psnr(const Tensor& a, const Tensor& b, double max_value) {
  if (!a.same_shape(b)) throw ShapeMismatch("psnr inputs differ in shape");
  return psnr(a.values(), b.values(), max_value);
}

int match_timestep(const DiffusionSchedule& reference, int t_ref, const DiffusionSchedule& target) {
  const double goal = reference.alpha_bar(t_ref);
  const auto table = target.alpha_bars();
  int best = 0;
  double best_gap = std::abs(table[0] - goal);
  for (std::size_t t = 1; t < table.size(); ++t) {
    const double gap = std::abs(table[t] - goal);
    if (gap < best_gap) {
      best_gap = gap;
      best = static_cast<int>(t);
    }
  }
  return best;
}

int select_from_curve(const PsnrCurve& curve, double threshold_db) {
  int best = 0;
  for (const auto& p : curve.points) {
    if (p.mean.at_least(threshold_db)) best = std::max(best, p.t);
  }
  return best;
}

PsnrSelection select_by_psnr(const ScoreFunction& score, const DiffusionSchedule& schedule,
                             const Tensor& validation, const PsnrSelectionOptions& options) {
  if (options.t_grid.empty()) throw InvalidArgument("PSNR selection needs a non-empty t grid");
  if (validation.rows() == 0 || validation.empty()) throw InvalidArgument("PSNR selection needs validation samples");
  auto grid = options.t_grid;
  std::sort(grid.begin(), grid.end());
  if (std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
    throw InvalidArgument("PSNR t grid has duplicate entries");
  }

  const std::size_t n = options.samples_per_t == 0 ? validation.rows()
                                                    : std::min(options.samples_per_t, validation.rows());
  std::vector<std::uint64_t> dims = validation.dims();
  dims[0] = n;
  const auto first = validation.values().subspan(0, n * validation.row_size());
  const Tensor batch(dims, std::vector<float>(first.begin(), first.end()));

  PsnrSelection out;
  for (int t : grid) {
    const auto seed = derive_seed(options.seed, "psnr-t" + std::to_string(t));
    const Tensor rec = sanitize_batch(batch, t, schedule, score, seed, options.sanitize);
    PsnrPoint p;
    p.t = t;
    p.n = n;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t finite = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Psnr v = psnr(batch.row(i), rec.row(i), options.max_value);
      if (v.infinite) continue;
      sum += v.db;
      sum_sq += v.db * v.db;
      ++finite;
    }
    if (finite > 1) {
      const double mean = sum / static_cast<double>(finite);
      p.std_db = std::sqrt(std::max(0.0, (sum_sq - finite * mean * mean) / (finite - 1.0)));
    }
    // Any exact reconstruction drives the batch mean to +infinity.
    p.mean = finite < n ? Psnr::perfect() : Psnr{sum / static_cast<double>(finite), false};
    out.curve.points.push_back(p);
  }
  out.t_star = select_from_curve(out.curve, options.threshold_db);
  return out;
}

}  // namespace avatar
