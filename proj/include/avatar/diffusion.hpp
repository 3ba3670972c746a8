// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "avatar/rng.hpp"
#include "avatar/schedule.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

/// Evaluator of s(x, t), the score of the noisy data marginal at step t.
///
/// Implementations are evaluated concurrently from several threads and must
/// not mutate shared state. A sample is one leading-dimension row.
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;

  /// Per-sample dimension this score expects.
  virtual std::size_t dimension() const = 0;
  /// Writes s(x, t) into `out` (same length as `x`).
  virtual void evaluate_sample(std::span<const double> x, int t, std::span<double> out) const = 0;

  /// Batched evaluation; rows are evaluated independently of one another.
  Tensor evaluate(const Tensor& batch, int t) const;
};

enum class ForwardMode {
  kSingleStep,  ///< closed-form sqrt(abar) x0 + sqrt(1 - abar) eps
  kIterated,    ///< t applications of the one-step Markov kernel (testing only)
};

struct ForwardResult {
  Tensor x_t;
  /// Standardised total noise (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t); zeros at t = 0.
  Tensor noise;
};

/// Forward-diffuses every row of x0 to step t, drawing noise row by row from `rng`.
ForwardResult forward_diffuse(const Tensor& x0, const DiffusionSchedule& schedule, int t, RngStream& rng,
                              ForwardMode mode = ForwardMode::kSingleStep);

/// In-place single-sample forward diffusion in double precision.
void forward_diffuse_sample(std::span<double> x, const DiffusionSchedule& schedule, int t, RngStream& rng,
                            ForwardMode mode = ForwardMode::kSingleStep);

/// One reverse step x_t -> x_{t-1}:
///   (x_t + beta_t s(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) eps_t.
/// With last_step_noise == false the eps term is dropped at t == 1.
Tensor reverse_step(const Tensor& x_t, int t, const DiffusionSchedule& schedule, const ScoreFunction& score,
                    RngStream& rng, bool last_step_noise);

/// In-place single-sample reverse step. `scratch` must have the sample's length.
void reverse_step_sample(std::span<double> x, int t, const DiffusionSchedule& schedule,
                         const ScoreFunction& score, RngStream& rng, bool last_step_noise,
                         std::span<double> scratch);

/// Applies reverse steps t_star, ..., 1. t_star == 0 returns the input.
Tensor denoise_from(const Tensor& x_tstar, int t_star, const DiffusionSchedule& schedule,
                    const ScoreFunction& score, RngStream& rng, bool last_step_noise);

void denoise_sample(std::span<double> x, int t_star, const DiffusionSchedule& schedule,
                    const ScoreFunction& score, RngStream& rng, bool last_step_noise,
                    std::span<double> scratch);

/// How raw data relates to the space the score model was trained in.
enum class DataMapping {
  kIdentity,      ///< toy vectors: the score operates on raw values
  kUnitToSigned,  ///< images: [0, 1] -> [-1, 1] before diffusion, inverted afterwards
};

struct SanitizeOptions {
  DataMapping mapping = DataMapping::kIdentity;
  /// Output clamp in raw data space; nullopt disables clamping.
  std::optional<std::pair<float, float>> clamp = std::pair<float, float>{0.0f, 1.0f};
  bool last_step_noise = false;
  /// Worker threads; results do not depend on this value.
  unsigned threads = 1;
};

/// Forward-diffuses each row to t_star and denoises it back (one sanitisation pass).
///
/// Row i draws all of its noise from RngStream(base_seed, stream_ids[i]), which
/// defaults to i. Output is bitwise independent of the thread count, and
/// permuting rows together with their stream ids permutes the output.
Tensor sanitize_batch(const Tensor& batch, int t_star, const DiffusionSchedule& schedule,
                      const ScoreFunction& score, std::uint64_t base_seed, const SanitizeOptions& options = {},
                      std::span<const std::uint64_t> stream_ids = {});

/// Runs fn(i) for i in [0, n) over up to `threads` workers using static contiguous chunks.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace avatar
