// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "avatar/error.hpp"

namespace avatar {

namespace {

void check_step(const DiffusionSchedule& schedule, int t, int lo) {
  if (t < lo || t > schedule.steps()) {
    throw OutOfRange("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(schedule.steps()) + "]");
  }
}

void require_finite(const Tensor& x, const char* what) {
  if (!x.all_finite()) throw NumericalError(std::string(what) + " contains non-finite values");
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void store(std::span<const double> src, std::span<float> dst) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
}

}  // namespace

Tensor ScoreFunction::evaluate(const Tensor& batch, int t) const {
  if (batch.row_size() != dimension()) {
    throw ShapeMismatch("score expects samples of dimension " + std::to_string(dimension()) + ", got " +
                        std::to_string(batch.row_size()));
  }
  Tensor out(batch.dims());
  std::vector<double> x(batch.row_size()), s(batch.row_size());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    std::copy(batch.row(i).begin(), batch.row(i).end(), x.begin());
    evaluate_sample(x, t, s);
    store(s, out.row(i));
  }
  return out;
}

void forward_diffuse_sample(std::span<double> x, const DiffusionSchedule& schedule, int t, RngStream& rng,
                            ForwardMode mode) {
  check_step(schedule, t, 0);
  if (t == 0) return;
  if (mode == ForwardMode::kSingleStep) {
    const double a = schedule.alpha_bar(t);
    const double signal = std::sqrt(a);
    const double noise = std::sqrt(1.0 - a);
    for (auto& v : x) v = signal * v + noise * rng.normal();
    return;
  }
  for (int s = 1; s <= t; ++s) {
    const double b = schedule.beta(s);
    const double keep = std::sqrt(1.0 - b);
    const double noise = std::sqrt(b);
    for (auto& v : x) v = keep * v + noise * rng.normal();
  }
}

ForwardResult forward_diffuse(const Tensor& x0, const DiffusionSchedule& schedule, int t, RngStream& rng,
                              ForwardMode mode) {
  check_step(schedule, t, 0);
  require_finite(x0, "forward_diffuse input");
  ForwardResult result{x0, Tensor(x0.dims())};
  if (t == 0) return result;
  const double a = schedule.alpha_bar(t);
  const double signal = std::sqrt(a);
  const double noise = std::sqrt(1.0 - a);
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    auto x = to_double(x0.row(i));
    forward_diffuse_sample(x, schedule, t, rng, mode);
    store(x, result.x_t.row(i));
    auto eps = result.noise.row(i);
    auto src = x0.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) {
      eps[j] = static_cast<float>((x[j] - signal * static_cast<double>(src[j])) / noise);
    }
  }
  return result;
}

void reverse_step_sample(std::span<double> x, int t, const DiffusionSchedule& schedule,
                         const ScoreFunction& score, RngStream& rng, bool last_step_noise,
                         std::span<double> scratch) {
  const double b = schedule.beta(t);
  score.evaluate_sample(x, t, scratch);
  const double inv_keep = 1.0 / std::sqrt(1.0 - b);
  const bool add_noise = t > 1 || last_step_noise;
  const double noise = std::sqrt(b);
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(scratch[j])) {
      throw NumericalError("score returned a non-finite value at t = " + std::to_string(t));
    }
    x[j] = (x[j] + b * scratch[j]) * inv_keep;
    if (add_noise) x[j] += noise * rng.normal();
  }
}

Tensor reverse_step(const Tensor& x_t, int t, const DiffusionSchedule& schedule, const ScoreFunction& score,
                    RngStream& rng, bool last_step_noise) {
  check_step(schedule, t, 1);
  if (x_t.row_size() != score.dimension()) {
    throw ShapeMismatch("score dimension " + std::to_string(score.dimension()) + " does not match sample size " +
                        std::to_string(x_t.row_size()));
  }
  Tensor out(x_t.dims());
  std::vector<double> scratch(x_t.row_size());
  for (std::size_t i = 0; i < x_t.rows(); ++i) {
    auto x = to_double(x_t.row(i));
    reverse_step_sample(x, t, schedule, score, rng, last_step_noise, scratch);
    store(x, out.row(i));
  }
  return out;
}

void denoise_sample(std::span<double> x, int t_star, const DiffusionSchedule& schedule,
                    const ScoreFunction& score, RngStream& rng, bool last_step_noise,
                    std::span<double> scratch) {
  check_step(schedule, t_star, 0);
  for (int t = t_star; t >= 1; --t) reverse_step_sample(x, t, schedule, score, rng, last_step_noise, scratch);
}

Tensor denoise_from(const Tensor& x_tstar, int t_star, const DiffusionSchedule& schedule,
                    const ScoreFunction& score, RngStream& rng, bool last_step_noise) {
  check_step(schedule, t_star, 0);
  if (t_star == 0) return x_tstar;
  if (x_tstar.row_size() != score.dimension()) {
    throw ShapeMismatch("score dimension " + std::to_string(score.dimension()) + " does not match sample size " +
                        std::to_string(x_tstar.row_size()));
  }
  Tensor out(x_tstar.dims());
  std::vector<double> scratch(x_tstar.row_size());
  for (std::size_t i = 0; i < x_tstar.rows(); ++i) {
    auto x = to_double(x_tstar.row(i));
    denoise_sample(x, t_star, schedule, score, rng, last_step_noise, scratch);
    store(x, out.row(i));
  }
  return out;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Tensor sanitize_batch(const Tensor& batch, int t_star, const DiffusionSchedule& schedule,
                      const ScoreFunction& score, std::uint64_t base_seed, const SanitizeOptions& options,
                      std::span<const std::uint64_t> stream_ids) {
  check_step(schedule, t_star, 0);
  require_finite(batch, "sanitize_batch input");
  if (batch.empty()) return batch;
  if (!stream_ids.empty() && stream_ids.size() != batch.rows()) {
    throw ShapeMismatch("stream id count does not match the number of samples");
  }
  if (t_star > 0 && batch.row_size() != score.dimension()) {
    throw ShapeMismatch("score dimension " + std::to_string(score.dimension()) + " does not match sample size " +
                        std::to_string(batch.row_size()));
  }
  Tensor out(batch.dims());
  parallel_for(batch.rows(), options.threads, [&](std::size_t i) {
    const auto src = batch.row(i);
    auto dst = out.row(i);
    if (t_star == 0) {
      std::copy(src.begin(), src.end(), dst.begin());
    } else {
      std::vector<double> x(src.begin(), src.end());
      if (options.mapping == DataMapping::kUnitToSigned) {
        for (auto& v : x) v = 2.0 * v - 1.0;
      }
      std::vector<double> scratch(x.size());
      RngStream rng(base_seed, stream_ids.empty() ? i : stream_ids[i]);
      forward_diffuse_sample(x, schedule, t_star, rng);
      denoise_sample(x, t_star, schedule, score, rng, options.last_step_noise, scratch);
      if (options.mapping == DataMapping::kUnitToSigned) {
        for (auto& v : x) v = 0.5 * (v + 1.0);
      }
      store(x, dst);
    }
    if (options.clamp) {
      for (auto& v : dst) v = std::clamp(v, options.clamp->first, options.clamp->second);
    }
  });
  return out;
}

}  // namespace avatar
