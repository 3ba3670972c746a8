// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "avatar/diffusion.hpp"
#include "avatar/mlp.hpp"
#include "avatar/schedule.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

/// Architecture of the noise-prediction network: input is the sample
/// concatenated with a sinusoidal embedding of t.
struct EpsModelConfig {
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t time_embedding = 32;
};

struct ScoreTrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 128;
  double learning_rate = 2e-3;
  double final_learning_rate = 1e-4;  ///< cosine decay target
  std::uint64_t seed = 0;
};

/// Sinusoidal timestep embedding of width `width` (sin half, cos half).
void timestep_embedding(int t, std::size_t width, std::span<float> out);

/// Trained epsilon-prediction network.
class EpsModel {
 public:
  EpsModel(std::size_t data_dim, EpsModelConfig config, RngStream& rng);
  EpsModel(std::size_t data_dim, EpsModelConfig config, Mlp network);

  std::size_t data_dim() const noexcept { return data_dim_; }
  const EpsModelConfig& config() const noexcept { return config_; }
  Mlp& network() noexcept { return net_; }
  const Mlp& network() const noexcept { return net_; }

  /// Writes the predicted noise for one sample.
  void predict(std::span<const double> x_t, int t, std::span<double> eps_hat) const;

 private:
  std::size_t data_dim_;
  EpsModelConfig config_;
  Mlp net_;
};

/// s = -eps_hat / sqrt(1 - abar_t). t = 0 is rejected.
Tensor eps_to_score(const Tensor& eps_hat, const DiffusionSchedule& schedule, int t);
void eps_to_score(std::span<const double> eps_hat, const DiffusionSchedule& schedule, int t, std::span<double> out);

/// ScoreFunction view of an EpsModel.
class LearnedScore final : public ScoreFunction {
 public:
  LearnedScore(std::shared_ptr<const EpsModel> model, std::shared_ptr<const DiffusionSchedule> schedule);
  std::size_t dimension() const override { return model_->data_dim(); }
  void evaluate_sample(std::span<const double> x, int t, std::span<double> out) const override;
  const EpsModel& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const EpsModel> model_;
  std::shared_ptr<const DiffusionSchedule> schedule_;
};

struct ScoreTrainingResult {
  std::shared_ptr<const EpsModel> model;
  std::shared_ptr<const LearnedScore> score;
  std::vector<double> losses;  ///< per-step minibatch loss
};

/// Denoising training: minimises E||eps - eps_hat(x_t, t)||^2 with t uniform
/// in 1..T and x_t from the closed-form forward process. Adam, cosine decay.
ScoreTrainingResult train_score_model(const Tensor& data, const DiffusionSchedule& schedule,
                                      const EpsModelConfig& arch, const ScoreTrainConfig& cfg);

/// Checkpoint: "AVCK", u32 version, u64 header length, JSON header, float32 LE parameters.
void save_checkpoint(const std::filesystem::path& path, const EpsModel& model, const DiffusionSchedule& schedule,
                     std::uint64_t seed);
/// Loads a checkpoint; throws FormatError on a schedule fingerprint mismatch.
std::shared_ptr<const EpsModel> load_checkpoint(const std::filesystem::path& path, const DiffusionSchedule& schedule);

}  // namespace avatar
