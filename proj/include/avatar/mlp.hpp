// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "avatar/rng.hpp"

namespace avatar {

/// Fully-connected ReLU network with a linear output layer.
///
/// All weights and biases live in one flat float vector (layer by layer:
/// weights row-major [out x in], then biases) so optimisers and checkpoints
/// can treat the model as a single parameter blob.
class Mlp {
 public:
  /// Activations retained by forward() for backward().
  struct Workspace {
    std::size_t batch = 0;
    std::vector<std::vector<float>> activations;  ///< [0] is the input
  };

  Mlp() = default;
  /// He-uniform initialisation drawn from `rng`.
  Mlp(std::vector<std::size_t> widths, RngStream& rng);
  /// Zero-initialised network, to be filled from a checkpoint.
  explicit Mlp(std::vector<std::size_t> widths);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t input_dim() const noexcept { return widths_.front(); }
  std::size_t output_dim() const noexcept { return widths_.back(); }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<float> parameters() noexcept { return params_; }
  std::span<const float> parameters() const noexcept { return params_; }

  /// Returns the [batch x output_dim] output; valid until the next call on `ws`.
  std::span<const float> forward(std::span<const float> input, std::size_t batch, Workspace& ws) const;

  /// Accumulates parameter gradients into grad_params (same length as parameters())
  /// and, if grad_input is non-empty, writes d loss / d input.
  void backward(const Workspace& ws, std::span<const float> grad_output, std::span<float> grad_params,
                std::span<float> grad_input = {}) const;

  bool all_finite() const noexcept;

 private:
  void layout();

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<float> params_;
};

/// SGD with momentum; L2 weight decay is folded into the gradient.
class SgdMomentum {
 public:
  SgdMomentum(std::size_t n, double momentum, double weight_decay)
      : velocity_(n, 0.0f), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<float> params, std::span<const float> grads, double lr);

 private:
  std::vector<float> velocity_;
  double momentum_;
  double weight_decay_;
};

class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<float> params, std::span<const float> grads, double lr);

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  double beta1_;
  double beta2_;
  double eps_;
  long step_ = 0;
};

/// Mean softmax cross-entropy over the batch; writes d loss / d logits into grad_logits.
double softmax_cross_entropy(std::span<const float> logits, std::span<const int> labels, std::size_t classes,
                             std::span<float> grad_logits);

}  // namespace avatar
