// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "avatar/error.hpp"

namespace avatar {

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) { layout(); }

Mlp::Mlp(std::vector<std::size_t> widths, RngStream& rng) : widths_(std::move(widths)) {
  layout();
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) {
      params_[weight_offset_[l] + k] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
}

void Mlp::layout() {
  if (widths_.size() < 2) throw InvalidArgument("an MLP needs at least input and output widths");
  for (auto w : widths_) {
    if (w == 0) throw InvalidArgument("MLP layer widths must be positive");
  }
  std::size_t offset = 0;
  weight_offset_.clear();
  bias_offset_.clear();
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weight_offset_.push_back(offset);
    offset += widths_[l] * widths_[l + 1];
    bias_offset_.push_back(offset);
    offset += widths_[l + 1];
  }
  params_.assign(offset, 0.0f);
}

std::span<const float> Mlp::forward(std::span<const float> input, std::size_t batch, Workspace& ws) const {
  if (input.size() != batch * input_dim()) throw ShapeMismatch("MLP input size does not match batch x width");
  const std::size_t layers = widths_.size() - 1;
  ws.batch = batch;
  ws.activations.resize(layers + 1);
  ws.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const float* w = params_.data() + weight_offset_[l];
    const float* b = params_.data() + bias_offset_[l];
    const auto& x = ws.activations[l];
    auto& y = ws.activations[l + 1];
    y.resize(batch * out);
    const bool relu = l + 1 < layers;
    for (std::size_t n = 0; n < batch; ++n) {
      const float* xn = x.data() + n * in;
      float* yn = y.data() + n * out;
      for (std::size_t o = 0; o < out; ++o) {
        const float* wo = w + o * in;
        float acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xn[i];
        yn[o] = relu ? std::max(acc, 0.0f) : acc;
      }
    }
  }
  return ws.activations.back();
}

void Mlp::backward(const Workspace& ws, std::span<const float> grad_output, std::span<float> grad_params,
                   std::span<float> grad_input) const {
  const std::size_t layers = widths_.size() - 1;
  const std::size_t batch = ws.batch;
  if (grad_params.size() != params_.size()) throw ShapeMismatch("gradient buffer size mismatch");
  if (grad_output.size() != batch * output_dim()) throw ShapeMismatch("output gradient size mismatch");
  std::vector<float> grad(grad_output.begin(), grad_output.end());
  std::vector<float> grad_prev;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const float* w = params_.data() + weight_offset_[l];
    float* gw = grad_params.data() + weight_offset_[l];
    float* gb = grad_params.data() + bias_offset_[l];
    const auto& x = ws.activations[l];
    for (std::size_t n = 0; n < batch; ++n) {
      const float* gn = grad.data() + n * out;
      const float* xn = x.data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const float g = gn[o];
        if (g == 0.0f) continue;
        gb[o] += g;
        float* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += g * xn[i];
      }
    }
    if (l == 0 && grad_input.empty()) break;
    grad_prev.assign(batch * in, 0.0f);
    for (std::size_t n = 0; n < batch; ++n) {
      const float* gn = grad.data() + n * out;
      float* pn = grad_prev.data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const float g = gn[o];
        if (g == 0.0f) continue;
        const float* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) pn[i] += g * wo[i];
      }
    }
    if (l > 0) {
      // ReLU derivative of the hidden activation feeding this layer.
      const auto& h = ws.activations[l];
      for (std::size_t k = 0; k < grad_prev.size(); ++k) {
        if (h[k] <= 0.0f) grad_prev[k] = 0.0f;
      }
    }
    grad.swap(grad_prev);
  }
  if (!grad_input.empty()) {
    if (grad_input.size() != grad.size()) throw ShapeMismatch("input gradient size mismatch");
    std::copy(grad.begin(), grad.end(), grad_input.begin());
  }
}

bool Mlp::all_finite() const noexcept {
  return std::all_of(params_.begin(), params_.end(), [](float v) { return std::isfinite(v); });
}

void SgdMomentum::step(std::span<float> params, std::span<const float> grads, double lr) {
  const auto mom = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  const auto rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    velocity_[k] = mom * velocity_[k] + grads[k] + wd * params[k];
    params[k] -= rate * velocity_[k];
  }
}

void Adam::step(std::span<float> params, std::span<const float> grads, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
    params[k] -= static_cast<float>(lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_));
  }
}

double softmax_cross_entropy(std::span<const float> logits, std::span<const int> labels, std::size_t classes,
                             std::span<float> grad_logits) {
  const std::size_t batch = labels.size();
  if (logits.size() != batch * classes || grad_logits.size() != logits.size()) {
    throw ShapeMismatch("cross-entropy buffers do not match batch x classes");
  }
  double loss = 0.0;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* z = logits.data() + n * classes;
    float* g = grad_logits.data() + n * classes;
    const float zmax = *std::max_element(z, z + classes);
    double norm = 0.0;
    for (std::size_t k = 0; k < classes; ++k) norm += std::exp(static_cast<double>(z[k] - zmax));
    const auto y = static_cast<std::size_t>(labels[n]);
    loss += std::log(norm) - static_cast<double>(z[y] - zmax);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(z[k] - zmax)) / norm;
      g[k] = static_cast<float>(p - (k == y ? 1.0 : 0.0)) * inv_batch;
    }
  }
  return loss / static_cast<double>(batch);
}

}  // namespace avatar
