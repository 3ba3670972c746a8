// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <utility>

#include "avatar/error.hpp"

namespace avatar {

std::uint64_t Tensor::element_count(std::span<const std::uint64_t> dims) {
  std::uint64_t count = 1;
  for (auto d : dims) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) {
      throw FormatError("tensor dimensions overflow a 64-bit element count");
    }
    count *= d;
  }
  return count;
}

Tensor::Tensor(std::vector<std::uint64_t> dims) : dims_(std::move(dims)) {
  values_.assign(static_cast<std::size_t>(element_count(dims_)), 0.0f);
}

Tensor::Tensor(std::vector<std::uint64_t> dims, std::vector<float> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (element_count(dims_) != values_.size()) {
    throw ShapeMismatch("tensor has " + std::to_string(values_.size()) +
                        " values but its dims require " + std::to_string(element_count(dims_)));
  }
}

std::size_t Tensor::rows() const noexcept {
  return dims_.empty() ? 1 : static_cast<std::size_t>(dims_.front());
}

std::size_t Tensor::row_size() const noexcept {
  if (dims_.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 1; i < dims_.size(); ++i) n *= static_cast<std::size_t>(dims_[i]);
  return n;
}

std::span<float> Tensor::row(std::size_t i) {
  const auto n = row_size();
  return std::span<float>(values_).subspan(i * n, n);
}

std::span<const float> Tensor::row(std::size_t i) const {
  const auto n = row_size();
  return std::span<const float>(values_).subspan(i * n, n);
}

bool Tensor::all_finite() const noexcept {
  for (float v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace avatar
