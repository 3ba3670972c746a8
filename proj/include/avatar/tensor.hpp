// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace avatar {

/// Dense row-major float32 tensor. The leading dimension indexes samples.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::uint64_t> dims);
  Tensor(std::vector<std::uint64_t> dims, std::vector<float> values);

  /// Product of dims; throws on 64-bit overflow.
  static std::uint64_t element_count(std::span<const std::uint64_t> dims);

  const std::vector<std::uint64_t>& dims() const noexcept { return dims_; }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  /// Leading dimension (1 for a 0-d tensor).
  std::size_t rows() const noexcept;
  /// Elements per leading-dimension slice.
  std::size_t row_size() const noexcept;
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::uint64_t> dims_;
  std::vector<float> values_;
};

/// Bitwise equality of values, which distinguishes -0.0f from 0.0f and compares NaN payloads.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace avatar
