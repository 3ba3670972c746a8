// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace avatar {

/// Philox4x32-10 block: a counter-based bijection keyed by 64 bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Deterministic random stream keyed by (seed, stream id, draw index).
///
/// Draw i of a stream only depends on the key and i, so work can be spread
/// over threads without changing results as long as every logical unit of
/// work (a sample, a trajectory) owns its stream.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  /// Number of 32-bit words consumed so far.
  std::uint64_t position() const noexcept { return position_; }

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Standard normal via Box-Muller; both outputs of a pair are used.
  double normal() noexcept;
  void fill_normal(std::span<double> out) noexcept;
  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::uint64_t position_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  unsigned used_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent 64-bit seed for a named purpose ("attack", "sanitize", ...).
std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view name) noexcept;

/// Fisher-Yates shuffle of indices 0..n-1 driven by a stream.
template <typename Index>
void shuffle_indices(std::span<Index> idx, RngStream& rng) noexcept {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    auto tmp = idx[i - 1];
    idx[i - 1] = idx[j];
    idx[j] = tmp;
  }
}

}  // namespace avatar
