// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar {

// AVT1 tensor files:
//   bytes 0-3  "AVT1"
//   byte  4    version (1)
//   byte  5    dtype (0 = float32 little-endian)
//   byte  6    ndim
//   byte  7    zero
//   ndim x uint64 little-endian dims
//   row-major payload

inline constexpr std::uint8_t kAvt1Version = 1;
inline constexpr std::uint8_t kAvt1Float32 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
/// Throws FormatError on bad magic/version/dtype, trailing or missing bytes.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
void append_f32_le(std::vector<std::uint8_t>& out, float v);
std::uint32_t load_u32_le(const std::uint8_t* p) noexcept;
std::uint64_t load_u64_le(const std::uint8_t* p) noexcept;
float load_f32_le(const std::uint8_t* p) noexcept;

}  // namespace avatar
