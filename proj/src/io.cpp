// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "avatar/error.hpp"

namespace avatar {

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f32_le(std::vector<std::uint8_t>& out, float v) { append_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t load_u32_le(const std::uint8_t* p) noexcept {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t load_u64_le(const std::uint8_t* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float load_f32_le(const std::uint8_t* p) noexcept { return std::bit_cast<float>(load_u32_le(p)); }

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.ndim() > 255) throw FormatError("AVT1 supports at most 255 dimensions");
  std::vector<std::uint8_t> out{'A', 'V', 'T', '1', kAvt1Version, kAvt1Float32,
                                static_cast<std::uint8_t>(tensor.ndim()), 0};
  out.reserve(8 + 8 * tensor.ndim() + 4 * tensor.size());
  for (auto d : tensor.dims()) append_u64_le(out, d);
  for (float v : tensor.values()) append_f32_le(out, v);
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("AVT1 header truncated");
  if (std::memcmp(bytes.data(), "AVT1", 4) != 0) throw FormatError("not an AVT1 file (bad magic)");
  if (bytes[4] != kAvt1Version) throw FormatError("unsupported AVT1 version " + std::to_string(bytes[4]));
  if (bytes[5] != kAvt1Float32) throw FormatError("unsupported AVT1 dtype " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw FormatError("AVT1 padding byte is not zero");
  const std::size_t ndim = bytes[6];
  if (bytes.size() < 8 + 8 * ndim) throw FormatError("AVT1 dims truncated");
  std::vector<std::uint64_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) dims[i] = load_u64_le(bytes.data() + 8 + 8 * i);
  const std::uint64_t count = Tensor::element_count(dims);
  const std::size_t header = 8 + 8 * ndim;
  if (count > (bytes.size() - header) / 4) throw FormatError("AVT1 payload truncated");
  if (bytes.size() - header != count * 4) throw FormatError("AVT1 payload has trailing bytes");
  std::vector<float> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = load_f32_le(bytes.data() + header + 4 * i);
  return Tensor(std::move(dims), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file(path, encode_tensor(tensor));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace avatar
