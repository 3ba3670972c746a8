// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "avatar/error.hpp"
#include "avatar/io.hpp"
#include "avatar/tensor.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

Tensor sample_tensor() {
  return Tensor({2, 3}, {1.0f, -0.0f, 0.5f, std::numeric_limits<float>::quiet_NaN(), 1e-30f, -7.25f});
}

std::vector<std::uint8_t> header(std::uint8_t ndim) {
  return {'A', 'V', 'T', '1', kAvt1Version, kAvt1Float32, ndim, 0};
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("byte layout") {
    const auto bytes = encode_tensor(sample_tensor());
    REQUIRE(bytes.size() == 8 + 2 * 8 + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "AVT1", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 0);
    CHECK(load_u64_le(bytes.data() + 8) == 2);
    CHECK(load_u64_le(bytes.data() + 16) == 3);
    CHECK(load_f32_le(bytes.data() + 24) == 1.0f);
    // 0.5f little-endian is 00 00 00 3f.
    CHECK(bytes[32] == 0x00);
    CHECK(bytes[35] == 0x3f);
  }

  TEST_CASE("round trips are bit exact") {
    const auto t = sample_tensor();
    CHECK(bitwise_equal(decode_tensor(encode_tensor(t)), t));
    const auto path = fs::temp_directory_path() / "avatar_test_io" / "t.avt";
    write_tensor(path, t);
    const auto back = read_tensor(path);
    CHECK(back.dims() == t.dims());
    CHECK(bitwise_equal(back, t));
  }

  TEST_CASE("empty tensors round trip") {
    const Tensor empty({0, 4});
    const auto bytes = encode_tensor(empty);
    CHECK(bytes.size() == 8 + 16);
    const auto back = decode_tensor(bytes);
    CHECK(back.dims() == std::vector<std::uint64_t>{0, 4});
    CHECK(back.size() == 0);
    const Tensor scalar({}, {3.0f});
    CHECK(bitwise_equal(decode_tensor(encode_tensor(scalar)), scalar));
  }

  TEST_CASE("malformed files are rejected") {
    const auto good = encode_tensor(sample_tensor());
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad = good;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad = good;
    bad[5] = 1;
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad = good;
    bad[7] = 1;
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad = good;
    bad.pop_back();
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad = good;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    bad.assign(good.begin(), good.begin() + 12);
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    CHECK_THROWS_AS(decode_tensor(std::vector<std::uint8_t>{'A', 'V'}), FormatError);
  }

  TEST_CASE("dimension overflow is a format error") {
    auto bytes = header(2);
    append_u64_le(bytes, std::uint64_t{1} << 40);
    append_u64_le(bytes, std::uint64_t{1} << 40);
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
    auto huge = header(1);
    append_u64_le(huge, std::uint64_t{1} << 62);
    CHECK_THROWS_AS(decode_tensor(huge), FormatError);
  }

  TEST_CASE("missing files raise") { CHECK_THROWS(read_tensor("/nonexistent/avatar/t.avt")); }

  TEST_CASE("sha256 known answers") {
    const std::string abc = "abc";
    CHECK(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }
}
