// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/kernels.hpp"

#include <gtest/gtest.h>

#include <random>

#include "aggload/half.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace aggload {
namespace {

std::vector<std::uint16_t> all_patterns() {
  std::vector<std::uint16_t> v(65536);
  for (std::uint32_t i = 0; i < 65536; ++i) v[i] = static_cast<std::uint16_t>(i);
  return v;
}

std::vector<std::uint16_t> convert16(const std::vector<std::uint16_t>& in, DType from, DType to, bool parallel) {
  std::vector<std::uint16_t> out(in.size());
  auto src = std::as_bytes(std::span(in));
  auto dst = std::as_writable_bytes(std::span(out));
  if (parallel) {
    parallel::convert(src, from, dst, to);
  } else {
    serial::convert(src, from, dst, to);
  }
  return out;
}

TEST(Half, BF16ToF16MatchesNearestSearch) {
  const auto in = all_patterns();
  const auto out = convert16(in, DType::BF16, DType::F16, true);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = oracle::bf16_value(in[i]);
    if (std::isnan(x)) {
      bad += !oracle::f16_is_nan(out[i]);
    } else {
      bad += out[i] != oracle::nearest_f16(x);
    }
  }
  EXPECT_EQ(bad, 0u);
}

TEST(Half, KnownValues) {
  EXPECT_EQ(half::f32_to_f16(1.0f), 0x3c00);
  EXPECT_EQ(half::f32_to_f16(-2.0f), 0xc000);
  EXPECT_EQ(half::f32_to_f16(65504.0f), 0x7bff);
  EXPECT_EQ(half::f32_to_f16(65520.0f), 0x7c00);
  EXPECT_EQ(half::f32_to_f16(65519.0f), 0x7bff);
  EXPECT_EQ(half::f32_to_f16(5.960464477539063e-08f), 0x0001);
  EXPECT_EQ(half::f32_to_f16(2.980232238769531e-08f), 0x0000);  // tie to even zero
  EXPECT_EQ(half::f32_to_f16(-0.0f), 0x8000);
  EXPECT_EQ(half::f16_to_f32(0x3555), 0.333251953125f);
  EXPECT_EQ(half::bf16_to_f32(0x3f80), 1.0f);
  EXPECT_EQ(half::f32_to_bf16(1.00390625f), 0x3f80);  // tie to even
  EXPECT_EQ(half::f32_to_bf16(1.01171875f), 0x3f82);
}

TEST(Half, F16RoundTripsThroughF32) {
  for (std::uint32_t i = 0; i < 65536; ++i) {
    const auto h = static_cast<std::uint16_t>(i);
    if (oracle::f16_is_nan(h)) continue;
    ASSERT_EQ(half::f32_to_f16(half::f16_to_f32(h)), h) << i;
    ASSERT_EQ(static_cast<double>(half::f16_to_f32(h)), oracle::f16_value(h)) << i;
  }
}

TEST(Half, F32ToF16MatchesNearestSearchOnSamples) {
  std::mt19937 rng(7);
  for (int i = 0; i < 200000; ++i) {
    std::uint32_t bits = rng();
    float f;
    std::memcpy(&f, &bits, 4);
    if (std::isnan(f)) continue;
    ASSERT_EQ(half::f32_to_f16(f), oracle::nearest_f16(f)) << bits;
  }
}

TEST(Convert, ParallelMatchesSerial) {
  const auto in = all_patterns();
  EXPECT_EQ(convert16(in, DType::BF16, DType::F16, true), convert16(in, DType::BF16, DType::F16, false));
  std::vector<float> wide(100000);
  std::mt19937 rng(3);
  for (auto& w : wide) w = std::uniform_real_distribution<float>(-70000, 70000)(rng);
  std::vector<std::uint16_t> a(wide.size()), b(wide.size());
  parallel::convert(std::as_bytes(std::span(wide)), DType::F32, std::as_writable_bytes(std::span(a)), DType::F16);
  serial::convert(std::as_bytes(std::span(wide)), DType::F32, std::as_writable_bytes(std::span(b)), DType::F16);
  EXPECT_EQ(a, b);
}

TEST(Convert, WideningIsExact) {
  const auto in = all_patterns();
  std::vector<float> out(in.size());
  parallel::convert(std::as_bytes(std::span(in)), DType::F16, std::as_writable_bytes(std::span(out)), DType::F32);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (oracle::f16_is_nan(in[i])) {
      EXPECT_TRUE(std::isnan(out[i]));
    } else {
      EXPECT_EQ(static_cast<double>(out[i]), oracle::f16_value(in[i]));
    }
  }
  parallel::convert(std::as_bytes(std::span(in)), DType::BF16, std::as_writable_bytes(std::span(out)), DType::F32);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = oracle::bf16_value(in[i]);
    if (!std::isnan(x)) EXPECT_EQ(static_cast<double>(out[i]), x);
  }
}

TEST(Convert, Errors) {
  std::vector<std::byte> a(8), b(8);
  EXPECT_FALSE(conversion_supported(DType::F16, DType::BF16));
  EXPECT_AGG_ERROR(parallel::convert(a, DType::I32, b, DType::F16), ErrorCode::UnsupportedConversion);
  EXPECT_AGG_ERROR(parallel::convert(a, DType::BF16, std::span(b).first(6), DType::F16), ErrorCode::LengthMismatch);
}

// Elementwise slice for comparison.
std::vector<std::byte> slice_oracle(const std::vector<std::byte>& src, const SliceSpec& s) {
  std::uint64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < s.dim; ++d) outer *= s.shape[d];
  for (std::size_t d = s.dim + 1; d < s.shape.size(); ++d) inner *= s.shape[d];
  std::vector<std::byte> out;
  for (std::uint64_t o = 0; o < outer; ++o) {
    for (std::uint64_t i = 0; i < s.count; ++i) {
      for (std::uint64_t k = 0; k < inner; ++k) {
        const std::uint64_t e = (o * s.shape[s.dim] + s.start + i) * inner + k;
        for (std::size_t b = 0; b < s.element_size; ++b) out.push_back(src[e * s.element_size + b]);
      }
    }
  }
  return out;
}

TEST(GatherSlice, MatchesElementwiseOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rank = 1 + rng() % 4;
    Shape shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(1 + rng() % 7);
    const std::size_t es = std::size_t{1} << (rng() % 4);
    const std::size_t dim = rng() % rank;
    const std::uint64_t start = rng() % shape[dim];
    const std::uint64_t count = 1 + rng() % (shape[dim] - start);
    const SliceSpec spec{shape, dim, start, count, es};
    const auto src = testing::iota_bytes(num_elements(shape) * es, trial);
    const auto expected = slice_oracle(src, spec);
    ASSERT_EQ(spec.slice_bytes(), expected.size());
    std::vector<std::byte> a(expected.size()), b(expected.size());
    parallel::gather_slice(src, spec, a);
    serial::gather_slice(src, spec, b);
    ASSERT_EQ(a, expected);
    ASSERT_EQ(b, expected);
  }
}

TEST(GatherSlice, ColumnSplitExample) {
  std::vector<float> src = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<float> out(4);
  SliceSpec spec{{2, 4}, 1, 2, 2, 4};
  parallel::gather_slice(std::as_bytes(std::span(src)), spec, std::as_writable_bytes(std::span(out)));
  EXPECT_EQ(out, (std::vector<float>{2, 3, 6, 7}));
}

TEST(GatherSlice, Errors) {
  std::vector<std::byte> src(16), dst(16);
  EXPECT_AGG_ERROR(parallel::gather_slice(src, SliceSpec{{4}, 1, 0, 1, 4}, dst), ErrorCode::BadDim);
  EXPECT_AGG_ERROR(parallel::gather_slice(src, SliceSpec{{4}, 0, 3, 2, 4}, dst), ErrorCode::BadDim);
  EXPECT_AGG_ERROR(parallel::gather_slice(src, SliceSpec{{4}, 0, 0, 2, 4}, dst), ErrorCode::LengthMismatch);
}

}  // namespace
}  // namespace aggload
