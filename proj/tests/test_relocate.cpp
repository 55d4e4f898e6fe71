// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/relocate.hpp"

#include <gtest/gtest.h>

#include <random>

#include "aggload/kernels.hpp"
#include "test_util.hpp"

namespace aggload {
namespace {

struct Placed {
  std::string name;
  DType dtype;
  std::uint64_t offset;
  std::vector<std::byte> bytes;
};

// Lays tensors back to back from `start`, the way an odd header leaves them.
std::pair<DeviceBuffer, std::vector<Landing>> odd_layout(DevicePool& pool, const std::vector<Placed>& tensors,
                                                          std::uint64_t capacity) {
  DeviceBuffer buf = pool.allocate(capacity);
  std::vector<Landing> landings;
  for (const auto& t : tensors) {
    buf.write(t.offset, t.bytes);
    TensorMetadata m{t.name, t.dtype, {t.bytes.size() / size_bytes(t.dtype)}, 0, t.bytes.size()};
    landings.push_back({t.name, t.offset, m});
  }
  return {buf, landings};
}

std::vector<std::byte> at(const DeviceBuffer& b, std::uint64_t off, std::size_t n) {
  std::vector<std::byte> out(n);
  b.read(off, out);
  return out;
}

TEST(Relocate, AlignedLayoutIsUntouched) {
  auto pool = DevicePool::create(0);
  auto [buf, ls] = odd_layout(*pool, {{"a", DType::F32, 0, testing::iota_bytes(8)}, {"b", DType::U8, 8, testing::iota_bytes(3)}}, 11);
  const auto plan = align_fix(buf, ls, 1);  // bounce is not needed for a no-op
  EXPECT_EQ(plan[0].offset, 0u);
  EXPECT_EQ(plan[1].offset, 8u);
}

TEST(Relocate, OddOffsetsAreRepackedAligned) {
  auto pool = DevicePool::create(0);
  const auto a = testing::iota_bytes(16, 1), b = testing::iota_bytes(3, 2), c = testing::iota_bytes(24, 3);
  // Header of odd length: body starts at 5.
  auto [buf, ls] = odd_layout(*pool, {{"a", DType::F32, 5, a}, {"b", DType::U8, 21, b}, {"c", DType::F64, 24, c}}, 48);
  const auto plan = align_fix(buf, ls, 8);
  EXPECT_EQ(plan[0].offset, 0u);
  EXPECT_EQ(plan[1].offset, 16u);
  EXPECT_EQ(plan[2].offset, 24u);
  EXPECT_EQ(at(buf, 0, 16), a);
  EXPECT_EQ(at(buf, 16, 3), b);
  EXPECT_EQ(at(buf, 24, 24), c);
  for (const auto& r : plan) EXPECT_EQ(r.offset % alignment(r.dtype), 0u);
}

TEST(Relocate, IsIdempotent) {
  auto pool = DevicePool::create(0);
  auto [buf, ls] = odd_layout(*pool, {{"a", DType::F64, 3, testing::iota_bytes(40, 1)},
                                      {"b", DType::I16, 43, testing::iota_bytes(6, 2)}}, 64);
  const auto first = align_fix(buf, ls, 16);
  const auto snapshot = at(buf, 0, 64);
  std::vector<Landing> again = ls;
  for (std::size_t i = 0; i < again.size(); ++i) again[i].offset = first[i].offset;
  const auto second = align_fix(buf, again, 16);
  EXPECT_EQ(first, second);
  EXPECT_EQ(at(buf, 0, 64), snapshot);
}

TEST(Relocate, BounceMustHoldOneElement) {
  auto pool = DevicePool::create(0);
  auto [buf, ls] = odd_layout(*pool, {{"a", DType::F64, 1, testing::iota_bytes(16)}}, 24);
  EXPECT_AGG_ERROR(align_fix(buf, ls, 7), ErrorCode::BounceTooSmall);
  EXPECT_NO_THROW(align_fix(buf, ls, 8));
}

TEST(Relocate, CapacityMustHoldPlan) {
  auto pool = DevicePool::create(0);
  // U8 then F64: the F64 start rounds up past the buffer end.
  auto [buf, ls] = odd_layout(*pool, {{"u", DType::U8, 1, testing::iota_bytes(1)}, {"d", DType::F64, 2, testing::iota_bytes(8)}}, 10);
  const auto plan = plan_relocation(ls);
  EXPECT_EQ(relocation_extent(plan), 16u);
  EXPECT_AGG_ERROR(align_fix(buf, ls, 64), ErrorCode::OutOfBoundsView);
}

TEST(Relocate, ConvertsWhileRepacking) {
  auto pool = DevicePool::create(0);
  std::vector<std::uint16_t> bf = {0x3f80, 0x4000, 0xc040, 0x7f80};  // 1, 2, -3, inf
  std::vector<float> f = {0.5f, 65504.0f};
  const auto bf_bytes = testing::as_bytes(bf), f_bytes = testing::as_bytes(f);
  auto [buf, ls] = odd_layout(*pool, {{"bf", DType::BF16, 3, bf_bytes}, {"f", DType::F32, 11, f_bytes}}, 24);
  const auto plan = relocate(buf, ls, {{DType::BF16, DType::F16}, {DType::F32, DType::F16}}, 4);
  EXPECT_EQ(plan[0].dtype, DType::F16);
  EXPECT_EQ(plan[1].offset, 8u);
  std::vector<std::uint16_t> got(6);
  buf.read(0, std::as_writable_bytes(std::span(got)).first(8));
  buf.read(8, std::as_writable_bytes(std::span(got)).subspan(8, 4));
  EXPECT_EQ(got, (std::vector<std::uint16_t>{0x3c00, 0x4000, 0xc200, 0x7c00, 0x3800, 0x7bff}));
}

TEST(Relocate, RejectsUnsupportedConversion) {
  auto pool = DevicePool::create(0);
  auto [buf, ls] = odd_layout(*pool, {{"i", DType::I32, 0, testing::iota_bytes(8)}}, 8);
  EXPECT_AGG_ERROR(relocate(buf, ls, {{DType::I32, DType::F16}}), ErrorCode::UnsupportedConversion);
}

TEST(Relocate, ConvertDTypeInPlace) {
  auto pool = DevicePool::create(0);
  DeviceBuffer buf = pool->allocate(16);
  std::vector<std::uint16_t> h = {0x3c00, 0xbc00};
  buf.write(4, testing::as_bytes(h));
  TensorMetadata m{"h", DType::F16, {2}, 4, 8};
  const TensorMetadata out = convert_dtype(buf, m, DType::F32, 4);
  EXPECT_EQ(out.dtype, DType::F32);
  EXPECT_EQ(out.end, 12u);
  std::vector<float> f(2);
  buf.read(4, std::as_writable_bytes(std::span(f)));
  EXPECT_EQ(f, (std::vector<float>{1.0f, -1.0f}));
  TensorMetadata tail{"t", DType::F16, {2}, 12, 16};
  EXPECT_AGG_ERROR(convert_dtype(buf, tail, DType::F32), ErrorCode::OutOfBoundsView);
}

// Random mixed layouts with conversions against an out-of-place model.
TEST(Relocate, RandomLayoutsMatchModel) {
  std::mt19937_64 rng(5);
  const DType choices[] = {DType::U8, DType::I16, DType::BF16, DType::F16, DType::F32, DType::I64};
  const ConversionMap conv = {{DType::BF16, DType::F32}, {DType::F16, DType::F32}};
  for (int trial = 0; trial < 400; ++trial) {
    auto pool = DevicePool::create(0);
    std::vector<Placed> ts;
    std::uint64_t cursor = rng() % 600;
    const std::size_t n = 1 + rng() % 6;
    for (std::size_t i = 0; i < n; ++i) {
      const DType d = choices[rng() % 6];
      const std::size_t count = rng() % 40;
      ts.push_back({"t" + std::to_string(i), d, cursor, testing::iota_bytes(count * size_bytes(d), trial * 10 + i)});
      cursor += count * size_bytes(d);
    }
    const bool convert = trial % 2 == 1;
    std::vector<Landing> probe;
    for (const auto& t : ts) {
      probe.push_back({t.name, t.offset, {t.name, t.dtype, {t.bytes.size() / size_bytes(t.dtype)}, 0, t.bytes.size()}});
    }
    const auto expected_plan = plan_relocation(probe, convert ? conv : ConversionMap{});
    const std::uint64_t cap = std::max(cursor, relocation_extent(expected_plan));
    auto [buf, ls] = odd_layout(*pool, ts, cap);
    const std::size_t bounce = 8 + rng() % 64;
    const auto plan = relocate(buf, ls, convert ? conv : ConversionMap{}, bounce);
    ASSERT_EQ(plan, expected_plan);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      std::vector<std::byte> want = ts[i].bytes;
      if (plan[i].dtype != ts[i].dtype) {
        want.resize(plan[i].byte_size);
        serial::convert(ts[i].bytes, ts[i].dtype, want, plan[i].dtype);
      }
      ASSERT_EQ(plan[i].offset % alignment(plan[i].dtype), 0u);
      ASSERT_EQ(at(buf, plan[i].offset, plan[i].byte_size), want) << "trial " << trial << " tensor " << i;
    }
  }
}

}  // namespace
}  // namespace aggload
