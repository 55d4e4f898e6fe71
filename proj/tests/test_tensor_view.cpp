// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/tensor_view.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace aggload {
namespace {

TEST(TensorView, StridesAreRowMajorBytes) {
  EXPECT_EQ(compute_strides({2, 3, 4}, DType::F32), (std::vector<std::uint64_t>{48, 16, 4}));
  EXPECT_EQ(compute_strides({}, DType::F64), (std::vector<std::uint64_t>{}));
  EXPECT_EQ(compute_strides({5}, DType::U8), (std::vector<std::uint64_t>{1}));
}

TEST(TensorView, ReadsElementsInPlace) {
  auto pool = DevicePool::create(2);
  DeviceBuffer buf = pool->allocate(64);
  std::vector<float> v = {0, 1, 2, 3, 4, 5};
  buf.write(8, testing::as_bytes(v));
  TensorView t = make_view(buf, 8, DType::F32, {2, 3});
  EXPECT_EQ(t.read_element({1, 2}).value, 5.0);
  EXPECT_EQ(t.read_element({0, 1}).value, 1.0);
  EXPECT_EQ(t.read_element({1, 0}).bits, 0x40400000u);
  EXPECT_EQ(t.byte_size(), 24u);
  EXPECT_EQ(t.data().data(), buf.bytes().data() + 8);  // no copy
  EXPECT_AGG_ERROR(t.read_element({2, 0}), ErrorCode::IndexOutOfRange);
  EXPECT_AGG_ERROR(t.read_element({0}), ErrorCode::IndexOutOfRange);
}

TEST(TensorView, DecodesEveryDType) {
  auto pool = DevicePool::create(0);
  DeviceBuffer buf = pool->allocate(16);
  std::vector<std::byte> raw(8, std::byte{0xff});
  buf.write(0, raw);
  EXPECT_EQ(make_view(buf, 0, DType::I8, {1}).read_element({0}).value, -1.0);
  EXPECT_EQ(make_view(buf, 0, DType::U16, {1}).read_element({0}).value, 65535.0);
  EXPECT_EQ(make_view(buf, 0, DType::I64, {1}).read_element({0}).value, -1.0);
  EXPECT_EQ(make_view(buf, 0, DType::BOOL, {1}).read_element({0}).value, 1.0);
  EXPECT_TRUE(std::isnan(make_view(buf, 0, DType::F16, {1}).read_element({0}).value));
  std::vector<std::uint16_t> bf = {0xc000};
  buf.write(8, testing::as_bytes(bf));
  EXPECT_EQ(make_view(buf, 8, DType::BF16, {}).read_element({}).value, -2.0);
}

TEST(TensorView, RejectsBadPlacement) {
  auto pool = DevicePool::create(0);
  DeviceBuffer buf = pool->allocate(32);
  EXPECT_AGG_ERROR(make_view(buf, 2, DType::F32, {1}), ErrorCode::MisalignedView);
  EXPECT_AGG_ERROR(make_view(buf, 24, DType::F64, {2}), ErrorCode::OutOfBoundsView);
  EXPECT_NO_THROW(make_view(buf, 32, DType::F64, {0}));
}

TEST(TensorView, ForcedReleaseInvalidates) {
  auto pool = DevicePool::create(0);
  DeviceBuffer buf = pool->allocate(32);
  TensorView t = make_view(buf, 0, DType::U8, {4});
  buf.release(/*force=*/true);
  EXPECT_AGG_ERROR(t.read_element({0}), ErrorCode::UseAfterClose);
  EXPECT_AGG_ERROR(t.data(), ErrorCode::UseAfterClose);
}

TEST(TensorView, ViewKeepsMemoryAlive) {
  auto pool = DevicePool::create(0);
  DeviceBuffer buf = pool->allocate(32);
  TensorView t = make_view(buf, 4, DType::I32, {2});
  buf.release();
  EXPECT_EQ(pool->pooled_bytes(), 0u);
  EXPECT_NO_THROW(t.read_element({1}));
  t = TensorView();
  EXPECT_EQ(pool->pooled_bytes(), 32u);
}

TEST(TensorView, Descriptor) {
  auto pool = DevicePool::create(7);
  DeviceBuffer buf = pool->allocate(64);
  const auto d = make_view(buf, 16, DType::BF16, {3, 2}).descriptor();
  EXPECT_EQ(d["device_id"], 7);
  EXPECT_EQ(d["offset"], 16);
  EXPECT_EQ(d["dtype"], "BF16");
  EXPECT_EQ(d["shape"], nlohmann::json({3, 2}));
  EXPECT_EQ(d["strides"], nlohmann::json({4, 2}));
}

}  // namespace
}  // namespace aggload
