// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/device.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "aggload/file.hpp"
#include "test_util.hpp"

namespace aggload {
namespace {

using testing::TempDir;

bool all_zero(std::span<const std::byte> s) {
  return std::all_of(s.begin(), s.end(), [](std::byte b) { return b == std::byte{0}; });
}

TEST(DevicePool, AllocationsAreZeroedAndCounted) {
  auto pool = DevicePool::create(3);
  DeviceBuffer small = pool->allocate(1000);
  DeviceBuffer big = pool->allocate(2 << 20);
  EXPECT_EQ(small.device_id(), 3);
  EXPECT_TRUE(all_zero(small.bytes()));
  EXPECT_TRUE(all_zero(big.bytes()));
  EXPECT_EQ(pool->allocated_bytes(), 1000u + (2u << 20));
  EXPECT_EQ(pool->stats().allocations, 2u);
}

TEST(DevicePool, ReusesExactSizesAndRezeroes) {
  auto pool = DevicePool::create(0);
  {
    DeviceBuffer a = pool->allocate(4096);
    std::vector<std::byte> ones(4096, std::byte{1});
    a.write(0, ones);
  }
  EXPECT_EQ(pool->pooled_bytes(), 4096u);
  EXPECT_EQ(pool->allocated_bytes(), 0u);
  DeviceBuffer other = pool->allocate(4095);
  EXPECT_EQ(pool->stats().reuses, 0u);
  DeviceBuffer again = pool->allocate(4096);
  EXPECT_EQ(pool->stats().reuses, 1u);
  EXPECT_TRUE(all_zero(again.bytes()));
  EXPECT_EQ(pool->pooled_bytes(), 0u);
}

TEST(DevicePool, CapEvictsThenFails) {
  auto pool = DevicePool::create(0, 10000);
  { DeviceBuffer a = pool->allocate(6000); }
  EXPECT_EQ(pool->pooled_bytes(), 6000u);
  DeviceBuffer b = pool->allocate(7000);  // evicts the cached block
  EXPECT_EQ(pool->pooled_bytes(), 0u);
  EXPECT_AGG_ERROR(pool->allocate(4000), ErrorCode::OutOfMemory);
  EXPECT_EQ(pool->allocated_bytes(), 7000u);
}

TEST(DevicePool, EmptyBuffers) {
  auto pool = DevicePool::create(0);
  DeviceBuffer e = pool->allocate(0);
  EXPECT_TRUE(e);
  EXPECT_EQ(e.capacity(), 0u);
  EXPECT_EQ(pool->stats().allocations, 0u);
  e.release();
}

TEST(DeviceBuffer, BoundsChecks) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(16);
  std::vector<std::byte> four(4);
  EXPECT_NO_THROW(b.write(12, four));
  EXPECT_AGG_ERROR(b.write(13, four), ErrorCode::OutOfBoundsView);
  EXPECT_AGG_ERROR(b.read(17, std::span(four).first(0)), ErrorCode::OutOfBoundsView);
}

TEST(DeviceBuffer, ReleaseNeedsZeroRefcount) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(64);
  b.set_refcount(2);
  EXPECT_AGG_ERROR(b.release(), ErrorCode::BufferInUse);
  EXPECT_EQ(b.consume_key(), 1u);
  EXPECT_EQ(b.consume_key(), 0u);
  EXPECT_EQ(b.consume_key(), 0u);
  b.release();
  EXPECT_FALSE(b);
  EXPECT_EQ(pool->pooled_bytes(), 64u);
  EXPECT_AGG_ERROR(b.release(), ErrorCode::DoubleRelease);
}

TEST(DeviceBuffer, ReleaseWaitsForOtherHandles) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(64);
  DeviceBuffer view = b;
  b.release();
  EXPECT_EQ(pool->pooled_bytes(), 0u);
  EXPECT_TRUE(view.usable());
  EXPECT_AGG_ERROR(view.release(), ErrorCode::DoubleRelease);
  { DeviceBuffer gone = std::move(view); }
  EXPECT_EQ(pool->pooled_bytes(), 64u);
}

TEST(DeviceBuffer, ForcedReleaseInvalidatesOtherHandles) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(64);
  b.set_refcount(5);
  DeviceBuffer view = b;
  b.release(/*force=*/true);
  EXPECT_EQ(pool->pooled_bytes(), 64u);
  EXPECT_FALSE(view.usable());
  EXPECT_AGG_ERROR(view.bytes(), ErrorCode::UseAfterClose);
  { DeviceBuffer gone = std::move(view); }
  EXPECT_EQ(pool->pooled_bytes(), 64u);  // returned once only
}

TEST(DeviceBuffer, InvalidateIsIdempotent) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(64);
  DeviceBuffer copy = b;
  b.release();
  copy.invalidate();
  copy.invalidate();
  EXPECT_EQ(pool->pooled_bytes(), 64u);
  EXPECT_EQ(pool->allocated_bytes(), 0u);
}

TEST(DeviceBuffer, WeakHandles) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(8);
  auto weak = b.weak();
  EXPECT_TRUE(DeviceBuffer::from_weak(weak));
  b.release();
  EXPECT_FALSE(DeviceBuffer::from_weak(weak));
}

class TransferTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data_ = testing::iota_bytes(5000, 1);
    write_bytes(dir_ / "f.bin", data_);
  }
  TempDir dir_;
  std::vector<std::byte> data_;
};

TEST_F(TransferTest, HostStagesThroughSmallBounce) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(5000);
  File f(dir_ / "f.bin");
  std::vector<std::byte> bounce(7);
  transfer_from_file(b, 3, f, 10, 4000, DeviceBackend::host(), bounce);
  auto mem = b.bytes();
  EXPECT_TRUE(std::equal(mem.begin() + 3, mem.begin() + 4003, data_.begin() + 10));
  EXPECT_TRUE(all_zero(mem.first(3)));
}

TEST_F(TransferTest, DirectNeedsAlignment) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(5120);
  File f(dir_ / "f.bin");
  const auto direct = DeviceBackend::sim_direct();
  EXPECT_AGG_ERROR(transfer_from_file(b, 0, f, 100, 512, direct), ErrorCode::MisalignedDirectTransfer);
  EXPECT_AGG_ERROR(transfer_from_file(b, 8, f, 0, 512, direct), ErrorCode::MisalignedDirectTransfer);
  EXPECT_AGG_ERROR(transfer_from_file(b, 0, f, 0, 500, direct), ErrorCode::MisalignedDirectTransfer);
  // A short length is fine when it ends at end of file.
  transfer_from_file(b, 512, f, 4608, 392, direct);
  auto mem = b.bytes();
  EXPECT_TRUE(std::equal(mem.begin() + 512, mem.begin() + 904, data_.begin() + 4608));
}

TEST_F(TransferTest, RangeErrors) {
  auto pool = DevicePool::create(0);
  DeviceBuffer b = pool->allocate(100);
  File f(dir_ / "f.bin");
  EXPECT_AGG_ERROR(transfer_from_file(b, 0, f, 0, 101, DeviceBackend::host()), ErrorCode::OutOfBoundsView);
  EXPECT_AGG_ERROR(transfer_from_file(b, 0, f, 4950, 100, DeviceBackend::host()), ErrorCode::IoError);
}

TEST(Backend, Names) {
  EXPECT_EQ(parse_backend("simdirect"), BackendKind::SimDirect);
  EXPECT_EQ(to_string(BackendKind::Host), "host");
  EXPECT_AGG_ERROR(parse_backend("gds"), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace aggload
