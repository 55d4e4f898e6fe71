// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/loader.hpp"

#include <gtest/gtest.h>

#include <atomic>

#include "aggload/reference.hpp"
#include "test_util.hpp"

namespace aggload {
namespace {

using namespace std::chrono_literals;
using testing::TempDir;

reference::HostTensor host(const TensorView& v) {
  auto d = v.data();
  return {v.dtype(), v.shape(), std::vector<std::byte>(d.begin(), d.end())};
}

class LoaderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    // Odd header padding leaves the bodies misaligned.
    a_ = testing::write_tensors(dir_ / "a.safetensors",
                                {testing::f32_tensor("a0", {2, 4}), {"a1", DType::U8, {3}, testing::iota_bytes(3)},
                                 testing::f32_tensor("a2", {5}, 100)},
                                301);
    b_ = testing::write_tensors(dir_ / "b.safetensors",
                                {testing::f32_tensor("b0", {3, 6}, 10), testing::f32_tensor("b1", {4}, -4)}, 203);
  }

  LoaderConfig config(bool auto_release = true) {
    LoaderConfig c;
    c.auto_release = auto_release;
    c.block_size = 64;
    c.workers = 2;
    return c;
  }

  TempDir dir_;
  std::filesystem::path a_, b_;
};

TEST_F(LoaderTest, SingleRankLoadsEverything) {
  auto pool = DevicePool::create(0);
  for (auto backend : {BackendKind::Host, BackendKind::SimDirect}) {
    auto cfg = config(false);
    cfg.backend = backend;
    SafeTensorsFileLoader loader(SingleGroup(), pool, cfg);
    loader.add_filenames({{0, {a_, b_}}});
    auto fb = loader.copy_files_to_device();
    EXPECT_EQ(fb.keys(), (std::vector<std::string>{"a0", "a1", "a2", "b0", "b1"}));
    for (const auto& key : fb.keys()) {
      const auto& path = key[0] == 'a' ? a_ : b_;
      EXPECT_EQ(host(fb.get_tensor(key)), reference::read_tensor(path, key)) << key;
    }
    for (const auto& f : fb.local_files()) {
      for (const auto& t : f.tensors) EXPECT_EQ(t.offset % alignment(t.meta.dtype), 0u) << t.name;
    }
    EXPECT_EQ(fb.transferred_bytes(), fb.stats().bytes);
    EXPECT_GE(fb.device_bytes(), fb.transferred_bytes());
    fb.close();
    loader.close();
  }
}

TEST_F(LoaderTest, TwoRanksShardColumns) {
  auto groups = ProcessGroup::create(2);
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(static_cast<int>(g.rank()));
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames(round_robin({a_, b_}, 2));
    auto fb = loader.copy_files_to_device();
    EXPECT_EQ(fb.owner("a0"), 0u);
    EXPECT_EQ(fb.owner("b0"), 1u);
    for (const char* key : {"a0", "b0"}) {
      const auto& path = key[0] == 'a' ? a_ : b_;
      const auto part = fb.get_sharded(key, 1);
      EXPECT_EQ(host(part), reference::shard(reference::read_tensor(path, key), 1, g.rank(), 2)) << key;
    }
    EXPECT_EQ(host(fb.get_tensor("b1")), reference::read_tensor(b_, "b1"));
    fb.close();
  });
}

TEST_F(LoaderTest, UnknownKeyRaisesOnEveryRank) {
  auto groups = ProcessGroup::create(3);
  std::atomic<int> raised{0};
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(0);
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames(round_robin({a_, b_}, 3));
    auto fb = loader.copy_files_to_device();
    try {
      fb.get_tensor("nope");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UnknownKey) ++raised;
    }
    // The group is still usable afterwards.
    EXPECT_EQ(host(fb.get_tensor("a2")), reference::read_tensor(a_, "a2"));
  });
  EXPECT_EQ(raised.load(), 3);
}

TEST_F(LoaderTest, SetupErrors) {
  auto pool = DevicePool::create(0);
  SafeTensorsFileLoader loader(SingleGroup(), pool);
  EXPECT_AGG_ERROR(loader.copy_files_to_device(), ErrorCode::EmptyFileList);
  EXPECT_AGG_ERROR(loader.add_filenames({{1, {a_}}}), ErrorCode::InvalidArgument);
  const auto dup = testing::write_tensors(dir_ / "dup.safetensors", {testing::f32_tensor("a1", {1})});
  EXPECT_AGG_ERROR(loader.add_filenames({{0, {a_, dup}}}), ErrorCode::DuplicateKey);
  loader.add_filenames({{0, {a_}}});
  EXPECT_AGG_ERROR(loader.add_filenames({{0, {dup}}}), ErrorCode::DuplicateKey);
  EXPECT_AGG_ERROR(loader.add_filenames({{0, {dir_ / "missing"}}}), ErrorCode::IoError);

  LoaderConfig bad;
  bad.conversions = {{DType::F32, DType::I32}};
  SafeTensorsFileLoader conv(SingleGroup(), pool, bad);
  EXPECT_AGG_ERROR(conv.add_filenames({{0, {a_}}}), ErrorCode::UnsupportedConversion);

  loader.close();
  EXPECT_AGG_ERROR(loader.copy_files_to_device(), ErrorCode::UseAfterClose);
}

TEST_F(LoaderTest, ReleasedKeysGoStale) {
  auto pool = DevicePool::create(0);
  SafeTensorsFileLoader loader(SingleGroup(), pool, config());
  loader.add_filenames({{0, {b_}}});
  auto fb = loader.copy_files_to_device();
  auto b0 = fb.get_tensor("b0");
  {
    auto b1 = fb.get_tensor("b1");  // last key: the file buffer is released
    EXPECT_TRUE(fb.local_files().empty());
    // Views still alive, so a second request is served from them.
    EXPECT_EQ(host(fb.get_tensor("b1")), reference::read_tensor(b_, "b1"));
  }
  b0 = TensorView();
  EXPECT_AGG_ERROR(fb.get_tensor("b1"), ErrorCode::StaleKey);
  EXPECT_EQ(pool->allocated_bytes(), 0u);
}

TEST_F(LoaderTest, StaleKeyAcrossRanks) {
  auto groups = ProcessGroup::create(2);
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(0);
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames({{1, {b_}}, {0, {a_}}});
    auto fb = loader.copy_files_to_device();
    fb.get_tensor("b0");
    { auto keep = fb.get_tensor("b1"); }
    EXPECT_AGG_ERROR(fb.get_tensor("b1"), ErrorCode::StaleKey);
    auto a0 = fb.get_tensor("a0");
    EXPECT_EQ(host(fb.get_tensor("a0")), host(a0));
  });
}

TEST_F(LoaderTest, AutoReleaseReturnsMemory) {
  auto pool = DevicePool::create(0);
  SafeTensorsFileLoader loader(SingleGroup(), pool, config());
  loader.add_filenames({{0, {a_, b_}}});
  auto fb = loader.copy_files_to_device();
  EXPECT_EQ(pool->allocated_bytes(), fb.device_bytes());
  for (const auto& key : fb.keys()) fb.get_tensor(key);
  EXPECT_EQ(pool->allocated_bytes(), 0u);
  EXPECT_EQ(pool->pooled_bytes(), fb.device_bytes());
}

TEST_F(LoaderTest, CloseInvalidatesViews) {
  auto pool = DevicePool::create(0);
  SafeTensorsFileLoader loader(SingleGroup(), pool, config(false));
  loader.add_filenames({{0, {a_}}});
  auto fb = loader.copy_files_to_device();
  auto a0 = fb.get_tensor("a0");
  auto part = fb.get_sharded("a0", 0);
  fb.close();
  fb.close();
  EXPECT_TRUE(fb.closed());
  EXPECT_AGG_ERROR(a0.read_element({0, 0}), ErrorCode::UseAfterClose);
  EXPECT_AGG_ERROR(part.data(), ErrorCode::UseAfterClose);
  EXPECT_AGG_ERROR(fb.get_tensor("a0"), ErrorCode::UseAfterClose);
  EXPECT_EQ(pool->allocated_bytes(), 0u);
}

TEST_F(LoaderTest, OrderingMismatchTimesOut) {
  auto groups = ProcessGroup::create(2, 300ms);
  std::atomic<int> timeouts{0};
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(0);
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames(round_robin({a_, b_}, 2));
    auto fb = loader.copy_files_to_device();
    try {
      fb.get_tensor(g.rank() == 0 ? "a0" : "b0");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::RendezvousTimeout) ++timeouts;
    }
  });
  EXPECT_EQ(timeouts.load(), 2);
}

TEST_F(LoaderTest, SkewWarning) {
  auto groups = ProcessGroup::create(2);
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(0);
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames({{0, {a_, b_}}});
    EXPECT_EQ(loader.warnings().size(), 1u);
    EXPECT_EQ(loader.rank_bytes()[1], 0u);
    auto fb = loader.copy_files_to_device();
    EXPECT_EQ(host(fb.get_tensor("b0")), reference::read_tensor(b_, "b0"));
  });
}

TEST_F(LoaderTest, ConvertsDTypes) {
  std::vector<std::uint16_t> bf = {0x3f80, 0xc000, 0x7f80};
  const auto c = testing::write_tensors(dir_ / "c.safetensors",
                                        {{"x", DType::BF16, {3}, testing::as_bytes(bf)}, testing::f32_tensor("y", {2}, 0.5f)},
                                        181);
  auto pool = DevicePool::create(0);
  LoaderConfig cfg = config(false);
  cfg.conversions = {{DType::BF16, DType::F16}, {DType::F32, DType::F16}};
  SafeTensorsFileLoader loader(SingleGroup(), pool, cfg);
  loader.add_filenames({{0, {c}}});
  auto fb = loader.copy_files_to_device();
  EXPECT_EQ(fb.metadata("x").dtype, DType::F16);
  auto x = fb.get_tensor("x");
  EXPECT_EQ(x.dtype(), DType::F16);
  EXPECT_EQ(x.read_element({2}).bits, 0x7c00u);
  EXPECT_EQ(host(fb.get_tensor("y")), reference::read_tensor(c, "y", cfg.conversions));
}

TEST_F(LoaderTest, FailureOnOneRankReachesAll) {
  auto groups = ProcessGroup::create(2);
  const auto doomed = dir_ / "doomed.safetensors";
  std::filesystem::copy_file(b_, doomed);
  std::atomic<int> raised{0};
  std::atomic<int> parsed{0};
  run_ranks(groups, [&](ProcessGroup& g) {
    auto pool = DevicePool::create(0);
    SafeTensorsFileLoader loader(g, pool, config());
    loader.add_filenames({{0, {a_}}, {1, {doomed}}});
    if (++parsed == 2) std::filesystem::resize_file(doomed, 40);
    barrier(g);
    try {
      loader.copy_files_to_device();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError) ++raised;
    }
    EXPECT_EQ(pool->allocated_bytes(), 0u);
  });
  EXPECT_EQ(raised.load(), 2);
}

TEST(RoundRobin, DealsInOrder) {
  const auto m = round_robin({"a", "b", "c", "d", "e"}, 2);
  EXPECT_EQ(m.at(0), (std::vector<std::filesystem::path>{"a", "c", "e"}));
  EXPECT_EQ(m.at(1), (std::vector<std::filesystem::path>{"b", "d"}));
  EXPECT_AGG_ERROR(round_robin({"a"}, 0), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace aggload
