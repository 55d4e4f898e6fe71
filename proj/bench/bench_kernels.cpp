// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "aggload/corpus.hpp"
#include "aggload/kernels.hpp"
#include "aggload/transfer.hpp"

namespace fs = std::filesystem;
using namespace aggload;

namespace {

std::vector<std::byte> random_bytes(std::size_t n) {
  std::vector<std::byte> v(n);
  std::mt19937_64 rng(1);
  for (auto& b : v) b = static_cast<std::byte>(rng());
  return v;
}

template <bool Parallel>
void BM_ConvertBF16ToF16(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  auto src = random_bytes(n * 2);
  std::vector<std::byte> dst(n * 2);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::convert(src, DType::BF16, dst, DType::F16);
    } else {
      serial::convert(src, DType::BF16, dst, DType::F16);
    }
    benchmark::DoNotOptimize(dst.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * n * 2));
}

template <bool Parallel>
void BM_GatherSlice(benchmark::State& state) {
  // Column half of a [rows, 4096] F16 matrix.
  const std::uint64_t rows = static_cast<std::uint64_t>(state.range(0));
  const SliceSpec spec{{rows, 4096}, 1, 2048, 2048, 2};
  auto src = random_bytes(rows * 4096 * 2);
  std::vector<std::byte> dst(spec.slice_bytes());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::gather_slice(src, spec, dst);
    } else {
      serial::gather_slice(src, spec, dst);
    }
    benchmark::DoNotOptimize(dst.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * dst.size()));
}

struct Corpus {
  fs::path dir;
  std::vector<FileSpec> specs;
  std::uint64_t bytes = 0;

  Corpus() {
    dir = fs::temp_directory_path() / "aggload-bench-corpus";
    fs::remove_all(dir);
    corpus::SizedOptions o;
    o.files = 4;
    o.bytes_per_file = 32 << 20;
    const auto files = corpus::write_sized(dir, o);
    for (std::size_t i = 0; i < files.size(); ++i) {
      FileSpec s;
      s.file_id = i;
      s.path = files[i];
      s.size = fs::file_size(files[i]);
      specs.push_back(s);
      bytes += s.size;
    }
  }
  ~Corpus() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

const Corpus& corpus_files() {
  static const Corpus c;
  return c;
}

template <bool Parallel>
void BM_ExecutePlan(benchmark::State& state) {
  const auto& c = corpus_files();
  PlanOptions o;
  o.block_size = 8 << 20;
  o.workers = static_cast<std::size_t>(state.range(0));
  const int dev[] = {0};
  const auto backend = DeviceBackend::host();
  const auto plan = build_plan(c.specs, backend, Topology::single_node(64), dev, o);
  DevicePools pools{{0, DevicePool::create(0)}};
  for (auto _ : state) {
    auto result = Parallel ? execute_plan(plan, backend, pools) : serial::execute_plan(plan, backend, pools);
    benchmark::DoNotOptimize(result.buffers.size());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * c.bytes));
}

}  // namespace

BENCHMARK(BM_ConvertBF16ToF16<true>)->Arg(1 << 22)->Name("convert_bf16_f16/parallel");
BENCHMARK(BM_ConvertBF16ToF16<false>)->Arg(1 << 22)->Name("convert_bf16_f16/serial");
BENCHMARK(BM_GatherSlice<true>)->Arg(1024)->Name("gather_slice/parallel");
BENCHMARK(BM_GatherSlice<false>)->Arg(1024)->Name("gather_slice/serial");
BENCHMARK(BM_ExecutePlan<true>)->Arg(1)->Arg(4)->Name("execute_plan/parallel")->UseRealTime();
BENCHMARK(BM_ExecutePlan<false>)->Arg(1)->Name("execute_plan/serial")->UseRealTime();

BENCHMARK_MAIN();
