// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// aggload command-line driver. Exit codes: 0 success, 1 format error, 2 I/O
// error, 3 collective error, 4 any other failure (including a benchmark run
// whose output disagrees with the reference loader).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aggload/device.hpp"
#include "aggload/error.hpp"
#include "aggload/transfer.hpp"
#include "json.hpp"

namespace aggload::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFormat = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitCollective = 3;
inline constexpr int kExitOther = 4;

int exit_code(const Error& e) noexcept;

enum class LoaderKind { Aggregated, Naive };

struct BenchOptions {
  std::filesystem::path dir;
  BackendKind backend = BackendKind::Host;
  std::optional<std::size_t> workers;
  std::size_t max_workers = kDefaultMaxWorkers;
  std::size_t block_size = kDefaultBlockSize;
  std::size_t world_size = 1;
  std::size_t dim = 0;
  std::optional<Topology> topology;
  std::size_t repeat = 5;
  bool cold = false;
  LoaderKind loader = LoaderKind::Aggregated;
};

struct RankStats {
  std::size_t rank = 0;
  std::uint64_t bytes = 0;
  std::uint64_t device_bytes = 0;
  double transfer_seconds = 0.0;
  std::size_t workers = 0;
  std::size_t blocks = 0;
  std::size_t cross_numa_blocks = 0;
  std::size_t keys_owned = 0;
};

struct BenchReport {
  double elapsed_seconds = 0.0;  ///< median over the timed runs
  std::uint64_t bytes = 0;
  double throughput_bytes_per_sec = 0.0;
  std::size_t workers = 0;
  std::size_t block_size = 0;
  std::string backend;
  std::string loader;
  std::size_t world_size = 1;
  std::size_t dim = 0;
  std::vector<RankStats> per_rank;
  std::size_t cross_numa_blocks = 0;
  std::vector<double> runs;
  std::size_t sharded_keys = 0;
  std::size_t broadcast_keys = 0;
  bool cold = false;
  bool verified = false;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Safetensors files in `dir`, sorted by name.
std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir);

/// Throws VerificationFailed when the verification pass disagrees with
/// the reference loader.
BenchReport run_bench(const BenchOptions& options);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aggload::cli
