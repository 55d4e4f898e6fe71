// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded safetensors corpora for tests and benchmarks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "aggload/format.hpp"

namespace aggload::corpus {

struct RandomOptions {
  std::size_t min_files = 1;
  std::size_t max_files = 4;
  std::size_t max_tensors_per_file = 6;
  std::size_t max_rank = 4;
  std::uint64_t max_dim = 9;
  std::uint64_t max_header_padding = 511;
};

/// Small files of mixed dtypes and ranks with random header padding. Tensor
/// names are unique across the corpus.
std::vector<std::filesystem::path> write_random(const std::filesystem::path& dir, std::uint64_t seed,
                                                const RandomOptions& options = {});

struct SizedOptions {
  std::size_t files = 1;
  std::uint64_t bytes_per_file = 1 << 20;
  DType dtype = DType::F16;
  std::uint64_t seed = 0;
  /// Exact header length. Without it the header is padded so that every
  /// file is exactly bytes_per_file long.
  std::optional<std::uint64_t> pad_header;
  std::size_t tensors_per_file = 8;
};

/// Files named shard-NNNNN.safetensors holding 2-D tensors of `dtype`.
std::vector<std::filesystem::path> write_sized(const std::filesystem::path& dir, const SizedOptions& options);

}  // namespace aggload::corpus
