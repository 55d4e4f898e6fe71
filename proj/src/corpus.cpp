// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <random>

#include <fmt/core.h>

#include "aggload/error.hpp"

namespace aggload::corpus {

namespace {

void fill_random(std::mt19937_64& rng, std::vector<std::byte>& bytes) {
  std::size_t i = 0;
  for (; i + 8 <= bytes.size(); i += 8) {
    const std::uint64_t v = rng();
    std::memcpy(bytes.data() + i, &v, 8);
  }
  if (i < bytes.size()) {
    const std::uint64_t v = rng();
    std::memcpy(bytes.data() + i, &v, bytes.size() - i);
  }
}

template <class T>
T pick(std::mt19937_64& rng, T lo, T hi) {
  return std::uniform_int_distribution<T>(lo, hi)(rng);
}

}  // namespace

std::vector<std::filesystem::path> write_random(const std::filesystem::path& dir, std::uint64_t seed,
                                                const RandomOptions& options) {
  std::mt19937_64 rng(seed);
  std::filesystem::create_directories(dir);
  const std::size_t nfiles = pick(rng, options.min_files, std::max(options.min_files, options.max_files));
  std::vector<std::filesystem::path> paths;
  for (std::size_t f = 0; f < nfiles; ++f) {
    std::vector<TensorData> tensors;
    const std::size_t n = pick<std::size_t>(rng, 1, std::max<std::size_t>(options.max_tensors_per_file, 1));
    for (std::size_t i = 0; i < n; ++i) {
      TensorData t;
      t.name = fmt::format("f{}.t{}", f, i);
      t.dtype = kAllDTypes[pick<std::size_t>(rng, 0, kAllDTypes.size() - 1)];
      const std::size_t rank = pick<std::size_t>(rng, 0, options.max_rank);
      for (std::size_t d = 0; d < rank; ++d) {
        // An occasional zero extent keeps empty tensors in the mix.
        t.shape.push_back(pick(rng, 0, 39) == 0 ? 0 : pick<std::uint64_t>(rng, 1, options.max_dim));
      }
      t.bytes.resize(num_elements(t.shape) * size_bytes(t.dtype));
      fill_random(rng, t.bytes);
      tensors.push_back(std::move(t));
    }
    std::optional<StringMap> metadata;
    if (pick(rng, 0, 2) == 0) metadata = StringMap{{"format", "pt"}, {"seed", std::to_string(seed)}};
    const std::uint64_t pad = layout_json_size(tensors, metadata) + pick<std::uint64_t>(rng, 0, options.max_header_padding);
    const auto path = dir / fmt::format("corpus-{}.safetensors", f);
    write_bytes(path, write_file(tensors, metadata, pad));
    paths.push_back(path);
  }
  return paths;
}

std::vector<std::filesystem::path> write_sized(const std::filesystem::path& dir, const SizedOptions& options) {
  constexpr std::uint64_t kHeaderReserve = 4096;
  const std::uint64_t es = size_bytes(options.dtype);
  const std::uint64_t header = options.pad_header.value_or(kHeaderReserve);
  if (options.bytes_per_file < 8 + header + 64 * es) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("{} bytes per file leaves no room for tensors", options.bytes_per_file));
  }
  const std::uint64_t budget = options.bytes_per_file - 8 - header;
  std::filesystem::create_directories(dir);

  std::vector<std::filesystem::path> paths;
  for (std::size_t f = 0; f < options.files; ++f) {
    std::mt19937_64 rng(options.seed * 1000003 + f);
    std::vector<TensorData> tensors;
    // Fewer tensors until the layout fits the requested header length.
    for (std::size_t k = std::max<std::size_t>(options.tensors_per_file, 1); k >= 1; --k) {
      tensors.clear();
      std::vector<double> weights(k);
      double sum = 0;
      for (auto& w : weights) sum += (w = std::uniform_real_distribution<double>(0.5, 1.5)(rng));
      std::uint64_t left = budget;
      for (std::size_t i = 0; i < k; ++i) {
        const std::uint64_t cols = 64ull << pick(rng, 0, 3);
        const std::uint64_t share = i + 1 == k ? left : static_cast<std::uint64_t>(budget * weights[i] / sum);
        const std::uint64_t rows = std::min(share, left) / (cols * es);
        if (rows == 0) continue;
        TensorData t;
        t.name = fmt::format("layer{}.weight{}", f, i);
        t.dtype = options.dtype;
        t.shape = {rows, cols};
        t.bytes.resize(rows * cols * es);
        left -= rows * cols * es;
        tensors.push_back(std::move(t));
      }
      if (!tensors.empty() && (!options.pad_header || layout_json_size(tensors) <= header)) break;
      if (k == 1) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("no tensor layout fits a {}-byte header", header));
      }
    }

    std::uint64_t body = 0;
    for (auto& t : tensors) {
      fill_random(rng, t.bytes);
      body += t.bytes.size();
    }
    const std::uint64_t pad = options.pad_header ? *options.pad_header : options.bytes_per_file - 8 - body;
    const auto path = dir / fmt::format("shard-{:05}.safetensors", f);
    write_bytes(path, write_file(tensors, std::nullopt, pad));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace aggload::corpus
