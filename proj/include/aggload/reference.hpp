// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Plain per-tensor loader: one stream read per tensor, elementwise slicing.
// Used as the correctness oracle and as the slow baseline in benchmarks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aggload/device.hpp"
#include "aggload/format.hpp"
#include "aggload/relocate.hpp"

namespace aggload::reference {

struct HostTensor {
  DType dtype = DType::U8;
  Shape shape;
  std::vector<std::byte> bytes;

  bool operator==(const HostTensor&) const = default;
};

/// Reads one tensor straight from the file, converting per `conversions`.
HostTensor read_tensor(const std::filesystem::path& path, const std::string& name,
                       const ConversionMap& conversions = {});

std::map<std::string, HostTensor> read_all(const std::filesystem::path& path,
                                           const ConversionMap& conversions = {});

/// Part `rank` of `world` along `dim`, larger parts first.
HostTensor shard(const HostTensor& t, std::size_t dim, std::size_t rank, std::size_t world);

struct NaiveStats {
  std::uint64_t bytes = 0;
  std::size_t tensors = 0;
};

/// Per tensor: open, seek, read into host memory, allocate on the device,
/// copy. Buffers are dropped right away.
NaiveStats naive_load(const std::vector<std::filesystem::path>& files, DevicePool& pool);

}  // namespace aggload::reference
