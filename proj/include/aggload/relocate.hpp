// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Post-transfer fixups inside a device buffer.
//
// A direct transfer starts at the 512-byte floor of the body, so with an odd
// header every tensor lands at an offset that may violate its element
// alignment. align_fix repacks the tensors in landing order, rounding each
// start up to its dtype alignment, and moves the bytes through a small
// staging buffer. The same pass optionally converts element types.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aggload/device.hpp"
#include "aggload/format.hpp"

namespace aggload {

struct Landing {
  std::string name;
  std::uint64_t offset = 0;  ///< where the tensor currently sits in the buffer
  TensorMetadata meta;
};

struct Relocation {
  std::string name;
  std::uint64_t offset = 0;
  DType dtype = DType::U8;
  std::uint64_t byte_size = 0;

  bool operator==(const Relocation&) const = default;
};

/// Source dtype -> target dtype, applied to every tensor of the source type.
using ConversionMap = std::map<DType, DType>;

/// Landing offset of a tensor when a file is read from `transfer_start`.
inline std::uint64_t landing_offset(const FileHeader& header, const TensorMetadata& t,
                                    std::uint64_t transfer_start) noexcept {
  return header.body_offset() + t.begin - transfer_start;
}

/// Target placement without touching any memory. Returned in input order.
/// When every tensor is aligned and no conversion applies, the result equals
/// the input placement.
std::vector<Relocation> plan_relocation(std::span<const Landing> landings,
                                        const ConversionMap& conversions = {});

/// Smallest buffer capacity that holds every planned target.
std::uint64_t relocation_extent(std::span<const Relocation> plan) noexcept;

std::vector<Relocation> align_fix(const DeviceBuffer& buf, std::span<const Landing> landings,
                                  std::size_t bounce = kDefaultDeviceBounceBytes);

/// align_fix plus element conversion in the same pass.
std::vector<Relocation> relocate(const DeviceBuffer& buf, std::span<const Landing> landings,
                                 const ConversionMap& conversions,
                                 std::size_t bounce = kDefaultDeviceBounceBytes);

/// Converts one tensor in place. `view_meta.begin` is the tensor's device
/// offset; the result describes the converted tensor at the same offset.
/// Widening writes past the old end, which must be free and in bounds.
TensorMetadata convert_dtype(const DeviceBuffer& buf, const TensorMetadata& view_meta, DType target,
                             std::size_t bounce = kDefaultDeviceBounceBytes);

}  // namespace aggload
