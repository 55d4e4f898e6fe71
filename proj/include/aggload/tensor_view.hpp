// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aggload/device.hpp"
#include "aggload/format.hpp"
#include "json.hpp"

namespace aggload {

/// Row-major byte strides; the last dimension steps by the element size.
std::vector<std::uint64_t> compute_strides(const Shape& shape, DType dtype);

struct Element {
  double value = 0.0;
  std::uint64_t bits = 0;  ///< raw little-endian element bits, zero-extended
};

/// Zero-copy handle over a region of a device buffer. Holding a view keeps
/// the buffer's memory alive; a forced release (close) still invalidates it.
class TensorView {
 public:
  TensorView() = default;

  const DeviceBuffer& buffer() const noexcept { return buffer_; }
  std::uint64_t base_offset() const noexcept { return base_offset_; }
  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  const std::vector<std::uint64_t>& strides() const noexcept { return strides_; }
  std::uint64_t num_elements() const noexcept { return aggload::num_elements(shape_); }
  std::uint64_t byte_size() const noexcept { return num_elements() * size_bytes(dtype_); }
  int device_id() const noexcept { return buffer_.device_id(); }

  /// Throws UseAfterClose once the backing buffer was force-released.
  std::span<const std::byte> data() const;

  Element read_element(std::span<const std::uint64_t> index) const;
  Element read_element(std::initializer_list<std::uint64_t> index) const {
    return read_element(std::span<const std::uint64_t>(index.begin(), index.size()));
  }

  /// {device_id, offset, dtype, shape, strides}
  nlohmann::json descriptor() const;

 private:
  friend TensorView make_view(const DeviceBuffer&, std::uint64_t, const TensorMetadata&);
  friend TensorView make_view(const DeviceBuffer&, std::uint64_t, DType, const Shape&);

  DeviceBuffer buffer_;
  std::uint64_t base_offset_ = 0;
  DType dtype_ = DType::U8;
  Shape shape_;
  std::vector<std::uint64_t> strides_;
};

/// Uses meta's dtype and shape; meta's data_offsets are ignored.
TensorView make_view(const DeviceBuffer& buf, std::uint64_t base_offset, const TensorMetadata& meta);
TensorView make_view(const DeviceBuffer& buf, std::uint64_t base_offset, DType dtype, const Shape& shape);

double decode_element(const std::byte* p, DType dtype, std::uint64_t* bits = nullptr) noexcept;

}  // namespace aggload
