// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/tensor_view.hpp"

#include <cstring>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "aggload/error.hpp"
#include "aggload/half.hpp"

namespace aggload {

std::vector<std::uint64_t> compute_strides(const Shape& shape, DType dtype) {
  std::vector<std::uint64_t> strides(shape.size());
  std::uint64_t step = size_bytes(dtype);
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = step;
    step *= shape[i];
  }
  return strides;
}

double decode_element(const std::byte* p, DType dtype, std::uint64_t* bits) noexcept {
  std::uint64_t raw = 0;
  std::memcpy(&raw, p, size_bytes(dtype));
  if (bits) *bits = raw;
  switch (dtype) {
    case DType::BOOL: return raw != 0 ? 1.0 : 0.0;
    case DType::U8:
    case DType::U16:
    case DType::U32:
    case DType::U64:
      return static_cast<double>(raw);
    case DType::I8: return static_cast<std::int8_t>(raw);
    case DType::I16: return static_cast<std::int16_t>(raw);
    case DType::I32: return static_cast<std::int32_t>(raw);
    case DType::I64: return static_cast<double>(static_cast<std::int64_t>(raw));
    case DType::F16: return half::f16_to_f32(static_cast<std::uint16_t>(raw));
    case DType::BF16: return half::bf16_to_f32(static_cast<std::uint16_t>(raw));
    case DType::F32: {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    case DType::F64: {
      double d;
      std::memcpy(&d, p, 8);
      return d;
    }
  }
  return 0.0;
}

TensorView make_view(const DeviceBuffer& buf, std::uint64_t base_offset, DType dtype,
                     const Shape& shape) {
  if (!buf.usable()) throw Error(ErrorCode::UseAfterClose, "view over a released buffer");
  if (base_offset % alignment(dtype) != 0) {
    throw Error(ErrorCode::MisalignedView, fmt::format("offset {} is not {}-byte aligned for {}",
                                                       base_offset, alignment(dtype), to_string(dtype)));
  }
  const std::uint64_t extent = num_elements(shape) * size_bytes(dtype);
  if (base_offset > buf.capacity() || extent > buf.capacity() - base_offset) {
    throw Error(ErrorCode::OutOfBoundsView, fmt::format("[{}, {}) exceeds buffer capacity {}",
                                                        base_offset, base_offset + extent, buf.capacity()));
  }
  TensorView v;
  v.buffer_ = buf;
  v.base_offset_ = base_offset;
  v.dtype_ = dtype;
  v.shape_ = shape;
  v.strides_ = compute_strides(shape, dtype);
  return v;
}

TensorView make_view(const DeviceBuffer& buf, std::uint64_t base_offset, const TensorMetadata& meta) {
  return make_view(buf, base_offset, meta.dtype, meta.shape);
}

std::span<const std::byte> TensorView::data() const {
  return buffer_.bytes().subspan(base_offset_, byte_size());
}

Element TensorView::read_element(std::span<const std::uint64_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                fmt::format("index of rank {} for tensor of rank {}", index.size(), shape_.size()));
  }
  std::uint64_t offset = base_offset_;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) {
      throw Error(ErrorCode::IndexOutOfRange,
                  fmt::format("index {} out of range for shape {}", fmt::join(index, ","),
                              fmt::join(shape_, ",")));
    }
    offset += index[i] * strides_[i];
  }
  auto mem = buffer_.bytes();
  Element e;
  e.value = decode_element(mem.data() + offset, dtype_, &e.bits);
  return e;
}

nlohmann::json TensorView::descriptor() const {
  return {{"device_id", device_id()},
          {"offset", base_offset_},
          {"dtype", std::string(to_string(dtype_))},
          {"shape", shape_},
          {"strides", strides_}};
}

}  // namespace aggload
