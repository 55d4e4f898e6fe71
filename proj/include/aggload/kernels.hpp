// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Data-parallel inner loops. Every kernel has an OpenMP version (namespace
// `parallel`) and a plain loop (namespace `serial`) with identical results;
// the serial one is the reference the tests compare against.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "aggload/dtype.hpp"
#include "aggload/format.hpp"

namespace aggload {

/// Supported element conversions: BF16->F16, F32->F16, F16->F32, BF16->F32.
bool conversion_supported(DType from, DType to) noexcept;

/// Describes one slice of a row-major tensor along `dim`: indices
/// [start, start + count) of that dimension, all others complete.
struct SliceSpec {
  Shape shape;
  std::size_t dim = 0;
  std::uint64_t start = 0;
  std::uint64_t count = 0;
  std::size_t element_size = 1;

  std::uint64_t outer() const noexcept;        ///< product of dims before `dim`
  std::uint64_t inner_bytes() const noexcept;  ///< bytes of one index step along `dim`
  std::uint64_t slice_bytes() const noexcept { return outer() * count * inner_bytes(); }
};

namespace parallel {

/// dst receives src.size() / size_bytes(from) converted elements.
void convert(std::span<const std::byte> src, DType from, std::span<std::byte> dst, DType to);

/// Copies the slice into contiguous `dst` (dst.size() == spec.slice_bytes()).
void gather_slice(std::span<const std::byte> src, const SliceSpec& spec, std::span<std::byte> dst);

}  // namespace parallel

namespace serial {

void convert(std::span<const std::byte> src, DType from, std::span<std::byte> dst, DType to);
void gather_slice(std::span<const std::byte> src, const SliceSpec& spec, std::span<std::byte> dst);

}  // namespace serial

}  // namespace aggload
