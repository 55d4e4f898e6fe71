// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/kernels.hpp"

#include <array>
#include <cstring>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/half.hpp"

namespace aggload {

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 16;

inline float load_as_f32(const std::byte* p, DType from) noexcept {
  std::uint16_t h;
  switch (from) {
    case DType::BF16:
      std::memcpy(&h, p, 2);
      return half::bf16_to_f32(h);
    case DType::F16:
      std::memcpy(&h, p, 2);
      return half::f16_to_f32(h);
    default: {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
  }
}

inline void store_from_f32(std::byte* p, DType to, float v) noexcept {
  if (to == DType::F16) {
    const std::uint16_t h = half::f32_to_f16(v);
    std::memcpy(p, &h, 2);
  } else {
    std::memcpy(p, &v, 4);
  }
}

// BF16 -> F16 for every bit pattern, built from the scalar path.
const std::array<std::uint16_t, 65536>& bf16_to_f16_table() {
  static const auto table = [] {
    std::array<std::uint16_t, 65536> t{};
    for (std::uint32_t i = 0; i < t.size(); ++i) {
      t[i] = half::f32_to_f16(half::bf16_to_f32(static_cast<std::uint16_t>(i)));
    }
    return t;
  }();
  return table;
}

// Typed loop for one (from, to) pair; the element loads and stores are
// unaligned-safe.
template <class In, class Out, class Fn>
void convert_loop(const std::byte* s, std::byte* d, std::int64_t n, Fn fn) {
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) {
    In x;
    std::memcpy(&x, s + i * static_cast<std::int64_t>(sizeof(In)), sizeof(In));
    const Out y = fn(x);
    std::memcpy(d + i * static_cast<std::int64_t>(sizeof(Out)), &y, sizeof(Out));
  }
}

void check_convert(std::span<const std::byte> src, DType from, std::span<std::byte> dst, DType to) {
  if (!conversion_supported(from, to)) {
    throw Error(ErrorCode::UnsupportedConversion,
                fmt::format("{} -> {}", to_string(from), to_string(to)));
  }
  const std::size_t n = src.size() / size_bytes(from);
  if (src.size() % size_bytes(from) != 0 || dst.size() != n * size_bytes(to)) {
    throw Error(ErrorCode::LengthMismatch, "conversion buffer sizes disagree");
  }
}

void check_slice(std::span<const std::byte> src, const SliceSpec& spec, std::span<std::byte> dst) {
  if (spec.dim >= spec.shape.size() || spec.start + spec.count > spec.shape[spec.dim]) {
    throw Error(ErrorCode::BadDim, "slice outside tensor shape");
  }
  if (dst.size() != spec.slice_bytes() ||
      src.size() < num_elements(spec.shape) * spec.element_size) {
    throw Error(ErrorCode::LengthMismatch, "slice buffer sizes disagree");
  }
}

}  // namespace

bool conversion_supported(DType from, DType to) noexcept {
  return (from == DType::BF16 && to == DType::F16) || (from == DType::F32 && to == DType::F16) ||
         (from == DType::F16 && to == DType::F32) || (from == DType::BF16 && to == DType::F32);
}

std::uint64_t SliceSpec::outer() const noexcept {
  std::uint64_t n = 1;
  for (std::size_t i = 0; i < dim && i < shape.size(); ++i) n *= shape[i];
  return n;
}

std::uint64_t SliceSpec::inner_bytes() const noexcept {
  std::uint64_t n = element_size;
  for (std::size_t i = dim + 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

namespace parallel {

void convert(std::span<const std::byte> src, DType from, std::span<std::byte> dst, DType to) {
  check_convert(src, from, dst, to);
  const auto n = static_cast<std::int64_t>(src.size() / size_bytes(from));
  const std::byte* s = src.data();
  std::byte* d = dst.data();
  if (from == DType::BF16 && to == DType::F16) {
    const auto& table = bf16_to_f16_table();
    convert_loop<std::uint16_t, std::uint16_t>(s, d, n, [&](std::uint16_t x) { return table[x]; });
  } else if (from == DType::F32) {
    convert_loop<float, std::uint16_t>(s, d, n, [](float x) { return half::f32_to_f16(x); });
  } else if (from == DType::F16) {
    convert_loop<std::uint16_t, float>(s, d, n, [](std::uint16_t x) { return half::f16_to_f32(x); });
  } else {
    convert_loop<std::uint16_t, float>(s, d, n, [](std::uint16_t x) { return half::bf16_to_f32(x); });
  }
}

void gather_slice(std::span<const std::byte> src, const SliceSpec& spec, std::span<std::byte> dst) {
  check_slice(src, spec, dst);
  const auto outer = static_cast<std::int64_t>(spec.outer());
  const std::uint64_t inner = spec.inner_bytes();
  const std::uint64_t run = spec.count * inner;
  const std::uint64_t stride = spec.shape[spec.dim] * inner;
  if (run == 0) return;
  const std::byte* s = src.data() + spec.start * inner;
  std::byte* d = dst.data();
#pragma omp parallel for schedule(static) if (outer * static_cast<std::int64_t>(run) >= kParallelThreshold && outer > 1)
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(d + o * run, s + o * stride, run);
  }
}

}  // namespace parallel

namespace serial {

void convert(std::span<const std::byte> src, DType from, std::span<std::byte> dst, DType to) {
  check_convert(src, from, dst, to);
  const std::size_t n = src.size() / size_bytes(from);
  for (std::size_t i = 0; i < n; ++i) {
    store_from_f32(dst.data() + i * size_bytes(to), to,
                   load_as_f32(src.data() + i * size_bytes(from), from));
  }
}

void gather_slice(std::span<const std::byte> src, const SliceSpec& spec, std::span<std::byte> dst) {
  check_slice(src, spec, dst);
  const std::uint64_t inner = spec.inner_bytes();
  const std::uint64_t run = spec.count * inner;
  const std::uint64_t stride = spec.shape[spec.dim] * inner;
  for (std::uint64_t o = 0; o < spec.outer(); ++o) {
    if (run != 0) std::memcpy(dst.data() + o * run, src.data() + o * stride + spec.start * inner, run);
  }
}

}  // namespace serial

}  // namespace aggload
