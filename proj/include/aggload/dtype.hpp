// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace aggload {

enum class DType : std::uint8_t { BOOL, U8, I8, I16, U16, I32, U32, I64, U64, F16, BF16, F32, F64 };

inline constexpr std::array<DType, 13> kAllDTypes = {
    DType::BOOL, DType::U8,  DType::I8,  DType::I16, DType::U16,  DType::I32, DType::U32,
    DType::I64,  DType::U64, DType::F16, DType::BF16, DType::F32, DType::F64};

constexpr std::size_t size_bytes(DType t) noexcept {
  switch (t) {
    case DType::BOOL:
    case DType::U8:
    case DType::I8:
      return 1;
    case DType::I16:
    case DType::U16:
    case DType::F16:
    case DType::BF16:
      return 2;
    case DType::I32:
    case DType::U32:
    case DType::F32:
      return 4;
    case DType::I64:
    case DType::U64:
    case DType::F64:
      return 8;
  }
  return 1;
}

/// Element-access alignment. Equal to the element size.
constexpr std::size_t alignment(DType t) noexcept { return size_bytes(t); }

std::string_view to_string(DType t) noexcept;

/// Throws Error(UnknownDType) for tags outside the fixed set.
DType parse_dtype(std::string_view tag);

}  // namespace aggload
