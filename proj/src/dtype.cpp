// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/dtype.hpp"

#include <string>

#include "aggload/error.hpp"

namespace aggload {

std::string_view to_string(DType t) noexcept {
  switch (t) {
    case DType::BOOL: return "BOOL";
    case DType::U8: return "U8";
    case DType::I8: return "I8";
    case DType::I16: return "I16";
    case DType::U16: return "U16";
    case DType::I32: return "I32";
    case DType::U32: return "U32";
    case DType::I64: return "I64";
    case DType::U64: return "U64";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    case DType::F32: return "F32";
    case DType::F64: return "F64";
  }
  return "?";
}

DType parse_dtype(std::string_view tag) {
  for (DType t : kAllDTypes) {
    if (to_string(t) == tag) return t;
  }
  throw Error(ErrorCode::UnknownDType, "unknown dtype tag '" + std::string(tag) + "'");
}

}  // namespace aggload
