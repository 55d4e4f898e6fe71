// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/error.hpp"

namespace aggload {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::HeaderTooLarge: return "HeaderTooLarge";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::UnknownDType: return "UnknownDType";
    case ErrorCode::NegativeShape: return "NegativeShape";
    case ErrorCode::OffsetOutOfBounds: return "OffsetOutOfBounds";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::OverlappingTensors: return "OverlappingTensors";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::OutOfMemory: return "OutOfMemory";
    case ErrorCode::MisalignedDirectTransfer: return "MisalignedDirectTransfer";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BounceTooSmall: return "BounceTooSmall";
    case ErrorCode::UnsupportedConversion: return "UnsupportedConversion";
    case ErrorCode::DoubleRelease: return "DoubleRelease";
    case ErrorCode::BufferInUse: return "BufferInUse";
    case ErrorCode::MisalignedView: return "MisalignedView";
    case ErrorCode::OutOfBoundsView: return "OutOfBoundsView";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UseAfterClose: return "UseAfterClose";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::EmptyFileList: return "EmptyFileList";
    case ErrorCode::DimTooSmall: return "DimTooSmall";
    case ErrorCode::BadDim: return "BadDim";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::RendezvousTimeout: return "RendezvousTimeout";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::StaleKey: return "StaleKey";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
  }
  return "Unknown";
}

ErrorCategory error_category(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::TruncatedHeader:
    case ErrorCode::HeaderTooLarge:
    case ErrorCode::MalformedJson:
    case ErrorCode::UnknownDType:
    case ErrorCode::NegativeShape:
    case ErrorCode::OffsetOutOfBounds:
    case ErrorCode::SizeMismatch:
    case ErrorCode::OverlappingTensors:
    case ErrorCode::LengthMismatch:
    case ErrorCode::DuplicateKey:
      return ErrorCategory::Format;
    case ErrorCode::IoError:
      return ErrorCategory::Io;
    case ErrorCode::RendezvousTimeout:
    case ErrorCode::SpecMismatch:
      return ErrorCategory::Collective;
    default:
      return ErrorCategory::Other;
  }
}

}  // namespace aggload
