// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aggload {

enum class ErrorCode {
  // format
  TruncatedHeader,
  HeaderTooLarge,
  MalformedJson,
  UnknownDType,
  NegativeShape,
  OffsetOutOfBounds,
  SizeMismatch,
  OverlappingTensors,
  LengthMismatch,
  // device
  OutOfMemory,
  MisalignedDirectTransfer,
  IoError,
  BounceTooSmall,
  UnsupportedConversion,
  DoubleRelease,
  BufferInUse,
  // tensorview
  MisalignedView,
  OutOfBoundsView,
  IndexOutOfRange,
  UseAfterClose,
  // transfer
  UnknownNode,
  EmptyFileList,
  // collective
  DimTooSmall,
  BadDim,
  SpecMismatch,
  RendezvousTimeout,
  // loader
  DuplicateKey,
  UnknownKey,
  StaleKey,
  InvalidArgument,
  VerificationFailed,
};

std::string_view error_name(ErrorCode code) noexcept;

/// Coarse error family; drives the CLI exit code.
enum class ErrorCategory { Format, Io, Collective, Other };

ErrorCategory error_category(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace aggload
