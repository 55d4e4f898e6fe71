// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Reader, validator and fixture writer for the safetensors container:
//
//   [0, 8)        little-endian u64 N
//   [8, 8 + N)    UTF-8 JSON layout
//   [8 + N, ...)  body
//
// Each JSON entry other than "__metadata__" is
//   {"dtype": "F32", "shape": [2, 3], "data_offsets": [begin, end]}
// with offsets relative to the start of the body.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aggload/dtype.hpp"

namespace aggload {

inline constexpr std::uint64_t kDefaultHeaderCap = 100ull * 1000 * 1000;
inline constexpr std::string_view kMetadataKey = "__metadata__";

using Shape = std::vector<std::uint64_t>;

std::uint64_t num_elements(const Shape& shape) noexcept;

struct TensorMetadata {
  std::string name;
  DType dtype = DType::U8;
  Shape shape;
  std::uint64_t begin = 0;  ///< data_offsets[0]
  std::uint64_t end = 0;    ///< data_offsets[1]

  std::uint64_t num_elements() const noexcept { return aggload::num_elements(shape); }
  std::uint64_t byte_size() const noexcept { return end - begin; }

  bool operator==(const TensorMetadata&) const = default;
};

using StringMap = std::map<std::string, std::string>;

struct FileHeader {
  std::uint64_t header_len = 0;
  std::vector<TensorMetadata> tensors;  ///< in document order
  std::optional<StringMap> metadata;

  std::uint64_t body_offset() const noexcept { return 8 + header_len; }
  const TensorMetadata* find(std::string_view name) const noexcept;
};

/// Parses the length prefix and JSON layout. `prefix` must hold at least the
/// first 8 + N bytes of the file; the body is not needed.
FileHeader parse_header(std::span<const std::byte> prefix,
                        std::uint64_t header_cap = kDefaultHeaderCap);

/// Checks every tensor's byte range against a body of `file_size - body_offset`
/// bytes. Gaps are allowed, overlap is not.
void validate(const FileHeader& header, std::uint64_t file_size);

/// Reads and parses the header of a file on disk. Does not validate.
struct ParsedFile {
  FileHeader header;
  std::uint64_t file_size = 0;
};
/// Reads, parses and validates the header of a file on disk.
ParsedFile read_header(const std::filesystem::path& path,
                       std::uint64_t header_cap = kDefaultHeaderCap);

struct TensorData {
  std::string name;
  DType dtype = DType::U8;
  Shape shape;
  std::vector<std::byte> bytes;
};

/// Serializes tensors packed contiguously in the given order. With
/// `pad_header_to`, the JSON is padded with trailing spaces to exactly that
/// many bytes.
std::vector<std::byte> write_file(const std::vector<TensorData>& tensors,
                                  const std::optional<StringMap>& metadata = std::nullopt,
                                  std::optional<std::uint64_t> pad_header_to = std::nullopt);

/// Length of the JSON layout write_file would emit before padding.
std::uint64_t layout_json_size(const std::vector<TensorData>& tensors,
                               const std::optional<StringMap>& metadata = std::nullopt);

void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace aggload
