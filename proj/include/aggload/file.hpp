// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace aggload {

/// Read-only POSIX file handle. pread is positionless, so one handle may be
/// shared by concurrent readers.
class File {
 public:
  File() = default;
  explicit File(const std::filesystem::path& path);
  ~File();

  File(File&& other) noexcept;
  File& operator=(File&& other) noexcept;
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  bool is_open() const noexcept { return fd_ >= 0; }
  std::uint64_t size() const noexcept { return size_; }
  const std::string& path() const noexcept { return path_; }

  /// Reads exactly out.size() bytes at `offset`; IoError on short read.
  void pread_exact(std::uint64_t offset, std::span<std::byte> out) const;

  /// Drops cached pages for this file (best effort).
  void drop_cache() const noexcept;

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
  std::string path_;
};

}  // namespace aggload
