// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// High-level loading API. One SafeTensorsFileLoader per rank thread:
//
//   SafeTensorsFileLoader loader(group, pool);
//   loader.add_filenames({{0, {"a.safetensors"}}, {1, {"b.safetensors"}}});
//   auto fb = loader.copy_files_to_device();
//   TensorView a0 = fb.get_tensor("a0");
//   TensorView b0 = fb.get_sharded("b0", 1);
//   fb.close();
//   loader.close();
//
// Every FilesBufferOnDevice call is a collective; all ranks must issue them
// in the same order.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aggload/collective.hpp"
#include "aggload/device.hpp"
#include "aggload/format.hpp"
#include "aggload/relocate.hpp"
#include "aggload/tensor_view.hpp"
#include "aggload/transfer.hpp"

namespace aggload {

using FileMapping = std::map<std::size_t, std::vector<std::filesystem::path>>;

/// Deals files to ranks in list order: file i goes to rank i % world_size.
FileMapping round_robin(const std::vector<std::filesystem::path>& files, std::size_t world_size);

struct LoaderConfig {
  BackendKind backend = BackendKind::Host;
  /// Release a file's buffer once every key in it has been requested.
  bool auto_release = true;
  std::size_t max_workers = kDefaultMaxWorkers;
  /// Fixed I/O team size; overrides the thread-count rule.
  std::optional<std::size_t> workers;
  std::size_t block_size = kDefaultBlockSize;
  std::size_t host_bounce_bytes = kDefaultHostBounceBytes;
  std::size_t device_bounce_bytes = kDefaultDeviceBounceBytes;
  /// Defaults to one node with the machine's CPUs and the loader's devices.
  std::optional<Topology> topology;
  std::uint64_t header_cap = kDefaultHeaderCap;
  ConversionMap conversions;
  /// Storage id of a file, for NUMA planning. Defaults to 0.
  std::function<int(const std::filesystem::path&)> storage_of;
};

namespace detail {

struct KeyEntry {
  std::size_t owner = 0;
  std::size_t file_id = 0;
  TensorMetadata meta;  ///< as stored in the file
  DType dtype = DType::U8;  ///< after conversion
};

struct LoadedFile {
  std::size_t file_id = 0;
  std::size_t rank = 0;
  std::filesystem::path path;
  ParsedFile parsed;
};

struct FilesState;

}  // namespace detail

class FilesBufferOnDevice {
 public:
  FilesBufferOnDevice();
  FilesBufferOnDevice(FilesBufferOnDevice&&) noexcept;
  FilesBufferOnDevice& operator=(FilesBufferOnDevice&&) noexcept;
  ~FilesBufferOnDevice();

  /// The whole tensor on every rank. Collective.
  TensorView get_tensor(const std::string& key);
  /// This rank's part of the tensor split along `dim`. Collective.
  TensorView get_sharded(const std::string& key, std::size_t dim);

  /// Force-releases everything this object handed out. Idempotent.
  void close() noexcept;
  bool closed() const noexcept;

  std::vector<std::string> keys() const;
  bool contains(const std::string& key) const;
  /// Metadata with the post-conversion dtype; offsets are those in the file.
  TensorMetadata metadata(const std::string& key) const;
  std::size_t owner(const std::string& key) const;

  struct LocalFile {
    std::size_t file_id = 0;
    std::filesystem::path path;
    DeviceBuffer buffer;
    std::vector<Landing> tensors;  ///< final placement in `buffer`
  };
  /// This rank's file buffers that are still held.
  std::vector<LocalFile> local_files() const;

  /// Sum of this rank's transfer buffer capacities.
  std::uint64_t device_bytes() const;
  /// File bytes this rank moved.
  std::uint64_t transferred_bytes() const;
  const PlanStats& stats() const;

 private:
  friend class SafeTensorsFileLoader;
  explicit FilesBufferOnDevice(std::unique_ptr<detail::FilesState> state);

  std::unique_ptr<detail::FilesState> state_;
};

class SafeTensorsFileLoader {
 public:
  SafeTensorsFileLoader(ProcessGroup group, std::shared_ptr<DevicePool> device, LoaderConfig config = {});
  /// Several devices per rank; files are placed on them round-robin and
  /// collectives deliver into the first one.
  SafeTensorsFileLoader(ProcessGroup group, DevicePools devices, LoaderConfig config = {});

  /// Parses and validates every listed header on every rank.
  void add_filenames(const FileMapping& mapping);
  /// Moves this rank's files onto its devices. Collective.
  FilesBufferOnDevice copy_files_to_device();
  void close() noexcept;

  std::size_t rank() const noexcept { return group_.rank(); }
  std::size_t world_size() const noexcept { return group_.world_size(); }
  const LoaderConfig& config() const noexcept { return config_; }
  /// Body bytes listed per rank so far.
  std::vector<std::uint64_t> rank_bytes() const;
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  void require_open() const;

  ProcessGroup group_;
  DevicePools devices_;
  LoaderConfig config_;
  std::vector<detail::LoadedFile> files_;
  std::map<std::string, detail::KeyEntry> keys_;
  std::vector<std::string> warnings_;
  bool closed_ = false;
};

}  // namespace aggload
