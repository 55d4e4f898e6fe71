// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Aggregated file -> device transfers.
//
// Files are cut into large blocks that are dealt round-robin to a team of I/O
// workers. Each worker is tagged with the NUMA node closest to the storage it
// reads (falling back to the node of the target device). Tags are recorded in
// the plan; the workers are not pinned.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "aggload/device.hpp"
#include "json.hpp"

namespace aggload {

inline constexpr std::size_t kDefaultBlockSize = 160ull << 20;
inline constexpr std::size_t kDefaultMaxWorkers = 16;

struct NumaNode {
  int node_id = 0;
  std::size_t physical_cpus = 1;
  std::vector<int> device_ids;
  std::vector<int> storage_ids;
};

struct Topology {
  std::vector<NumaNode> nodes;

  /// One node owning `cpus` CPUs, devices 0..devices-1 and storage 0.
  static Topology single_node(std::size_t cpus, int devices = 1);
  /// {nodes: [{node_id, physical_cpus, device_ids, storage_ids}]}
  static Topology from_json(const nlohmann::json& doc);
  static Topology load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Throws InvalidArgument on duplicate node, device or storage ids.
  void check() const;
  const NumaNode& node(int node_id) const;
  std::optional<int> node_of_device(int device_id) const noexcept;
  std::optional<int> node_of_storage(int storage_id) const noexcept;
};

/// min(num_files, floor(0.8 * physical_cpus(node)), cap), at least 1.
std::size_t worker_count(std::size_t num_files, const Topology& topology, int node, std::size_t cap);

struct FileSpec {
  std::size_t file_id = 0;
  std::filesystem::path path;
  std::uint64_t size = 0;
  int storage_id = 0;
  /// First byte to transfer; snapped down to the backend's transfer alignment.
  std::uint64_t range_begin = 0;
  /// Buffer capacity floor, for relocation headroom.
  std::uint64_t min_capacity = 0;
};

struct PlannedFile {
  std::size_t file_id = 0;
  std::filesystem::path path;
  int storage_id = 0;
  int device_id = 0;
  std::uint64_t range_begin = 0;
  std::uint64_t range_end = 0;
  std::uint64_t capacity = 0;

  std::uint64_t length() const noexcept { return range_end - range_begin; }
};

struct TransferBlock {
  std::size_t file_id = 0;
  std::uint64_t file_off = 0;
  std::uint64_t len = 0;
  std::size_t buffer_id = 0;  ///< index into TransferPlan::files
  std::uint64_t dev_off = 0;
  std::size_t worker_id = 0;

  bool operator==(const TransferBlock&) const = default;
};

struct PlanOptions {
  std::size_t block_size = kDefaultBlockSize;
  std::size_t max_workers = kDefaultMaxWorkers;
  /// Bypasses the thread-count rule when set.
  std::optional<std::size_t> workers;
};

struct TransferPlan {
  std::vector<PlannedFile> files;  ///< sorted by (storage_id, file_id)
  std::vector<TransferBlock> blocks;
  std::size_t workers = 1;
  std::vector<int> affinity;  ///< worker -> NUMA node
  std::size_t cross_numa_blocks = 0;
  std::size_t block_size = kDefaultBlockSize;

  std::uint64_t total_bytes() const noexcept;
};

TransferPlan build_plan(std::vector<FileSpec> files, const DeviceBackend& backend,
                        const Topology& topology, std::span<const int> target_devices,
                        const PlanOptions& options = {});

struct PlanStats {
  std::uint64_t bytes = 0;
  double elapsed_seconds = 0.0;
  double throughput_bytes_per_sec = 0.0;
  std::size_t workers = 0;
  std::size_t blocks = 0;
  std::size_t cross_numa_blocks = 0;
  std::vector<std::uint64_t> per_worker_bytes;

  nlohmann::json to_json() const;
};

using DevicePools = std::map<int, std::shared_ptr<DevicePool>>;

struct TransferResult {
  std::map<std::size_t, DeviceBuffer> buffers;  ///< file_id -> buffer
  PlanStats stats;
};

/// Runs the plan on an OpenMP team of plan.workers threads. On any error all
/// buffers allocated for the plan are released and the error is rethrown.
TransferResult execute_plan(const TransferPlan& plan, const DeviceBackend& backend,
                            const DevicePools& pools);

namespace serial {
/// Same blocks, one thread, plan order.
TransferResult execute_plan(const TransferPlan& plan, const DeviceBackend& backend,
                            const DevicePools& pools);
}  // namespace serial

}  // namespace aggload
