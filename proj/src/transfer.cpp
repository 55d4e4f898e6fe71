// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/transfer.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/file.hpp"

namespace aggload {

// ---------------------------------------------------------------------------
// Topology

Topology Topology::single_node(std::size_t cpus, int devices) {
  NumaNode n;
  n.node_id = 0;
  n.physical_cpus = std::max<std::size_t>(cpus, 1);
  for (int d = 0; d < devices; ++d) n.device_ids.push_back(d);
  n.storage_ids = {0};
  return Topology{{n}};
}

Topology Topology::from_json(const nlohmann::json& doc) {
  Topology t;
  try {
    for (const auto& n : doc.at("nodes")) {
      NumaNode node;
      node.node_id = n.at("node_id").get<int>();
      node.physical_cpus = n.at("physical_cpus").get<std::size_t>();
      node.device_ids = n.value("device_ids", std::vector<int>{});
      node.storage_ids = n.value("storage_ids", std::vector<int>{});
      t.nodes.push_back(std::move(node));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("bad topology document: {}", e.what()));
  }
  t.check();
  return t;
}

Topology Topology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open topology {}", path.string()));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(doc);
}

nlohmann::json Topology::to_json() const {
  nlohmann::json nodes_json = nlohmann::json::array();
  for (const auto& n : nodes) {
    nodes_json.push_back({{"node_id", n.node_id},
                          {"physical_cpus", n.physical_cpus},
                          {"device_ids", n.device_ids},
                          {"storage_ids", n.storage_ids}});
  }
  return {{"nodes", nodes_json}};
}

void Topology::check() const {
  std::set<int> node_ids, devices, storages;
  for (const auto& n : nodes) {
    if (!node_ids.insert(n.node_id).second) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate node id {}", n.node_id));
    }
    for (int d : n.device_ids) {
      if (!devices.insert(d).second) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("device {} listed twice", d));
      }
    }
    for (int s : n.storage_ids) {
      if (!storages.insert(s).second) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("storage {} listed twice", s));
      }
    }
  }
}

const NumaNode& Topology::node(int node_id) const {
  for (const auto& n : nodes) {
    if (n.node_id == node_id) return n;
  }
  throw Error(ErrorCode::UnknownNode, fmt::format("no NUMA node {}", node_id));
}

std::optional<int> Topology::node_of_device(int device_id) const noexcept {
  for (const auto& n : nodes) {
    if (std::find(n.device_ids.begin(), n.device_ids.end(), device_id) != n.device_ids.end()) {
      return n.node_id;
    }
  }
  return std::nullopt;
}

std::optional<int> Topology::node_of_storage(int storage_id) const noexcept {
  for (const auto& n : nodes) {
    if (std::find(n.storage_ids.begin(), n.storage_ids.end(), storage_id) != n.storage_ids.end()) {
      return n.node_id;
    }
  }
  return std::nullopt;
}

std::size_t worker_count(std::size_t num_files, const Topology& topology, int node, std::size_t cap) {
  const std::size_t cpus = topology.node(node).physical_cpus;
  const std::size_t cpu_limit = cpus * 4 / 5;
  return std::max<std::size_t>(1, std::min({num_files, cpu_limit, cap}));
}

// ---------------------------------------------------------------------------
// Planning

std::uint64_t TransferPlan::total_bytes() const noexcept {
  std::uint64_t n = 0;
  for (const auto& f : files) n += f.length();
  return n;
}

TransferPlan build_plan(std::vector<FileSpec> files, const DeviceBackend& backend,
                        const Topology& topology, std::span<const int> target_devices,
                        const PlanOptions& options) {
  if (files.empty()) throw Error(ErrorCode::EmptyFileList, "no files to plan");
  if (options.block_size == 0) throw Error(ErrorCode::InvalidArgument, "block size must be positive");
  if (topology.nodes.empty()) throw Error(ErrorCode::UnknownNode, "topology has no nodes");

  std::sort(files.begin(), files.end(), [](const FileSpec& a, const FileSpec& b) {
    return std::tie(a.storage_id, a.file_id) < std::tie(b.storage_id, b.file_id);
  });

  const std::size_t align = std::max<std::size_t>(backend.transfer_alignment, 1);
  const std::uint64_t block = (options.block_size + align - 1) / align * align;
  const int default_device = target_devices.empty() ? 0 : target_devices.front();

  // The node that sizes the team: the first file's storage node, else the
  // node of the first target device, else the first node.
  int plan_node = topology.nodes.front().node_id;
  if (auto n = topology.node_of_storage(files.front().storage_id)) {
    plan_node = *n;
  } else if (auto d = topology.node_of_device(default_device)) {
    plan_node = *d;
  }

  TransferPlan plan;
  plan.block_size = block;
  plan.workers = options.workers ? std::max<std::size_t>(*options.workers, 1)
                                 : worker_count(files.size(), topology, plan_node, options.max_workers);
  plan.affinity.assign(plan.workers, -1);

  std::vector<int> preferred_node;
  std::size_t next_worker = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto& f = files[i];
    PlannedFile pf;
    pf.file_id = f.file_id;
    pf.path = f.path;
    pf.storage_id = f.storage_id;
    pf.device_id = target_devices.empty() ? 0 : target_devices[i % target_devices.size()];
    pf.range_begin = std::min(f.range_begin, f.size) / align * align;
    pf.range_end = f.size;
    pf.capacity = std::max(pf.length(), f.min_capacity);

    const auto storage_node = topology.node_of_storage(f.storage_id);
    const auto device_node = topology.node_of_device(pf.device_id);
    const int node = storage_node ? *storage_node : device_node ? *device_node : plan_node;

    for (std::uint64_t off = 0; off < pf.length(); off += block) {
      TransferBlock b;
      b.file_id = f.file_id;
      b.buffer_id = plan.files.size();
      b.file_off = pf.range_begin + off;
      b.dev_off = off;
      b.len = std::min<std::uint64_t>(block, pf.length() - off);
      b.worker_id = next_worker;
      next_worker = (next_worker + 1) % plan.workers;
      if (plan.affinity[b.worker_id] < 0) plan.affinity[b.worker_id] = node;

      const int worker_node = plan.affinity[b.worker_id];
      const bool storage_far = storage_node && *storage_node != worker_node;
      const bool device_far = device_node && *device_node != worker_node;
      if (storage_far || device_far) ++plan.cross_numa_blocks;
      plan.blocks.push_back(b);
    }
    plan.files.push_back(std::move(pf));
  }
  for (auto& a : plan.affinity) {
    if (a < 0) a = plan_node;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

nlohmann::json PlanStats::to_json() const {
  return {{"bytes", bytes},
          {"elapsed_seconds", elapsed_seconds},
          {"throughput_bytes_per_sec", throughput_bytes_per_sec},
          {"workers", workers},
          {"blocks", blocks},
          {"cross_numa_blocks", cross_numa_blocks},
          {"per_worker_bytes", per_worker_bytes}};
}

namespace {

using Clock = std::chrono::steady_clock;

struct Prepared {
  std::vector<DeviceBuffer> buffers;
  std::vector<File> files;

  void release_all() noexcept {
    for (auto& b : buffers) {
      if (!b) continue;
      try {
        b.release(/*force=*/true);
      } catch (...) {
      }
    }
  }
};

Prepared prepare(const TransferPlan& plan, const DeviceBackend& backend, const DevicePools& pools) {
  Prepared p;
  p.buffers.reserve(plan.files.size());
  try {
    for (const auto& f : plan.files) {
      auto it = pools.find(f.device_id);
      if (it == pools.end()) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("no pool for device {}", f.device_id));
      }
      p.buffers.push_back(it->second->allocate(backend, f.capacity));
    }
    p.files.reserve(plan.files.size());
    for (const auto& f : plan.files) p.files.emplace_back(f.path);
  } catch (...) {
    p.release_all();
    throw;
  }
  return p;
}

TransferResult finish(const TransferPlan& plan, Prepared& p, Clock::time_point start,
                      std::vector<std::uint64_t> per_worker) {
  TransferResult r;
  r.stats.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  r.stats.bytes = plan.total_bytes();
  r.stats.throughput_bytes_per_sec =
      r.stats.elapsed_seconds > 0 ? static_cast<double>(r.stats.bytes) / r.stats.elapsed_seconds : 0.0;
  r.stats.workers = plan.workers;
  r.stats.blocks = plan.blocks.size();
  r.stats.cross_numa_blocks = plan.cross_numa_blocks;
  r.stats.per_worker_bytes = std::move(per_worker);
  for (std::size_t i = 0; i < plan.files.size(); ++i) {
    r.buffers.emplace(plan.files[i].file_id, std::move(p.buffers[i]));
  }
  return r;
}

std::size_t bounce_size(const DeviceBackend& backend, std::uint64_t largest_block) {
  if (backend.kind != BackendKind::Host) return 0;
  return static_cast<std::size_t>(
      std::min<std::uint64_t>(std::max<std::size_t>(backend.bounce_buffer_bytes, 1), largest_block));
}

}  // namespace

TransferResult execute_plan(const TransferPlan& plan, const DeviceBackend& backend,
                            const DevicePools& pools) {
  const auto start = Clock::now();
  Prepared p = prepare(plan, backend, pools);

  std::vector<std::vector<std::size_t>> assigned(plan.workers);
  std::vector<std::uint64_t> largest(plan.workers, 0);
  for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
    const auto& b = plan.blocks[i];
    assigned[b.worker_id].push_back(i);
    largest[b.worker_id] = std::max(largest[b.worker_id], b.len);
  }
  std::vector<std::uint64_t> per_worker(plan.workers, 0);

  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  const int team = static_cast<int>(plan.workers);

#pragma omp parallel num_threads(team)
  {
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    const auto nthreads = static_cast<std::size_t>(omp_get_num_threads());
    // A short team (nested or limited OpenMP) still covers every worker.
    for (std::size_t w = tid; w < plan.workers; w += nthreads) {
      if (assigned[w].empty()) continue;
      try {
        const std::size_t nbounce = bounce_size(backend, largest[w]);
        std::unique_ptr<std::byte[]> bounce(nbounce ? new std::byte[nbounce] : nullptr);
        for (std::size_t bi : assigned[w]) {
          if (failed.load(std::memory_order_relaxed)) break;
          const auto& b = plan.blocks[bi];
          transfer_from_file(p.buffers[b.buffer_id], b.dev_off, p.files[b.buffer_id], b.file_off, b.len,
                             backend, std::span(bounce.get(), nbounce));
          per_worker[w] += b.len;
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed.store(true);
      }
    }
  }

  if (error) {
    p.release_all();
    std::rethrow_exception(error);
  }
  return finish(plan, p, start, std::move(per_worker));
}

namespace serial {

TransferResult execute_plan(const TransferPlan& plan, const DeviceBackend& backend,
                            const DevicePools& pools) {
  const auto start = Clock::now();
  Prepared p = prepare(plan, backend, pools);
  std::vector<std::uint64_t> per_worker(plan.workers, 0);
  std::uint64_t largest = 0;
  for (const auto& b : plan.blocks) largest = std::max(largest, b.len);
  std::vector<std::byte> bounce(bounce_size(backend, largest));
  try {
    for (const auto& b : plan.blocks) {
      transfer_from_file(p.buffers[b.buffer_id], b.dev_off, p.files[b.buffer_id], b.file_off, b.len,
                         backend, bounce);
      per_worker[b.worker_id] += b.len;
    }
  } catch (...) {
    p.release_all();
    throw;
  }
  return finish(plan, p, start, std::move(per_worker));
}

}  // namespace serial

}  // namespace aggload
