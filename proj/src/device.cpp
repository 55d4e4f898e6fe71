// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/device.hpp"

#include <sys/mman.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/file.hpp"

namespace aggload {

namespace {

constexpr std::size_t kPageSize = 4096;
constexpr std::size_t kMmapThreshold = 1ull << 20;

detail::Block system_alloc(std::size_t size) {
  detail::Block b;
  b.size = size;
  if (size >= kMmapThreshold) {
    void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    if (p == MAP_FAILED) return {};
    b.data = static_cast<std::byte*>(p);
    b.mapped = true;
  } else {
    const std::size_t rounded = (size + kPageSize - 1) / kPageSize * kPageSize;
    void* p = std::aligned_alloc(kPageSize, rounded);
    if (p == nullptr) return {};
    std::memset(p, 0, size);
    b.data = static_cast<std::byte*>(p);
  }
  return b;
}

void system_free(detail::Block& b) noexcept {
  if (b.data == nullptr) return;
  if (b.mapped) {
    ::munmap(b.data, b.size);
  } else {
    std::free(b.data);
  }
  b.data = nullptr;
}

}  // namespace

std::string_view to_string(BackendKind kind) noexcept {
  return kind == BackendKind::Host ? "host" : "simdirect";
}

BackendKind parse_backend(std::string_view name) {
  if (name == "host") return BackendKind::Host;
  if (name == "simdirect") return BackendKind::SimDirect;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown backend '{}'", name));
}

detail::BufferState::~BufferState() {
  if (!invalidated.load() && pool) pool->give_back(block);
}

// ---------------------------------------------------------------------------
// DeviceBuffer

int DeviceBuffer::device_id() const noexcept {
  return state_ && state_->pool ? state_->pool->device_id() : -1;
}

std::span<std::byte> DeviceBuffer::bytes() const {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty buffer handle");
  if (state_->invalidated.load()) throw Error(ErrorCode::UseAfterClose, "buffer was released");
  return {state_->block.data, state_->block.size};
}

void DeviceBuffer::require_range(std::size_t offset, std::size_t len) const {
  if (offset > capacity() || len > capacity() - offset) {
    throw Error(ErrorCode::OutOfBoundsView,
                fmt::format("range [{}, {}) exceeds buffer capacity {}", offset, offset + len,
                            capacity()));
  }
}

void DeviceBuffer::write(std::size_t offset, std::span<const std::byte> src) const {
  auto mem = bytes();
  require_range(offset, src.size());
  if (!src.empty()) std::memcpy(mem.data() + offset, src.data(), src.size());
}

void DeviceBuffer::read(std::size_t offset, std::span<std::byte> dst) const {
  auto mem = bytes();
  require_range(offset, dst.size());
  if (!dst.empty()) std::memcpy(dst.data(), mem.data() + offset, dst.size());
}

void DeviceBuffer::set_refcount(std::size_t n) const {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty buffer handle");
  state_->refcount.store(n);
}

std::size_t DeviceBuffer::consume_key() const {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty buffer handle");
  std::size_t cur = state_->refcount.load();
  while (cur > 0 && !state_->refcount.compare_exchange_weak(cur, cur - 1)) {
  }
  return cur == 0 ? 0 : cur - 1;
}

void DeviceBuffer::release(bool force) {
  if (!state_ || state_->release_requested.exchange(true)) {
    state_.reset();
    throw Error(ErrorCode::DoubleRelease, "buffer already released");
  }
  if (!force && state_->refcount.load() != 0) {
    state_->release_requested.store(false);
    throw Error(ErrorCode::BufferInUse,
                fmt::format("{} tensor keys still unconsumed", state_->refcount.load()));
  }
  if (force && !state_->invalidated.exchange(true)) {
    state_->pool->give_back(state_->block);
  }
  state_.reset();
}

void DeviceBuffer::invalidate() const noexcept {
  if (state_ && !state_->invalidated.exchange(true) && state_->pool) state_->pool->give_back(state_->block);
}

DeviceBuffer DeviceBuffer::from_weak(const std::weak_ptr<detail::BufferState>& weak) {
  return DeviceBuffer(weak.lock());
}

// ---------------------------------------------------------------------------
// DevicePool

std::shared_ptr<DevicePool> DevicePool::create(int device_id, std::optional<std::size_t> cap) {
  return std::shared_ptr<DevicePool>(new DevicePool(device_id, cap));
}

DevicePool::~DevicePool() {
  for (auto& [size, block] : free_) system_free(block);
}

DeviceBuffer DevicePool::allocate(std::size_t size, BackendKind backend) {
  auto state = std::make_shared<detail::BufferState>();
  state->backend = backend;
  if (size == 0) {
    // Empty buffers do not count against the pool.
    state->pool = shared_from_this();
    return DeviceBuffer(std::move(state));
  }

  detail::Block block;
  std::vector<detail::Block> to_free;
  {
    std::lock_guard lock(mu_);
    if (auto it = free_.find(size); it != free_.end()) {
      block = it->second;
      free_.erase(it);
      stats_.pooled_bytes -= size;
      ++stats_.reuses;
    } else if (cap_) {
      if (stats_.allocated_bytes + size > *cap_) {
        throw Error(ErrorCode::OutOfMemory,
                    fmt::format("device {}: {} bytes requested, {} of {} in use", device_id_, size,
                                stats_.allocated_bytes, *cap_));
      }
      // Evict cached blocks until the request fits under the cap.
      while (!free_.empty() && stats_.allocated_bytes + stats_.pooled_bytes + size > *cap_) {
        auto last = std::prev(free_.end());
        stats_.pooled_bytes -= last->first;
        to_free.push_back(last->second);
        free_.erase(last);
      }
    }
    if (block.data == nullptr) {
      ++stats_.allocations;
    }
    stats_.allocated_bytes += size;
  }
  for (auto& b : to_free) system_free(b);

  if (block.data != nullptr) {
    std::memset(block.data, 0, block.size);
  } else {
    block = system_alloc(size);
    if (block.data == nullptr) {
      std::lock_guard lock(mu_);
      stats_.allocated_bytes -= size;
      throw Error(ErrorCode::OutOfMemory, fmt::format("device {}: system allocation of {} bytes failed",
                                                      device_id_, size));
    }
  }
  state->pool = shared_from_this();
  state->block = block;
  return DeviceBuffer(std::move(state));
}

void DevicePool::give_back(detail::Block block) noexcept {
  if (block.data == nullptr || block.size == 0) return;
  std::lock_guard lock(mu_);
  stats_.allocated_bytes -= block.size;
  stats_.pooled_bytes += block.size;
  free_.emplace(block.size, block);
}

PoolStats DevicePool::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void DevicePool::trim() {
  std::multimap<std::size_t, detail::Block> drained;
  {
    std::lock_guard lock(mu_);
    drained.swap(free_);
    stats_.pooled_bytes = 0;
  }
  for (auto& [size, block] : drained) system_free(block);
}

// ---------------------------------------------------------------------------
// transfer_from_file

void transfer_from_file(const DeviceBuffer& buf, std::size_t dev_off, const File& file,
                        std::uint64_t file_off, std::size_t len, const DeviceBackend& backend,
                        std::span<std::byte> bounce) {
  if (len == 0) return;
  auto mem = buf.bytes();
  if (dev_off > mem.size() || len > mem.size() - dev_off) {
    throw Error(ErrorCode::OutOfBoundsView,
                fmt::format("device range [{}, {}) exceeds capacity {}", dev_off, dev_off + len,
                            mem.size()));
  }
  if (file_off > file.size() || len > file.size() - file_off) {
    throw Error(ErrorCode::IoError, fmt::format("file range [{}, {}) exceeds {} ({} bytes)", file_off,
                                                file_off + len, file.path(), file.size()));
  }

  if (backend.kind == BackendKind::SimDirect) {
    const std::size_t a = backend.transfer_alignment;
    const bool short_tail = (len % a != 0) && (file_off + len != file.size());
    if (file_off % a != 0 || dev_off % a != 0 || short_tail) {
      throw Error(ErrorCode::MisalignedDirectTransfer,
                  fmt::format("file_off {} dev_off {} len {} not {}-byte aligned", file_off, dev_off,
                              len, a));
    }
    file.pread_exact(file_off, mem.subspan(dev_off, len));
    return;
  }

  std::vector<std::byte> local;
  if (bounce.empty()) {
    local.resize(std::min(len, std::max<std::size_t>(backend.bounce_buffer_bytes, 1)));
    bounce = local;
  }
  std::size_t done = 0;
  while (done < len) {
    const std::size_t chunk = std::min(bounce.size(), len - done);
    file.pread_exact(file_off + done, bounce.first(chunk));
    std::memcpy(mem.data() + dev_off + done, bounce.data(), chunk);
    done += chunk;
  }
}

}  // namespace aggload
