// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// Simulated device memory.
//
// A DevicePool stands in for one accelerator's caching allocator: released
// buffers go back to the pool and are handed out again for requests of the
// same size. DeviceBuffer is a shared handle to one allocation. The memory is
// returned to the pool when the last handle (including handles held by tensor
// views) goes away, or immediately on a forced release, which also invalidates
// every outstanding view.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>

namespace aggload {

class File;

enum class BackendKind { Host, SimDirect };

std::string_view to_string(BackendKind kind) noexcept;
BackendKind parse_backend(std::string_view name);

inline constexpr std::size_t kDirectTransferAlignment = 512;
// Host staging stays small so each chunk is still in cache when it is copied.
inline constexpr std::size_t kDefaultHostBounceBytes = 1ull << 20;
inline constexpr std::size_t kDefaultDeviceBounceBytes = 16ull << 20;

struct DeviceBackend {
  BackendKind kind = BackendKind::Host;
  std::size_t transfer_alignment = 1;
  /// Host: per-worker staging buffer for pread. SimDirect: unused.
  std::size_t bounce_buffer_bytes = kDefaultHostBounceBytes;

  static DeviceBackend host(std::size_t bounce = kDefaultHostBounceBytes) {
    return {BackendKind::Host, 1, bounce};
  }
  static DeviceBackend sim_direct() {
    return {BackendKind::SimDirect, kDirectTransferAlignment, 0};
  }
  static DeviceBackend of(BackendKind kind, std::size_t bounce = kDefaultHostBounceBytes) {
    return kind == BackendKind::Host ? host(bounce) : sim_direct();
  }
};

class DevicePool;

namespace detail {

struct Block {
  std::byte* data = nullptr;
  std::size_t size = 0;
  bool mapped = false;
};

struct BufferState {
  std::shared_ptr<DevicePool> pool;
  Block block;
  BackendKind backend = BackendKind::Host;
  std::atomic<std::size_t> refcount{0};
  std::atomic<bool> release_requested{false};
  std::atomic<bool> invalidated{false};

  ~BufferState();
};

}  // namespace detail

class DeviceBuffer {
 public:
  DeviceBuffer() = default;

  explicit operator bool() const noexcept { return state_ != nullptr; }
  std::size_t capacity() const noexcept { return state_ ? state_->block.size : 0; }
  int device_id() const noexcept;
  BackendKind backend() const noexcept { return state_ ? state_->backend : BackendKind::Host; }

  /// False once force-released.
  bool usable() const noexcept { return state_ && !state_->invalidated.load(); }

  /// Throws UseAfterClose on released or empty handles.
  std::span<std::byte> bytes() const;

  void write(std::size_t offset, std::span<const std::byte> src) const;
  void read(std::size_t offset, std::span<std::byte> dst) const;

  /// Count of unconsumed tensor keys hosted by this buffer.
  std::size_t refcount() const noexcept { return state_ ? state_->refcount.load() : 0; }
  void set_refcount(std::size_t n) const;
  /// Decrements the key count and returns the new value.
  std::size_t consume_key() const;

  /// Gives the memory back to the pool. Requires refcount() == 0 unless
  /// `force`. Without force the memory stays alive until every other handle
  /// (views) is gone; with force it is returned now and those views become
  /// unusable. This handle is empty afterwards; a second call throws
  /// DoubleRelease.
  void release(bool force = false);

  /// Returns the memory now, whatever the release state, and makes every
  /// handle to it unusable. Idempotent. The handle itself stays non-empty.
  void invalidate() const noexcept;

  std::weak_ptr<detail::BufferState> weak() const noexcept { return state_; }
  static DeviceBuffer from_weak(const std::weak_ptr<detail::BufferState>& weak);

 private:
  friend class DevicePool;
  explicit DeviceBuffer(std::shared_ptr<detail::BufferState> s) : state_(std::move(s)) {}
  void require_range(std::size_t offset, std::size_t len) const;

  std::shared_ptr<detail::BufferState> state_;
};

struct PoolStats {
  std::size_t allocated_bytes = 0;
  std::size_t pooled_bytes = 0;
  std::size_t allocations = 0;
  std::size_t reuses = 0;
};

class DevicePool : public std::enable_shared_from_this<DevicePool> {
 public:
  static std::shared_ptr<DevicePool> create(int device_id,
                                            std::optional<std::size_t> cap = std::nullopt);
  ~DevicePool();

  DevicePool(const DevicePool&) = delete;
  DevicePool& operator=(const DevicePool&) = delete;

  /// Zero-initialized buffer; reuses a pooled block of the same size when one
  /// exists. A size of 0 yields an empty buffer without touching the pool.
  DeviceBuffer allocate(std::size_t size, BackendKind backend = BackendKind::Host);
  DeviceBuffer allocate(const DeviceBackend& backend, std::size_t size) {
    return allocate(size, backend.kind);
  }

  int device_id() const noexcept { return device_id_; }
  std::optional<std::size_t> cap() const noexcept { return cap_; }
  PoolStats stats() const;
  std::size_t allocated_bytes() const { return stats().allocated_bytes; }
  std::size_t pooled_bytes() const { return stats().pooled_bytes; }

  /// Returns every pooled block to the system.
  void trim();

 private:
  DevicePool(int device_id, std::optional<std::size_t> cap) : device_id_(device_id), cap_(cap) {}
  friend struct detail::BufferState;
  friend class DeviceBuffer;
  void give_back(detail::Block block) noexcept;

  int device_id_;
  std::optional<std::size_t> cap_;
  mutable std::mutex mu_;
  std::multimap<std::size_t, detail::Block> free_;
  PoolStats stats_;
};

/// Copies file bytes [file_off, file_off + len) into buf[dev_off, ...).
///
/// Host stages through a bounce buffer of at most `backend.bounce_buffer_bytes`
/// (the caller may supply one in `bounce` to reuse it across calls).
/// SimDirect reads straight into device memory but requires 512-byte aligned
/// file and device offsets; the length may be short only at end of file.
void transfer_from_file(const DeviceBuffer& buf, std::size_t dev_off, const File& file,
                        std::uint64_t file_off, std::size_t len, const DeviceBackend& backend,
                        std::span<std::byte> bounce = {});

}  // namespace aggload
