// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

// In-process process group. Each rank is a thread holding its own
// ProcessGroup handle; collectives are blocking rendezvous points that every
// rank must enter in the same order. A rank that does not show up within the
// timeout, or shows up with a different collective, poisons the group and
// every participant gets RendezvousTimeout.

#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aggload/error.hpp"
#include "aggload/format.hpp"
#include "aggload/tensor_view.hpp"

namespace aggload {

inline constexpr std::chrono::milliseconds kDefaultRendezvousTimeout{30'000};

namespace detail {
struct Rendezvous;
}

class ProcessGroup {
 public:
  /// One handle per rank, all sharing the same rendezvous state.
  static std::vector<ProcessGroup> create(std::size_t world_size,
                                          std::chrono::milliseconds timeout = kDefaultRendezvousTimeout);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t world_size() const noexcept;
  std::chrono::milliseconds timeout() const noexcept;

  /// Blocks until every rank posted; returns each rank's payload in rank
  /// order. Throws RendezvousTimeout on timeout or signature mismatch.
  std::vector<const void*> arrive(std::string_view signature, const void* payload);
  /// Second half of a round: blocks until every rank is done with the
  /// payloads returned by arrive().
  void depart();

 private:
  ProcessGroup(std::shared_ptr<detail::Rendezvous> rv, std::size_t rank) : rv_(std::move(rv)), rank_(rank) {}

  std::shared_ptr<detail::Rendezvous> rv_;
  std::size_t rank_ = 0;
};

/// World of one; every collective is a local no-op.
ProcessGroup SingleGroup();

void barrier(ProcessGroup& group, std::string_view tag = {});

/// Runs fn on one thread per handle and joins. Rethrows the lowest-rank error.
void run_ranks(std::vector<ProcessGroup>& groups, const std::function<void(ProcessGroup&)>& fn);

struct ShardSpec {
  std::string key;
  std::size_t dim = 0;
  std::size_t world_size = 1;
  Shape full_shape;
  std::vector<Shape> part_shapes;
  std::vector<std::uint64_t> starts;  ///< first index along dim per rank
};

/// Splits shape[dim] into world_size parts differing by at most one; the
/// first shape[dim] % world_size ranks get the larger part.
ShardSpec partition(const TensorMetadata& meta, std::size_t dim, std::size_t world_size);

/// What the source rank contributes. Either a view, or an error that every
/// rank should raise.
struct CollectiveSource {
  const TensorView* view = nullptr;
  std::optional<Error> failure;

  CollectiveSource() = default;
  CollectiveSource(const TensorView* v) : view(v) {}  // NOLINT: implicit by intent
  explicit CollectiveSource(Error e) : failure(std::move(e)) {}
};

/// Dtype and shape every rank expects to receive.
struct Placeholder {
  DType dtype = DType::U8;
  Shape shape;
};

struct BroadcastOptions {
  /// If set, the source rank also receives a fresh copy instead of its own
  /// view, so the source memory can be released right after the call.
  bool copy_on_src = false;
  std::string tag;
};

TensorView broadcast(ProcessGroup& group, const CollectiveSource& source, std::size_t src,
                     const Placeholder& expected, DevicePool& dest, const BroadcastOptions& options = {});

/// Every rank receives a fresh contiguous copy of its slice. World 1 returns
/// the source view itself.
TensorView scatter(ProcessGroup& group, const ShardSpec& spec, std::size_t src,
                   const CollectiveSource& source, DType dtype, DevicePool& dest,
                   std::string_view tag = {});

}  // namespace aggload
