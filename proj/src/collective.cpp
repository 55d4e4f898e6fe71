// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/collective.hpp"

#include <condition_variable>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "aggload/kernels.hpp"

namespace aggload {

namespace detail {

struct Rendezvous {
  std::size_t world = 1;
  std::chrono::milliseconds timeout{kDefaultRendezvousTimeout};

  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::string> signatures;
  std::vector<const void*> payloads;
  std::size_t arrived = 0;
  std::size_t departed = 0;
  std::uint64_t arrive_gen = 0;
  std::uint64_t depart_gen = 0;
  bool poisoned = false;
  std::string reason;

  [[noreturn]] void fail(std::string why) {
    if (!poisoned) {
      poisoned = true;
      reason = std::move(why);
    }
    cv.notify_all();
    throw Error(ErrorCode::RendezvousTimeout, reason);
  }

  // Counts this rank in and waits for the generation to advance.
  void wait_all(std::unique_lock<std::mutex>& lock, std::size_t& count, std::uint64_t& gen,
                std::size_t rank, std::string_view what) {
    const std::uint64_t mine = gen;
    if (++count == world) {
      count = 0;
      ++gen;
      cv.notify_all();
      return;
    }
    const bool advanced = cv.wait_for(lock, timeout, [&] { return gen != mine || poisoned; });
    if (poisoned) throw Error(ErrorCode::RendezvousTimeout, reason);
    if (!advanced) {
      fail(fmt::format("rank {} waited {} ms in {} for missing ranks (collectives issued in different "
                       "order?)",
                       rank, timeout.count(), what));
    }
  }
};

}  // namespace detail

std::vector<ProcessGroup> ProcessGroup::create(std::size_t world_size, std::chrono::milliseconds timeout) {
  if (world_size == 0) throw Error(ErrorCode::InvalidArgument, "world size must be positive");
  auto rv = std::make_shared<detail::Rendezvous>();
  rv->world = world_size;
  rv->timeout = timeout;
  rv->signatures.resize(world_size);
  rv->payloads.resize(world_size);
  std::vector<ProcessGroup> groups;
  groups.reserve(world_size);
  for (std::size_t r = 0; r < world_size; ++r) groups.push_back(ProcessGroup(rv, r));
  return groups;
}

ProcessGroup SingleGroup() { return ProcessGroup::create(1).front(); }

std::size_t ProcessGroup::world_size() const noexcept { return rv_->world; }
std::chrono::milliseconds ProcessGroup::timeout() const noexcept { return rv_->timeout; }

std::vector<const void*> ProcessGroup::arrive(std::string_view signature, const void* payload) {
  auto& rv = *rv_;
  std::unique_lock lock(rv.mu);
  if (rv.poisoned) throw Error(ErrorCode::RendezvousTimeout, rv.reason);
  rv.signatures[rank_] = std::string(signature);
  rv.payloads[rank_] = payload;
  rv.wait_all(lock, rv.arrived, rv.arrive_gen, rank_, signature);
  for (std::size_t r = 0; r < rv.world; ++r) {
    if (rv.signatures[r] != rv.signatures[0]) {
      rv.fail(fmt::format("collective mismatch: rank 0 entered '{}', rank {} entered '{}'",
                          rv.signatures[0], r, rv.signatures[r]));
    }
  }
  return rv.payloads;
}

void ProcessGroup::depart() {
  auto& rv = *rv_;
  std::unique_lock lock(rv.mu);
  if (rv.poisoned) throw Error(ErrorCode::RendezvousTimeout, rv.reason);
  rv.wait_all(lock, rv.departed, rv.depart_gen, rank_, "depart");
}

void barrier(ProcessGroup& group, std::string_view tag) {
  if (group.world_size() == 1) return;
  group.arrive(fmt::format("barrier|{}", tag), nullptr);
  group.depart();
}

void run_ranks(std::vector<ProcessGroup>& groups, const std::function<void(ProcessGroup&)>& fn) {
  std::vector<std::exception_ptr> errors(groups.size());
  std::vector<std::thread> threads;
  threads.reserve(groups.size());
  for (std::size_t r = 0; r < groups.size(); ++r) {
    threads.emplace_back([&, r] {
      try {
        fn(groups[r]);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ShardSpec partition(const TensorMetadata& meta, std::size_t dim, std::size_t world_size) {
  if (world_size == 0) throw Error(ErrorCode::InvalidArgument, "world size must be positive");
  if (dim >= meta.shape.size()) {
    throw Error(ErrorCode::BadDim,
                fmt::format("{}: dim {} for tensor of rank {}", meta.name, dim, meta.shape.size()));
  }
  const std::uint64_t extent = meta.shape[dim];
  if (extent < world_size) {
    throw Error(ErrorCode::DimTooSmall, fmt::format("{}: dim {} has {} entries for {} ranks", meta.name,
                                                    dim, extent, world_size));
  }
  ShardSpec spec;
  spec.key = meta.name;
  spec.dim = dim;
  spec.world_size = world_size;
  spec.full_shape = meta.shape;
  const std::uint64_t base = extent / world_size;
  const std::uint64_t extra = extent % world_size;
  std::uint64_t start = 0;
  for (std::size_t r = 0; r < world_size; ++r) {
    Shape part = meta.shape;
    part[dim] = base + (r < extra ? 1 : 0);
    spec.starts.push_back(start);
    start += part[dim];
    spec.part_shapes.push_back(std::move(part));
  }
  return spec;
}

namespace {

// Runs `body` between arrive and depart so that the source stays valid while
// every rank reads it, and so that a local failure never strands the others.
template <class Body>
TensorView collective_round(ProcessGroup& group, const std::string& signature, const CollectiveSource& mine,
                            std::size_t src, Body&& body) {
  if (src >= group.world_size()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("source rank {} outside world of {}", src, group.world_size()));
  }
  const auto posts = group.arrive(signature, group.rank() == src ? &mine : nullptr);
  const auto* source = static_cast<const CollectiveSource*>(posts[src]);
  TensorView result;
  std::exception_ptr error;
  try {
    if (source->failure) throw *source->failure;
    if (source->view == nullptr) throw Error(ErrorCode::SpecMismatch, "source rank supplied no tensor");
    result = body(*source->view);
  } catch (...) {
    error = std::current_exception();
  }
  group.depart();
  if (error) std::rethrow_exception(error);
  return result;
}

TensorView fresh_copy(DevicePool& dest, DType dtype, const Shape& shape, std::span<const std::byte> bytes) {
  DeviceBuffer buf = dest.allocate(bytes.size());
  if (!bytes.empty()) std::memcpy(buf.bytes().data(), bytes.data(), bytes.size());
  return make_view(buf, 0, dtype, shape);
}

}  // namespace

TensorView broadcast(ProcessGroup& group, const CollectiveSource& source, std::size_t src,
                     const Placeholder& expected, DevicePool& dest, const BroadcastOptions& options) {
  if (group.world_size() == 1) {
    if (source.failure) throw *source.failure;
    if (source.view == nullptr) throw Error(ErrorCode::SpecMismatch, "no tensor to broadcast");
    return *source.view;
  }
  const std::string signature = fmt::format("broadcast|{}|src={}|{}|[{}]", options.tag, src,
                                            to_string(expected.dtype), fmt::join(expected.shape, ","));
  return collective_round(group, signature, source, src, [&](const TensorView& view) {
    if (view.dtype() != expected.dtype || view.shape() != expected.shape) {
      throw Error(ErrorCode::SpecMismatch,
                  fmt::format("source is {} [{}], ranks expect {} [{}]", to_string(view.dtype()),
                              fmt::join(view.shape(), ","), to_string(expected.dtype),
                              fmt::join(expected.shape, ",")));
    }
    if (group.rank() == src && !options.copy_on_src) return view;
    return fresh_copy(dest, view.dtype(), view.shape(), view.data());
  });
}

TensorView scatter(ProcessGroup& group, const ShardSpec& spec, std::size_t src,
                   const CollectiveSource& source, DType dtype, DevicePool& dest, std::string_view tag) {
  if (spec.world_size != group.world_size() || spec.part_shapes.size() != spec.world_size) {
    throw Error(ErrorCode::SpecMismatch, fmt::format("shard spec for {} ranks used in world of {}",
                                                     spec.world_size, group.world_size()));
  }
  if (group.world_size() == 1) {
    if (source.failure) throw *source.failure;
    if (source.view == nullptr) throw Error(ErrorCode::SpecMismatch, "no tensor to scatter");
    if (source.view->shape() != spec.full_shape) {
      throw Error(ErrorCode::SpecMismatch, "source shape differs from shard spec");
    }
    return *source.view;
  }
  const std::string signature = fmt::format("scatter|{}|{}|src={}|dim={}|{}|[{}]", tag, spec.key, src, spec.dim,
                                            to_string(dtype), fmt::join(spec.full_shape, ","));
  return collective_round(group, signature, source, src, [&](const TensorView& view) {
    if (view.shape() != spec.full_shape || view.dtype() != dtype) {
      throw Error(ErrorCode::SpecMismatch,
                  fmt::format("source is {} [{}], spec expects {} [{}]", to_string(view.dtype()),
                              fmt::join(view.shape(), ","), to_string(dtype), fmt::join(spec.full_shape, ",")));
    }
    const std::size_t r = group.rank();
    SliceSpec slice{spec.full_shape, spec.dim, spec.starts[r], spec.part_shapes[r][spec.dim], size_bytes(dtype)};
    DeviceBuffer buf = dest.allocate(slice.slice_bytes());
    if (slice.slice_bytes() != 0) parallel::gather_slice(view.data(), slice, buf.bytes());
    return make_view(buf, 0, dtype, spec.part_shapes[r]);
  });
}

}  // namespace aggload
