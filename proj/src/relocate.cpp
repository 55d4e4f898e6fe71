// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/relocate.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <numeric>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/kernels.hpp"

namespace aggload {

namespace {

constexpr std::uint64_t round_up(std::uint64_t v, std::uint64_t a) noexcept {
  return (v + a - 1) / a * a;
}

DType target_dtype(DType from, const ConversionMap& conversions) {
  auto it = conversions.find(from);
  if (it == conversions.end() || it->second == from) return from;
  if (!conversion_supported(from, it->second)) {
    throw Error(ErrorCode::UnsupportedConversion,
                fmt::format("{} -> {}", to_string(from), to_string(it->second)));
  }
  return it->second;
}

struct Move {
  std::uint64_t src = 0;
  std::uint64_t dst = 0;
  std::uint64_t count = 0;
  DType from = DType::U8;
  DType to = DType::U8;

  std::uint64_t src_end() const noexcept { return src + count * size_bytes(from); }
  std::uint64_t dst_end() const noexcept { return dst + count * size_bytes(to); }
};

// Moves (and possibly converts) one tensor, staging through at most `bounce`
// bytes of input. Chunk order is chosen so no unread source element is
// overwritten.
void move_tensor(std::span<std::byte> mem, const Move& m, std::size_t bounce) {
  const std::size_t s = size_bytes(m.from);
  const std::size_t d = size_bytes(m.to);
  if (m.count == 0 || (m.src == m.dst && s == d && m.from == m.to)) return;

  const std::size_t per_chunk = bounce / std::max(s, d);
  if (per_chunk == 0) {
    throw Error(ErrorCode::BounceTooSmall, fmt::format("bounce {} < element size {}", bounce,
                                                       std::max(s, d)));
  }

  const auto shift = static_cast<std::int64_t>(m.dst) - static_cast<std::int64_t>(m.src);
  const auto step = static_cast<std::int64_t>(s) - static_cast<std::int64_t>(d);
  const auto last = static_cast<std::int64_t>(m.count) - 1;
  bool ascending;
  bool descending;
  if (last <= 0) {
    ascending = descending = true;
  } else if (step >= 0) {
    ascending = shift <= step;
    descending = shift >= last * step;
  } else {
    ascending = shift <= last * step;
    descending = shift >= step;
  }

  std::vector<std::byte> in(std::min<std::uint64_t>(per_chunk, m.count) * s);
  std::vector<std::byte> out(m.from == m.to ? 0 : std::min<std::uint64_t>(per_chunk, m.count) * d);

  auto do_chunk = [&](std::uint64_t first, std::uint64_t n) {
    std::memcpy(in.data(), mem.data() + m.src + first * s, n * s);
    if (m.from == m.to) {
      std::memcpy(mem.data() + m.dst + first * d, in.data(), n * s);
    } else {
      parallel::convert(std::span(in).first(n * s), m.from, std::span(out).first(n * d), m.to);
      std::memcpy(mem.data() + m.dst + first * d, out.data(), n * d);
    }
  };

  if (ascending) {
    for (std::uint64_t i = 0; i < m.count; i += per_chunk) do_chunk(i, std::min(per_chunk, m.count - i));
  } else if (descending) {
    std::uint64_t end = m.count;
    while (end > 0) {
      const std::uint64_t n = std::min<std::uint64_t>(per_chunk, end);
      do_chunk(end - n, n);
      end -= n;
    }
  } else {
    // Source and target overlap from both sides; stage the whole tensor.
    std::vector<std::byte> whole(mem.begin() + m.src, mem.begin() + m.src_end());
    if (m.from == m.to) {
      std::memcpy(mem.data() + m.dst, whole.data(), whole.size());
    } else {
      parallel::convert(whole, m.from, mem.subspan(m.dst, m.count * d), m.to);
    }
  }
}

std::vector<Relocation> run_relocation(const DeviceBuffer& buf, std::span<const Landing> landings,
                                       const ConversionMap& conversions, std::size_t bounce) {
  std::vector<Relocation> plan = plan_relocation(landings, conversions);
  bool noop = true;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    noop &= plan[i].offset == landings[i].offset && plan[i].dtype == landings[i].meta.dtype;
  }
  if (noop) return plan;

  std::size_t widest = 1;
  for (const auto& l : landings) widest = std::max(widest, size_bytes(l.meta.dtype));
  for (const auto& r : plan) widest = std::max(widest, size_bytes(r.dtype));
  if (bounce < widest) {
    throw Error(ErrorCode::BounceTooSmall,
                fmt::format("bounce of {} bytes cannot hold one {}-byte element", bounce, widest));
  }

  auto mem = buf.bytes();
  for (const auto& l : landings) {
    if (l.offset + l.meta.byte_size() > mem.size()) {
      throw Error(ErrorCode::OutOfBoundsView,
                  fmt::format("{} lands at [{}, {}) beyond capacity {}", l.name, l.offset,
                              l.offset + l.meta.byte_size(), mem.size()));
    }
  }
  if (relocation_extent(plan) > mem.size()) {
    throw Error(ErrorCode::OutOfBoundsView,
                fmt::format("repacked tensors need {} bytes, buffer holds {}", relocation_extent(plan),
                            mem.size()));
  }

  // Moves in ascending source order.
  std::vector<Move> moves;
  std::vector<std::size_t> order(landings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return landings[a].offset < landings[b].offset; });
  for (std::size_t idx : order) {
    const auto& l = landings[idx];
    const std::uint64_t n = l.meta.num_elements();
    if (n == 0) continue;
    Move m{l.offset, plan[idx].offset, n, l.meta.dtype, plan[idx].dtype};
    if (m.src == m.dst && m.from == m.to) continue;
    moves.push_back(m);
  }

  // Move i must wait for every other move whose source its target overlaps.
  // Targets keep the source order, which makes this graph acyclic.
  const std::size_t n = moves.size();
  std::vector<std::vector<std::size_t>> unblocks(n);
  std::vector<std::size_t> waiting(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t lo = moves[i].dst;
    const std::uint64_t hi = moves[i].dst_end();
    auto first = std::partition_point(moves.begin(), moves.end(),
                                      [&](const Move& m) { return m.src_end() <= lo; });
    for (auto it = first; it != moves.end() && it->src < hi; ++it) {
      const auto j = static_cast<std::size_t>(it - moves.begin());
      if (j == i) continue;
      unblocks[j].push_back(i);
      ++waiting[i];
    }
  }
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (waiting[i] == 0) ready.push_back(i);
  }
  std::size_t done = 0;
  while (!ready.empty()) {
    const std::size_t i = ready.front();
    ready.pop_front();
    move_tensor(mem, moves[i], bounce);
    ++done;
    for (std::size_t k : unblocks[i]) {
      if (--waiting[k] == 0) ready.push_back(k);
    }
  }
  if (done != n) {
    throw Error(ErrorCode::InvalidArgument, "tensor ranges overlap; cannot order relocation");
  }
  return plan;
}

}  // namespace

std::vector<Relocation> plan_relocation(std::span<const Landing> landings,
                                        const ConversionMap& conversions) {
  std::vector<Relocation> plan(landings.size());
  bool aligned = true;
  bool converting = false;
  for (std::size_t i = 0; i < landings.size(); ++i) {
    const auto& l = landings[i];
    const DType to = target_dtype(l.meta.dtype, conversions);
    converting |= to != l.meta.dtype;
    aligned &= l.offset % alignment(l.meta.dtype) == 0;
    plan[i] = {l.name, l.offset, to, l.meta.num_elements() * size_bytes(to)};
  }
  if (aligned && !converting) return plan;

  std::vector<std::size_t> order(landings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return landings[a].offset < landings[b].offset; });
  std::uint64_t cursor = 0;
  for (std::size_t idx : order) {
    auto& r = plan[idx];
    r.offset = round_up(cursor, alignment(r.dtype));
    cursor = r.offset + r.byte_size;
  }
  return plan;
}

std::uint64_t relocation_extent(std::span<const Relocation> plan) noexcept {
  std::uint64_t extent = 0;
  for (const auto& r : plan) extent = std::max(extent, r.offset + r.byte_size);
  return extent;
}

std::vector<Relocation> align_fix(const DeviceBuffer& buf, std::span<const Landing> landings,
                                  std::size_t bounce) {
  return run_relocation(buf, landings, {}, bounce);
}

std::vector<Relocation> relocate(const DeviceBuffer& buf, std::span<const Landing> landings,
                                 const ConversionMap& conversions, std::size_t bounce) {
  return run_relocation(buf, landings, conversions, bounce);
}

TensorMetadata convert_dtype(const DeviceBuffer& buf, const TensorMetadata& view_meta, DType target,
                             std::size_t bounce) {
  if (view_meta.dtype == target) return view_meta;
  if (!conversion_supported(view_meta.dtype, target)) {
    throw Error(ErrorCode::UnsupportedConversion,
                fmt::format("{} -> {}", to_string(view_meta.dtype), to_string(target)));
  }
  const std::uint64_t n = view_meta.num_elements();
  const std::uint64_t span_end =
      view_meta.begin + n * std::max(size_bytes(view_meta.dtype), size_bytes(target));
  auto mem = buf.bytes();
  if (span_end > mem.size()) {
    throw Error(ErrorCode::OutOfBoundsView,
                fmt::format("{} conversion needs [{}, {}) of {} bytes", view_meta.name,
                            view_meta.begin, span_end, mem.size()));
  }
  move_tensor(mem, Move{view_meta.begin, view_meta.begin, n, view_meta.dtype, target}, bounce);

  TensorMetadata out = view_meta;
  out.dtype = target;
  out.end = out.begin + n * size_bytes(target);
  return out;
}

}  // namespace aggload
