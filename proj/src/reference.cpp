// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/reference.hpp"

#include <cstring>
#include <fstream>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/kernels.hpp"

namespace aggload::reference {

namespace {

struct StreamHeader {
  std::uint64_t body_offset = 0;
  FileHeader header;
};

StreamHeader read_stream_header(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char len_bytes[8];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 8)) {
    throw Error(ErrorCode::TruncatedHeader, path.string());
  }
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
  std::vector<std::byte> prefix(8 + len);
  std::memcpy(prefix.data(), len_bytes, 8);
  if (!in.read(reinterpret_cast<char*>(prefix.data() + 8), static_cast<std::streamsize>(len))) {
    throw Error(ErrorCode::TruncatedHeader, path.string());
  }
  StreamHeader h;
  h.header = parse_header(prefix);
  h.body_offset = 8 + len;
  return h;
}

HostTensor load(std::ifstream& in, const StreamHeader& h, const TensorMetadata& t,
                const ConversionMap& conversions, const std::filesystem::path& path) {
  HostTensor out;
  out.dtype = t.dtype;
  out.shape = t.shape;
  out.bytes.resize(t.byte_size());
  in.seekg(static_cast<std::streamoff>(h.body_offset + t.begin));
  if (!out.bytes.empty() &&
      !in.read(reinterpret_cast<char*>(out.bytes.data()), static_cast<std::streamsize>(out.bytes.size()))) {
    throw Error(ErrorCode::IoError, fmt::format("{}: short read of {}", path.string(), t.name));
  }
  if (auto c = conversions.find(t.dtype); c != conversions.end() && c->second != t.dtype) {
    std::vector<std::byte> converted(t.num_elements() * size_bytes(c->second));
    serial::convert(out.bytes, t.dtype, converted, c->second);
    out.bytes = std::move(converted);
    out.dtype = c->second;
  }
  return out;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  return in;
}

}  // namespace

HostTensor read_tensor(const std::filesystem::path& path, const std::string& name,
                       const ConversionMap& conversions) {
  auto in = open(path);
  const auto h = read_stream_header(in, path);
  const TensorMetadata* t = h.header.find(name);
  if (t == nullptr) throw Error(ErrorCode::UnknownKey, fmt::format("{}: no tensor '{}'", path.string(), name));
  return load(in, h, *t, conversions, path);
}

std::map<std::string, HostTensor> read_all(const std::filesystem::path& path, const ConversionMap& conversions) {
  auto in = open(path);
  const auto h = read_stream_header(in, path);
  std::map<std::string, HostTensor> out;
  for (const auto& t : h.header.tensors) out.emplace(t.name, load(in, h, t, conversions, path));
  return out;
}

HostTensor shard(const HostTensor& t, std::size_t dim, std::size_t rank, std::size_t world) {
  if (dim >= t.shape.size()) throw Error(ErrorCode::BadDim, fmt::format("dim {} of rank-{} tensor", dim, t.shape.size()));
  const std::uint64_t n = t.shape[dim];
  if (n < world) throw Error(ErrorCode::DimTooSmall, fmt::format("{} entries for {} ranks", n, world));
  std::uint64_t start = 0;
  for (std::size_t r = 0; r < rank; ++r) start += n / world + (r < n % world ? 1 : 0);
  const std::uint64_t count = n / world + (rank < n % world ? 1 : 0);

  HostTensor out;
  out.dtype = t.dtype;
  out.shape = t.shape;
  out.shape[dim] = count;

  // Walk every output index and look up its source element.
  const std::size_t es = size_bytes(t.dtype);
  const std::uint64_t total = num_elements(out.shape);
  out.bytes.resize(total * es);
  std::vector<std::uint64_t> idx(out.shape.size(), 0);
  for (std::uint64_t e = 0; e < total; ++e) {
    std::uint64_t src = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) src = src * t.shape[d] + idx[d] + (d == dim ? start : 0);
    std::memcpy(out.bytes.data() + e * es, t.bytes.data() + src * es, es);
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < out.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

NaiveStats naive_load(const std::vector<std::filesystem::path>& files, DevicePool& pool) {
  NaiveStats stats;
  for (const auto& path : files) {
    std::ifstream in = open(path);
    const auto h = read_stream_header(in, path);
    in.close();
    for (const auto& t : h.header.tensors) {
      std::ifstream tin = open(path);
      HostTensor host = load(tin, h, t, {}, path);
      DeviceBuffer buf = pool.allocate(host.bytes.size());
      if (!host.bytes.empty()) buf.write(0, host.bytes);
      stats.bytes += host.bytes.size();
      ++stats.tensors;
    }
  }
  return stats;
}

}  // namespace aggload::reference
