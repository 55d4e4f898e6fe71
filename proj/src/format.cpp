// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/format.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/file.hpp"
#include "json.hpp"

namespace aggload {

using ojson = nlohmann::ordered_json;

namespace {

std::uint64_t load_le64(const std::byte* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint64_t>(p[i]);
  return v;
}

void store_le64(std::byte* p, std::uint64_t v) noexcept {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xffu);
}

std::uint64_t to_offset(const ojson& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    throw Error(ErrorCode::MalformedJson, fmt::format("{}: negative data offset", key));
  }
  throw Error(ErrorCode::MalformedJson, fmt::format("{}: data offsets must be integers", key));
}

TensorMetadata parse_entry(const std::string& key, const ojson& entry) {
  if (!entry.is_object()) {
    throw Error(ErrorCode::MalformedJson, fmt::format("{}: entry is not an object", key));
  }
  const auto dtype_it = entry.find("dtype");
  const auto shape_it = entry.find("shape");
  const auto offsets_it = entry.find("data_offsets");
  if (dtype_it == entry.end() || shape_it == entry.end() || offsets_it == entry.end()) {
    throw Error(ErrorCode::MalformedJson,
                fmt::format("{}: entry needs dtype, shape and data_offsets", key));
  }
  if (!dtype_it->is_string()) {
    throw Error(ErrorCode::MalformedJson, fmt::format("{}: dtype must be a string", key));
  }
  TensorMetadata meta;
  meta.name = key;
  meta.dtype = parse_dtype(dtype_it->get<std::string>());

  if (!shape_it->is_array()) {
    throw Error(ErrorCode::MalformedJson, fmt::format("{}: shape must be an array", key));
  }
  for (const auto& dim : *shape_it) {
    if (dim.is_number_unsigned()) {
      meta.shape.push_back(dim.get<std::uint64_t>());
    } else if (dim.is_number_integer()) {
      throw Error(ErrorCode::NegativeShape, fmt::format("{}: negative dimension {}", key,
                                                        dim.get<std::int64_t>()));
    } else {
      throw Error(ErrorCode::MalformedJson, fmt::format("{}: shape entries must be integers", key));
    }
  }

  if (!offsets_it->is_array() || offsets_it->size() != 2) {
    throw Error(ErrorCode::MalformedJson, fmt::format("{}: data_offsets must be [begin, end]", key));
  }
  meta.begin = to_offset((*offsets_it)[0], key);
  meta.end = to_offset((*offsets_it)[1], key);
  return meta;
}

ojson layout_json(const std::vector<TensorData>& tensors, const std::optional<StringMap>& metadata) {
  ojson doc = ojson::object();
  if (metadata) {
    ojson m = ojson::object();
    for (const auto& [k, v] : *metadata) m[k] = v;
    doc[std::string(kMetadataKey)] = std::move(m);
  }
  std::uint64_t cursor = 0;
  std::unordered_set<std::string> seen;
  for (const auto& t : tensors) {
    if (t.name == kMetadataKey) {
      throw Error(ErrorCode::InvalidArgument, "tensor may not be named __metadata__");
    }
    if (!seen.insert(t.name).second) {
      throw Error(ErrorCode::DuplicateKey, fmt::format("duplicate tensor name {}", t.name));
    }
    const std::uint64_t expected = num_elements(t.shape) * size_bytes(t.dtype);
    if (expected != t.bytes.size()) {
      throw Error(ErrorCode::LengthMismatch,
                  fmt::format("{}: {} bytes given, shape and dtype need {}", t.name, t.bytes.size(),
                              expected));
    }
    ojson entry = ojson::object();
    entry["dtype"] = std::string(to_string(t.dtype));
    entry["shape"] = t.shape;
    entry["data_offsets"] = {cursor, cursor + expected};
    doc[t.name] = std::move(entry);
    cursor += expected;
  }
  return doc;
}

}  // namespace

std::uint64_t num_elements(const Shape& shape) noexcept {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const TensorMetadata* FileHeader::find(std::string_view name) const noexcept {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

FileHeader parse_header(std::span<const std::byte> prefix, std::uint64_t header_cap) {
  if (prefix.size() < 8) {
    throw Error(ErrorCode::TruncatedHeader,
                fmt::format("need 8 length bytes, have {}", prefix.size()));
  }
  FileHeader header;
  header.header_len = load_le64(prefix.data());
  if (header.header_len > header_cap) {
    throw Error(ErrorCode::HeaderTooLarge,
                fmt::format("header length {} exceeds cap {}", header.header_len, header_cap));
  }
  if (prefix.size() - 8 < header.header_len) {
    throw Error(ErrorCode::TruncatedHeader,
                fmt::format("header declares {} bytes, only {} available", header.header_len,
                            prefix.size() - 8));
  }

  const auto* text = reinterpret_cast<const char*>(prefix.data() + 8);
  ojson doc;
  try {
    doc = ojson::parse(text, text + header.header_len);
  } catch (const ojson::exception& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::MalformedJson, "layout is not a JSON object");

  for (const auto& [key, value] : doc.items()) {
    if (key == kMetadataKey) {
      if (!value.is_object()) {
        throw Error(ErrorCode::MalformedJson, "__metadata__ must be an object");
      }
      StringMap m;
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) {
          throw Error(ErrorCode::MalformedJson,
                      fmt::format("__metadata__.{} must be a string", mk));
        }
        m.emplace(mk, mv.get<std::string>());
      }
      header.metadata = std::move(m);
      continue;
    }
    header.tensors.push_back(parse_entry(key, value));
  }
  return header;
}

void validate(const FileHeader& header, std::uint64_t file_size) {
  if (file_size < header.body_offset()) {
    throw Error(ErrorCode::TruncatedHeader, fmt::format("file of {} bytes ends before body offset {}",
                                                        file_size, header.body_offset()));
  }
  const std::uint64_t body_len = file_size - header.body_offset();

  std::vector<const TensorMetadata*> ranges;
  ranges.reserve(header.tensors.size());
  for (const auto& t : header.tensors) {
    if (t.begin > t.end || t.end > body_len) {
      throw Error(ErrorCode::OffsetOutOfBounds, fmt::format("{}: range [{}, {}) outside body of {} bytes",
                                                            t.name, t.begin, t.end, body_len));
    }
    std::uint64_t bytes = size_bytes(t.dtype);
    bool overflow = false;
    for (auto d : t.shape) overflow |= __builtin_mul_overflow(bytes, d, &bytes);
    if (overflow || bytes != t.end - t.begin) {
      throw Error(ErrorCode::SizeMismatch,
                  fmt::format("{}: range holds {} bytes, {} {} needs {}", t.name, t.end - t.begin,
                              to_string(t.dtype), t.shape.size(), overflow ? "overflow" : std::to_string(bytes)));
    }
    if (t.end > t.begin) ranges.push_back(&t);
  }

  std::sort(ranges.begin(), ranges.end(),
            [](const auto* a, const auto* b) { return a->begin < b->begin; });
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i - 1]->end > ranges[i]->begin) {
      throw Error(ErrorCode::OverlappingTensors,
                  fmt::format("{} [{}, {}) overlaps {} [{}, {})", ranges[i - 1]->name,
                              ranges[i - 1]->begin, ranges[i - 1]->end, ranges[i]->name,
                              ranges[i]->begin, ranges[i]->end));
    }
  }
}

ParsedFile read_header(const std::filesystem::path& path, std::uint64_t header_cap) {
  File file(path);
  ParsedFile out;
  out.file_size = file.size();
  std::vector<std::byte> prefix(std::min<std::uint64_t>(8, file.size()));
  file.pread_exact(0, prefix);
  if (prefix.size() == 8) {
    const std::uint64_t len = load_le64(prefix.data());
    if (len <= header_cap) {
      const std::uint64_t avail = std::min<std::uint64_t>(len, file.size() - 8);
      prefix.resize(8 + avail);
      file.pread_exact(8, std::span(prefix).subspan(8));
    }
  }
  out.header = parse_header(prefix, header_cap);
  validate(out.header, out.file_size);
  return out;
}

std::uint64_t layout_json_size(const std::vector<TensorData>& tensors,
                               const std::optional<StringMap>& metadata) {
  return layout_json(tensors, metadata).dump().size();
}

std::vector<std::byte> write_file(const std::vector<TensorData>& tensors,
                                  const std::optional<StringMap>& metadata,
                                  std::optional<std::uint64_t> pad_header_to) {
  std::string text = layout_json(tensors, metadata).dump();
  if (pad_header_to) {
    if (*pad_header_to < text.size()) {
      throw Error(ErrorCode::LengthMismatch,
                  fmt::format("layout needs {} bytes, cannot pad to {}", text.size(), *pad_header_to));
    }
    text.append(*pad_header_to - text.size(), ' ');
  }
  std::uint64_t body = 0;
  for (const auto& t : tensors) body += t.bytes.size();

  std::vector<std::byte> out(8 + text.size() + body);
  store_le64(out.data(), text.size());
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::size_t cursor = 8 + text.size();
  for (const auto& t : tensors) {
    if (!t.bytes.empty()) std::memcpy(out.data() + cursor, t.bytes.data(), t.bytes.size());
    cursor += t.bytes.size();
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot create {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, fmt::format("write failed for {}", path.string()));
}

}  // namespace aggload
