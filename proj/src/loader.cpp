// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/loader.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include <fmt/core.h>

#include "aggload/error.hpp"
#include "aggload/kernels.hpp"

namespace aggload {

FileMapping round_robin(const std::vector<std::filesystem::path>& files, std::size_t world_size) {
  if (world_size == 0) throw Error(ErrorCode::InvalidArgument, "world size must be positive");
  FileMapping m;
  for (std::size_t i = 0; i < files.size(); ++i) m[i % world_size].push_back(files[i]);
  return m;
}

namespace detail {

struct Survivor {
  std::weak_ptr<BufferState> buffer;
  std::uint64_t offset = 0;
};

struct FilesState {
  ProcessGroup group = SingleGroup();
  std::shared_ptr<DevicePool> pool;
  LoaderConfig config;
  std::map<std::string, KeyEntry> keys;
  std::map<std::size_t, std::filesystem::path> paths;

  // Own files only.
  std::map<std::size_t, DeviceBuffer> buffers;
  std::map<std::string, std::uint64_t> offsets;
  std::map<std::string, Survivor> survivors;
  std::set<std::string> consumed;
  std::vector<std::weak_ptr<BufferState>> handed_out;

  std::uint64_t device_bytes = 0;
  PlanStats stats;
  bool closed = false;

  const KeyEntry& entry(const std::string& key) const {
    if (closed) throw Error(ErrorCode::UseAfterClose, "files buffer is closed");
    auto it = keys.find(key);
    if (it == keys.end()) throw Error(ErrorCode::UnknownKey, fmt::format("no tensor '{}'", key));
    return it->second;
  }

  bool is_owner(const KeyEntry& k) const noexcept { return k.owner == group.rank(); }

  // The full tensor on the owner: from its file buffer, else from whatever
  // copy survived an earlier request.
  CollectiveSource source_for(const std::string& key, const KeyEntry& k, TensorView& holder) const {
    try {
      if (auto it = buffers.find(k.file_id); it != buffers.end()) {
        holder = make_view(it->second, offsets.at(key), k.dtype, k.meta.shape);
        return CollectiveSource(&holder);
      }
      if (auto it = survivors.find(key); it != survivors.end()) {
        DeviceBuffer buf = DeviceBuffer::from_weak(it->second.buffer);
        if (buf.usable()) {
          holder = make_view(buf, it->second.offset, k.dtype, k.meta.shape);
          return CollectiveSource(&holder);
        }
      }
      return CollectiveSource(Error(ErrorCode::StaleKey,
                                    fmt::format("'{}' was released and no copy of it is alive", key)));
    } catch (const Error& e) {
      return CollectiveSource(e);
    }
  }

  void track(const TensorView& v) { handed_out.push_back(v.buffer().weak()); }

  void consume(const std::string& key, const KeyEntry& k) {
    if (!consumed.insert(key).second || !is_owner(k)) return;
    auto it = buffers.find(k.file_id);
    if (it == buffers.end()) return;
    if (it->second.consume_key() == 0 && config.auto_release) {
      it->second.release();
      buffers.erase(it);
    }
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// FilesBufferOnDevice

FilesBufferOnDevice::FilesBufferOnDevice() = default;
FilesBufferOnDevice::FilesBufferOnDevice(std::unique_ptr<detail::FilesState> state) : state_(std::move(state)) {}
FilesBufferOnDevice::FilesBufferOnDevice(FilesBufferOnDevice&&) noexcept = default;
FilesBufferOnDevice& FilesBufferOnDevice::operator=(FilesBufferOnDevice&&) noexcept = default;
FilesBufferOnDevice::~FilesBufferOnDevice() = default;

TensorView FilesBufferOnDevice::get_tensor(const std::string& key) {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty files buffer");
  auto& s = *state_;
  const auto& k = s.entry(key);
  TensorView holder;
  CollectiveSource source;
  if (s.is_owner(k)) source = s.source_for(key, k, holder);

  BroadcastOptions options;
  options.copy_on_src = s.config.auto_release && s.group.world_size() > 1;
  options.tag = key;
  TensorView out = broadcast(s.group, source, k.owner, Placeholder{k.dtype, k.meta.shape}, *s.pool, options);
  holder = TensorView();

  s.track(out);
  if (s.is_owner(k)) s.survivors[key] = {out.buffer().weak(), out.base_offset()};
  s.consume(key, k);
  return out;
}

TensorView FilesBufferOnDevice::get_sharded(const std::string& key, std::size_t dim) {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty files buffer");
  auto& s = *state_;
  const auto& k = s.entry(key);
  TensorMetadata meta = k.meta;
  meta.dtype = k.dtype;
  const ShardSpec spec = partition(meta, dim, s.group.world_size());

  TensorView holder;
  CollectiveSource source;
  if (s.is_owner(k)) source = s.source_for(key, k, holder);
  TensorView out = scatter(s.group, spec, k.owner, source, k.dtype, *s.pool, key);
  holder = TensorView();

  s.track(out);
  if (s.is_owner(k) && s.group.world_size() == 1) s.survivors[key] = {out.buffer().weak(), out.base_offset()};
  s.consume(key, k);
  return out;
}

void FilesBufferOnDevice::close() noexcept {
  if (!state_ || state_->closed) return;
  auto& s = *state_;
  s.closed = true;
  for (auto& [id, buf] : s.buffers) buf.invalidate();
  s.buffers.clear();
  for (const auto& w : s.handed_out) DeviceBuffer::from_weak(w).invalidate();
  s.handed_out.clear();
  s.survivors.clear();
}

bool FilesBufferOnDevice::closed() const noexcept { return !state_ || state_->closed; }

std::vector<std::string> FilesBufferOnDevice::keys() const {
  std::vector<std::string> out;
  if (!state_) return out;
  for (const auto& [name, k] : state_->keys) out.push_back(name);
  return out;
}

bool FilesBufferOnDevice::contains(const std::string& key) const {
  return state_ && state_->keys.count(key) != 0;
}

TensorMetadata FilesBufferOnDevice::metadata(const std::string& key) const {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty files buffer");
  auto it = state_->keys.find(key);
  if (it == state_->keys.end()) throw Error(ErrorCode::UnknownKey, fmt::format("no tensor '{}'", key));
  TensorMetadata m = it->second.meta;
  m.dtype = it->second.dtype;
  return m;
}

std::size_t FilesBufferOnDevice::owner(const std::string& key) const {
  if (!state_) throw Error(ErrorCode::UseAfterClose, "empty files buffer");
  auto it = state_->keys.find(key);
  if (it == state_->keys.end()) throw Error(ErrorCode::UnknownKey, fmt::format("no tensor '{}'", key));
  return it->second.owner;
}

std::vector<FilesBufferOnDevice::LocalFile> FilesBufferOnDevice::local_files() const {
  std::vector<LocalFile> out;
  if (!state_) return out;
  const auto& s = *state_;
  for (const auto& [id, buf] : s.buffers) {
    LocalFile f;
    f.file_id = id;
    f.path = s.paths.at(id);
    f.buffer = buf;
    for (const auto& [name, k] : s.keys) {
      if (k.file_id != id) continue;
      TensorMetadata m = k.meta;
      m.dtype = k.dtype;
      m.end = m.begin + m.num_elements() * size_bytes(m.dtype);
      f.tensors.push_back(Landing{name, s.offsets.at(name), m});
    }
    std::sort(f.tensors.begin(), f.tensors.end(),
              [](const Landing& a, const Landing& b) { return a.offset < b.offset; });
    out.push_back(std::move(f));
  }
  return out;
}

std::uint64_t FilesBufferOnDevice::device_bytes() const { return state_ ? state_->device_bytes : 0; }
std::uint64_t FilesBufferOnDevice::transferred_bytes() const { return state_ ? state_->stats.bytes : 0; }

const PlanStats& FilesBufferOnDevice::stats() const {
  static const PlanStats empty;
  return state_ ? state_->stats : empty;
}

// ---------------------------------------------------------------------------
// SafeTensorsFileLoader

SafeTensorsFileLoader::SafeTensorsFileLoader(ProcessGroup group, std::shared_ptr<DevicePool> device,
                                             LoaderConfig config)
    : SafeTensorsFileLoader(std::move(group), DevicePools{{device ? device->device_id() : 0, device}},
                            std::move(config)) {}

SafeTensorsFileLoader::SafeTensorsFileLoader(ProcessGroup group, DevicePools devices, LoaderConfig config)
    : group_(std::move(group)), devices_(std::move(devices)), config_(std::move(config)) {
  if (devices_.empty() || std::any_of(devices_.begin(), devices_.end(), [](const auto& d) { return !d.second; })) {
    throw Error(ErrorCode::InvalidArgument, "loader needs at least one device pool");
  }
  if (!config_.topology) {
    NumaNode node;
    node.physical_cpus = std::max(1u, std::thread::hardware_concurrency());
    for (const auto& [id, pool] : devices_) node.device_ids.push_back(id);
    node.storage_ids = {0};
    config_.topology = Topology{{node}};
  }
  config_.topology->check();
}

void SafeTensorsFileLoader::require_open() const {
  if (closed_) throw Error(ErrorCode::UseAfterClose, "loader is closed");
}

void SafeTensorsFileLoader::add_filenames(const FileMapping& mapping) {
  require_open();
  std::vector<detail::LoadedFile> files;
  std::map<std::string, detail::KeyEntry> keys = keys_;
  std::map<std::string, std::filesystem::path> where;
  for (const auto& [name, k] : keys_) where[name] = files_[k.file_id].path;

  std::size_t next_id = files_.size();
  for (const auto& [rank, paths] : mapping) {
    if (rank >= group_.world_size()) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("files mapped to rank {} in a world of {}", rank, group_.world_size()));
    }
    for (const auto& path : paths) {
      detail::LoadedFile f;
      f.file_id = next_id++;
      f.rank = rank;
      f.path = path;
      f.parsed = read_header(path, config_.header_cap);
      for (const auto& t : f.parsed.header.tensors) {
        if (auto it = where.find(t.name); it != where.end()) {
          throw Error(ErrorCode::DuplicateKey,
                      fmt::format("'{}' appears in {} and {}", t.name, it->second.string(), path.string()));
        }
        where[t.name] = path;
        DType to = t.dtype;
        if (auto c = config_.conversions.find(t.dtype); c != config_.conversions.end() && c->second != t.dtype) {
          if (!conversion_supported(t.dtype, c->second)) {
            throw Error(ErrorCode::UnsupportedConversion,
                        fmt::format("{} -> {}", to_string(t.dtype), to_string(c->second)));
          }
          to = c->second;
        }
        keys[t.name] = detail::KeyEntry{rank, f.file_id, t, to};
      }
      files.push_back(std::move(f));
    }
  }
  for (auto& f : files) files_.push_back(std::move(f));
  keys_ = std::move(keys);

  const auto bytes = rank_bytes();
  const auto [lo, hi] = std::minmax_element(bytes.begin(), bytes.end());
  if (group_.world_size() > 1 && *hi > 0 && (*lo == 0 || *hi > 2 * *lo)) {
    warnings_.push_back(fmt::format("skewed placement: rank bytes range from {} to {}", *lo, *hi));
  }
}

std::vector<std::uint64_t> SafeTensorsFileLoader::rank_bytes() const {
  std::vector<std::uint64_t> bytes(group_.world_size(), 0);
  for (const auto& f : files_) bytes[f.rank] += f.parsed.file_size - f.parsed.header.body_offset();
  return bytes;
}

FilesBufferOnDevice SafeTensorsFileLoader::copy_files_to_device() {
  require_open();
  if (files_.empty()) throw Error(ErrorCode::EmptyFileList, "add_filenames was not called with any file");

  auto state = std::make_unique<detail::FilesState>();
  state->group = group_;
  state->pool = devices_.begin()->second;
  state->config = config_;
  state->keys = keys_;
  for (const auto& f : files_) state->paths[f.file_id] = f.path;

  const DeviceBackend backend = DeviceBackend::of(config_.backend, config_.host_bounce_bytes);
  const std::uint64_t align = std::max<std::size_t>(backend.transfer_alignment, 1);

  std::exception_ptr error;
  try {
    std::vector<FileSpec> specs;
    std::map<std::size_t, std::vector<Landing>> landings;
    for (const auto& f : files_) {
      if (f.rank != group_.rank()) continue;
      const auto& h = f.parsed.header;
      FileSpec spec;
      spec.file_id = f.file_id;
      spec.path = f.path;
      spec.size = f.parsed.file_size;
      spec.storage_id = config_.storage_of ? config_.storage_of(f.path) : 0;
      spec.range_begin = h.body_offset() / align * align;
      auto& ls = landings[f.file_id];
      for (const auto& t : h.tensors) ls.push_back(Landing{t.name, landing_offset(h, t, spec.range_begin), t});
      spec.min_capacity = relocation_extent(plan_relocation(ls, config_.conversions));
      specs.push_back(std::move(spec));
    }

    if (!specs.empty()) {
      std::vector<int> targets;
      for (const auto& [id, pool] : devices_) targets.push_back(id);
      PlanOptions options;
      options.block_size = config_.block_size;
      options.max_workers = config_.max_workers;
      options.workers = config_.workers;
      const TransferPlan plan = build_plan(specs, backend, *config_.topology, targets, options);
      TransferResult result = execute_plan(plan, backend, devices_);
      state->stats = std::move(result.stats);
      for (auto& [id, buf] : result.buffers) {
        state->device_bytes += buf.capacity();
        state->buffers.emplace(id, std::move(buf));
      }

      for (auto& [id, ls] : landings) {
        const DeviceBuffer& buf = state->buffers.at(id);
        const auto placed = relocate(buf, ls, config_.conversions, config_.device_bounce_bytes);
        for (const auto& r : placed) {
          state->offsets[r.name] = r.offset;
          state->survivors[r.name] = {buf.weak(), r.offset};
        }
        buf.set_refcount(ls.size());
        state->handed_out.push_back(buf.weak());
      }
      if (config_.auto_release) {
        for (auto it = state->buffers.begin(); it != state->buffers.end();) {
          if (it->second.refcount() == 0) {
            it->second.release();
            it = state->buffers.erase(it);
          } else {
            ++it;
          }
        }
      }
    }
  } catch (...) {
    error = std::current_exception();
    for (auto& [id, buf] : state->buffers) buf.invalidate();
    state->buffers.clear();
  }

  // Every rank learns whether any rank failed, so none is left waiting in a
  // later collective.
  if (group_.world_size() > 1) {
    const auto posts = group_.arrive("copy_files_to_device", error ? &error : nullptr);
    std::exception_ptr first;
    for (const void* p : posts) {
      if (p != nullptr) {
        first = *static_cast<const std::exception_ptr*>(p);
        break;
      }
    }
    group_.depart();
    if (first && !error) {
      for (auto& [id, buf] : state->buffers) buf.invalidate();
      state->buffers.clear();
      std::rethrow_exception(first);
    }
  }
  if (error) std::rethrow_exception(error);
  return FilesBufferOnDevice(std::move(state));
}

void SafeTensorsFileLoader::close() noexcept {
  closed_ = true;
  files_.clear();
  keys_.clear();
}

}  // namespace aggload
