// Copyright 2026 The aggload Authors
// SPDX-License-Identifier: Apache-2.0

#include "aggload/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ostream>
#include <mutex>
#include <thread>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "aggload/collective.hpp"
#include "aggload/corpus.hpp"
#include "aggload/file.hpp"
#include "aggload/format.hpp"
#include "aggload/loader.hpp"
#include "aggload/reference.hpp"

namespace aggload::cli {

int exit_code(const Error& e) noexcept {
  switch (error_category(e.code())) {
    case ErrorCategory::Format: return kExitFormat;
    case ErrorCategory::Io: return kExitIo;
    case ErrorCategory::Collective: return kExitCollective;
    case ErrorCategory::Other: break;
  }
  return kExitOther;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json ranks = nlohmann::json::array();
  for (const auto& r : per_rank) {
    ranks.push_back({{"rank", r.rank},
                     {"bytes", r.bytes},
                     {"device_bytes", r.device_bytes},
                     {"transfer_seconds", r.transfer_seconds},
                     {"workers", r.workers},
                     {"blocks", r.blocks},
                     {"cross_numa_blocks", r.cross_numa_blocks},
                     {"keys_owned", r.keys_owned}});
  }
  return {{"elapsed_seconds", elapsed_seconds},
          {"bytes", bytes},
          {"throughput_bytes_per_sec", throughput_bytes_per_sec},
          {"workers", workers},
          {"block_size", block_size},
          {"backend", backend},
          {"loader", loader},
          {"world_size", world_size},
          {"dim", dim},
          {"per_rank", ranks},
          {"cross_numa_blocks", cross_numa_blocks},
          {"runs", runs},
          {"sharded_keys", sharded_keys},
          {"broadcast_keys", broadcast_keys},
          {"cold", cold},
          {"verified", verified},
          {"warnings", warnings}};
}

std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, fmt::format("cannot list {}: {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == ".safetensors") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::EmptyFileList, fmt::format("no .safetensors files in {}", dir.string()));
  return files;
}

namespace {

using Clock = std::chrono::steady_clock;

struct RunResult {
  double seconds = 0.0;
  std::vector<RankStats> ranks;
  std::size_t sharded = 0;
  std::size_t broadcast = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
  std::vector<std::string> warnings;
};

bool shardable(const TensorMetadata& m, std::size_t dim, std::size_t world) {
  return world > 1 && dim < m.shape.size() && m.shape[dim] >= world;
}

RunResult run_aggregated(const BenchOptions& o, const std::vector<std::filesystem::path>& files, bool verify) {
  RunResult result;
  result.ranks.resize(o.world_size);
  auto groups = ProcessGroup::create(o.world_size);
  const FileMapping mapping = round_robin(files, o.world_size);

  LoaderConfig config;
  config.backend = o.backend;
  config.workers = o.workers;
  config.max_workers = o.max_workers;
  config.block_size = o.block_size;
  config.topology = o.topology;
  if (!config.topology) {
    auto t = Topology::single_node(std::max(1u, std::thread::hardware_concurrency()), static_cast<int>(o.world_size));
    config.topology = t;
  }

  std::mutex mu;
  const auto start = Clock::now();
  run_ranks(groups, [&](ProcessGroup& group) {
    const std::size_t rank = group.rank();
    auto pool = DevicePool::create(static_cast<int>(rank));
    SafeTensorsFileLoader loader(group, pool, config);
    loader.add_filenames(mapping);
    FilesBufferOnDevice fb = loader.copy_files_to_device();

    std::map<std::string, std::filesystem::path> source_of;
    if (verify) {
      for (const auto& [r, paths] : mapping) {
        for (const auto& p : paths) {
          for (const auto& t : read_header(p).header.tensors) source_of[t.name] = p;
        }
      }
    }

    std::size_t sharded = 0, broadcast = 0, mismatches = 0, owned = 0;
    std::string first_mismatch;
    for (const auto& key : fb.keys()) {
      const TensorMetadata meta = fb.metadata(key);
      if (fb.owner(key) == rank) ++owned;
      const bool shard = shardable(meta, o.dim, o.world_size);
      TensorView v = shard ? fb.get_sharded(key, o.dim) : fb.get_tensor(key);
      ++(shard ? sharded : broadcast);
      if (!verify) continue;
      auto expected = reference::read_tensor(source_of.at(key), key);
      if (shard) expected = reference::shard(expected, o.dim, rank, o.world_size);
      const auto got = v.data();
      if (v.dtype() != expected.dtype || v.shape() != expected.shape || got.size() != expected.bytes.size() ||
          !std::equal(got.begin(), got.end(), expected.bytes.begin())) {
        if (mismatches++ == 0) first_mismatch = fmt::format("rank {} key {}", rank, key);
      }
    }

    RankStats rs;
    rs.rank = rank;
    rs.bytes = fb.transferred_bytes();
    rs.device_bytes = fb.device_bytes();
    rs.transfer_seconds = fb.stats().elapsed_seconds;
    rs.workers = fb.stats().workers;
    rs.blocks = fb.stats().blocks;
    rs.cross_numa_blocks = fb.stats().cross_numa_blocks;
    rs.keys_owned = owned;
    fb.close();
    loader.close();

    std::lock_guard lock(mu);
    result.ranks[rank] = rs;
    if (rank == 0) {
      result.sharded = sharded;
      result.broadcast = broadcast;
      result.warnings = loader.warnings();
    }
    result.mismatches += mismatches;
    if (!first_mismatch.empty() && result.first_mismatch.empty()) result.first_mismatch = first_mismatch;
  });
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

RunResult run_naive(const std::vector<std::filesystem::path>& files) {
  RunResult result;
  auto pool = DevicePool::create(0);
  const auto start = Clock::now();
  const auto stats = reference::naive_load(files, *pool);
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  RankStats rs;
  rs.bytes = stats.bytes;
  rs.workers = 1;
  rs.keys_owned = stats.tensors;
  rs.transfer_seconds = result.seconds;
  result.ranks.push_back(rs);
  result.broadcast = stats.tensors;
  return result;
}

void drop_caches(const std::vector<std::filesystem::path>& files) {
  for (const auto& p : files) File(p).drop_cache();
}

}  // namespace

BenchReport run_bench(const BenchOptions& o) {
  if (o.world_size == 0) throw Error(ErrorCode::InvalidArgument, "world size must be positive");
  if (o.repeat == 0) throw Error(ErrorCode::InvalidArgument, "repeat must be positive");
  if (o.loader == LoaderKind::Naive && o.world_size != 1) {
    throw Error(ErrorCode::InvalidArgument, "the naive loader runs a single rank");
  }
  const auto files = list_corpus(o.dir);

  BenchReport report;
  report.backend = std::string(to_string(o.backend));
  report.loader = o.loader == LoaderKind::Naive ? "naive" : "aggregated";
  report.world_size = o.world_size;
  report.dim = o.dim;
  report.block_size = o.block_size;
  report.cold = o.cold;

  // Throwaway pass: warms the page cache and checks every result.
  if (o.loader == LoaderKind::Aggregated) {
    const RunResult check = run_aggregated(o, files, /*verify=*/true);
    if (check.mismatches != 0) {
      throw Error(ErrorCode::VerificationFailed,
                  fmt::format("{} results differ from the reference loader (first: {})", check.mismatches,
                              check.first_mismatch));
    }
  } else {
    run_naive(files);
  }
  report.verified = true;

  std::vector<RunResult> runs;
  for (std::size_t i = 0; i < o.repeat; ++i) {
    if (o.cold) drop_caches(files);
    runs.push_back(o.loader == LoaderKind::Aggregated ? run_aggregated(o, files, false) : run_naive(files));
    report.runs.push_back(runs.back().seconds);
  }
  std::vector<std::size_t> order(runs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return runs[a].seconds < runs[b].seconds; });
  const RunResult& median = runs[order[order.size() / 2]];

  report.elapsed_seconds = median.seconds;
  report.per_rank = median.ranks;
  for (const auto& r : median.ranks) {
    report.bytes += r.bytes;
    report.cross_numa_blocks += r.cross_numa_blocks;
    report.workers = std::max(report.workers, r.workers);
  }
  report.throughput_bytes_per_sec = median.seconds > 0 ? static_cast<double>(report.bytes) / median.seconds : 0.0;
  report.sharded_keys = median.sharded;
  report.broadcast_keys = median.broadcast;
  report.warnings = median.warnings;
  return report;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

nlohmann::ordered_json inspect_json(const std::filesystem::path& path) {
  const ParsedFile f = read_header(path);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : f.header.tensors) {
    tensors.push_back({{"name", t.name},
                       {"dtype", std::string(to_string(t.dtype))},
                       {"shape", t.shape},
                       {"data_offsets", {t.begin, t.end}}});
  }
  nlohmann::ordered_json doc;
  doc["header_len"] = f.header.header_len;
  doc["body_offset"] = f.header.body_offset();
  doc["tensors"] = tensors;
  doc["metadata"] = f.header.metadata ? nlohmann::ordered_json(*f.header.metadata) : nlohmann::ordered_json();
  return doc;
}

nlohmann::ordered_json shard_plan_json(const std::filesystem::path& path, std::size_t world, std::size_t dim) {
  const ParsedFile f = read_header(path);
  nlohmann::ordered_json keys = nlohmann::ordered_json::array();
  for (const auto& t : f.header.tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    try {
      const ShardSpec spec = partition(t, dim, world);
      entry["parts"] = spec.part_shapes;
      entry["starts"] = spec.starts;
    } catch (const Error& e) {
      entry["error"] = std::string(error_name(e.code()));
      entry["message"] = e.what();
    }
    keys.push_back(entry);
  }
  nlohmann::ordered_json doc;
  doc["file"] = path.string();
  doc["world_size"] = world;
  doc["dim"] = dim;
  doc["keys"] = keys;
  return doc;
}

std::optional<Topology> resolve_topology(const std::string& flag) {
  if (!flag.empty()) return Topology::load(flag);
  if (const char* env = std::getenv("AGGLOAD_TOPOLOGY"); env != nullptr && *env != '\0') return Topology::load(env);
  return std::nullopt;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aggregated safetensors loader: corpus generation, inspection and load benchmarks", "aggload"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "write a seeded corpus");
  corpus::SizedOptions gen_opts;
  std::string gen_dtype = "F16";
  std::uint64_t gen_pad = 0;
  std::filesystem::path gen_out;
  gen->add_option("--files", gen_opts.files, "number of files")->check(CLI::PositiveNumber);
  gen->add_option("--bytes-per-file", gen_opts.bytes_per_file, "file size (accepts K/M/G suffixes)")
      ->transform(CLI::AsSizeValue(false));
  gen->add_option("--dtype", gen_dtype, "tensor dtype");
  gen->add_option("--seed", gen_opts.seed, "random seed");
  auto* pad_opt = gen->add_option("--pad-header", gen_pad, "exact header length in bytes");
  gen->add_option("--tensors", gen_opts.tensors_per_file, "tensors per file")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output directory")->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "print a file's header as JSON");
  std::filesystem::path inspect_file;
  inspect->add_option("file", inspect_file, "safetensors file")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "time the full load pipeline");
  BenchOptions bench_opts;
  std::string bench_backend = "host";
  std::string bench_loader = "aggregated";
  std::string bench_topology;
  std::size_t bench_workers = 0;
  bench->add_option("--dir", bench_opts.dir, "corpus directory")->required();
  bench->add_option("--backend", bench_backend, "host or simdirect")->check(CLI::IsMember({"host", "simdirect"}));
  auto* workers_opt = bench->add_option("--workers", bench_workers, "I/O workers per rank")->check(CLI::PositiveNumber);
  bench->add_option("--max-workers", bench_opts.max_workers, "worker cap when --workers is absent");
  bench->add_option("--block-size", bench_opts.block_size, "transfer block size (accepts K/M/G suffixes)")
      ->transform(CLI::AsSizeValue(false));
  bench->add_option("--world-size", bench_opts.world_size, "ranks")->check(CLI::PositiveNumber);
  bench->add_option("--dim", bench_opts.dim, "shard dimension when world size > 1");
  bench->add_option("--topology", bench_topology, "topology JSON (default: $AGGLOAD_TOPOLOGY)");
  bench->add_option("--repeat", bench_opts.repeat, "timed runs; the median is reported")->check(CLI::PositiveNumber);
  bench->add_flag("--cold", bench_opts.cold, "drop cached file pages before each timed run");
  bench->add_option("--loader", bench_loader, "aggregated or naive")->check(CLI::IsMember({"aggregated", "naive"}));

  // shard-plan
  auto* shard = app.add_subcommand("shard-plan", "print per-key shard shapes");
  std::filesystem::path shard_file;
  std::size_t shard_world = 1;
  std::size_t shard_dim = 0;
  shard->add_option("file", shard_file, "safetensors file")->required();
  shard->add_option("--world-size", shard_world, "ranks")->check(CLI::PositiveNumber);
  shard->add_option("--dim", shard_dim, "shard dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      gen_opts.dtype = parse_dtype(gen_dtype);
      if (pad_opt->count() > 0) gen_opts.pad_header = gen_pad;
      const auto paths = corpus::write_sized(gen_out, gen_opts);
      std::uint64_t total = 0;
      nlohmann::json names = nlohmann::json::array();
      for (const auto& p : paths) {
        total += std::filesystem::file_size(p);
        names.push_back(p.string());
      }
      out << nlohmann::json{{"files", names}, {"total_bytes", total}}.dump(2) << '\n';
    } else if (*inspect) {
      out << inspect_json(inspect_file).dump(2) << '\n';
    } else if (*bench) {
      bench_opts.backend = parse_backend(bench_backend);
      bench_opts.loader = bench_loader == "naive" ? LoaderKind::Naive : LoaderKind::Aggregated;
      if (workers_opt->count() > 0) bench_opts.workers = bench_workers;
      bench_opts.topology = resolve_topology(bench_topology);
      const BenchReport report = run_bench(bench_opts);
      for (const auto& w : report.warnings) err << "warning: " << w << '\n';
      out << report.to_json().dump(2) << '\n';
    } else if (*shard) {
      out << shard_plan_json(shard_file, shard_world, shard_dim).dump(2) << '\n';
    }
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "IoError: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("aggload");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace aggload::cli
