// SPDX-License-Identifier: Apache-2.0
#include "gformer/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "gformer/errors.hpp"

namespace gformer {

namespace {

constexpr const char* kHeader = "id,identity_seed,sample_seed,delta,gamma,angle,tau,lq_path,hq_path";

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

template <class T>
T parse_field(const std::string& s, const char* name, std::size_t line) {
  T value{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw FormatError(fmt::format("manifest line {}: bad {} '{}'", line, name, s));
  }
  return value;
}

double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError(fmt::format("manifest line {}: bad angle '{}'", line, s));
  return v;
}

std::string image_name(std::size_t id, const char* dir) { return fmt::format("{}/{:06d}.ppm", dir, id); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<ManifestRow> plan_dataset(const DatasetOptions& o) {
  if (o.identities == 0 || o.samples_per_identity == 0) throw ConfigError("dataset needs at least one identity and sample");
  if (o.resolution < 8) throw ConfigError("resolution must be at least 8");
  if (!(o.split >= 0.0 && o.split < 1.0)) throw ConfigError("split must be in [0, 1)");
  std::vector<ManifestRow> rows;
  rows.reserve(o.identities * o.samples_per_identity);
  for (std::size_t i = 0; i < o.identities; ++i) {
    const std::uint64_t identity_seed = splitmix64(o.seed + i);
    for (std::size_t k = 0; k < o.samples_per_identity; ++k) {
      ManifestRow row;
      row.id = rows.size();
      row.identity_seed = identity_seed;
      row.sample_seed = splitmix64(identity_seed ^ splitmix64(k));
      std::mt19937_64 rng(row.sample_seed);
      do {
        row.params = sample_params(rng);
      } while (o.resolution % static_cast<std::size_t>(row.params.tau) != 0);
      row.params.seed = row.sample_seed;
      row.lq_path = image_name(row.id, "lq");
      row.hq_path = image_name(row.id, "hq");
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<Sample> render_samples(const std::vector<ManifestRow>& rows, std::size_t resolution, std::size_t workers) {
  std::vector<Sample> out(rows.size());
  parallel_for(rows.size(), workers, [&](std::size_t i) {
    Sample& s = out[i];
    s.row = rows[i];
    s.hq = dequantize(quantize(synth_iris(s.row.identity_seed, s.row.sample_seed, resolution)));
    s.lq = dequantize(quantize(degrade(s.hq, s.row.params)));
  });
  return out;
}

std::vector<ManifestRow> synthesize_dataset(const std::filesystem::path& dir, const DatasetOptions& options) {
  const auto rows = plan_dataset(options);
  std::filesystem::create_directories(dir / "hq");
  std::filesystem::create_directories(dir / "lq");
  parallel_for(rows.size(), options.workers, [&](std::size_t i) {
    const ManifestRow& row = rows[i];
    const Image hq = synth_iris(row.identity_seed, row.sample_seed, options.resolution);
    const ImageFile hq_file = quantize(hq);
    write_image(dir / row.hq_path, hq_file);
    write_image(dir / row.lq_path, degrade(dequantize(hq_file), row.params));
  });
  write_manifest(dir / "manifest.csv", rows);
  if (options.split > 0.0) {
    const auto train_ids = static_cast<std::size_t>(std::lround(options.split * static_cast<double>(options.identities)));
    const std::size_t cut = train_ids * options.samples_per_identity;
    write_manifest(dir / "train.csv", {rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut)});
    write_manifest(dir / "test.csv", {rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end()});
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  out << kHeader << '\n';
  for (const auto& r : rows) {
    if (r.lq_path.find_first_of(",\n") != std::string::npos || r.hq_path.find_first_of(",\n") != std::string::npos) {
      throw FormatError("manifest paths may not contain commas or newlines");
    }
    out << fmt::format("{},{},{},{},{},{:.17g},{},{},{}\n", r.id, r.identity_seed, r.sample_seed, r.params.delta,
                       r.params.gamma, r.params.angle, r.params.tau, r.lq_path, r.hq_path);
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError(path.string() + ": unexpected manifest header");
  std::vector<ManifestRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw FormatError(fmt::format("manifest line {}: expected 9 fields, got {}", n, f.size()));
    ManifestRow r;
    r.id = parse_field<std::size_t>(f[0], "id", n);
    r.identity_seed = parse_field<std::uint64_t>(f[1], "identity_seed", n);
    r.sample_seed = parse_field<std::uint64_t>(f[2], "sample_seed", n);
    r.params.delta = parse_field<int>(f[3], "delta", n);
    r.params.gamma = parse_field<int>(f[4], "gamma", n);
    r.params.angle = parse_double(f[5], n);
    r.params.tau = parse_field<int>(f[6], "tau", n);
    r.params.seed = r.sample_seed;
    r.lq_path = f[7];
    r.hq_path = f[8];
    try {
      r.params.validate();
    } catch (const ConfigError& e) {
      throw FormatError(fmt::format("manifest line {}: {}", n, e.what()));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

Pair to_pair(const Sample& s) {
  return {upsample_nearest(s.lq, s.hq.height / s.lq.height), s.hq};
}

std::vector<Pair> load_pairs(const std::filesystem::path& manifest, std::size_t workers) {
  const auto rows = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<Pair> pairs(rows.size());
  parallel_for(rows.size(), workers, [&](std::size_t i) {
    const Image hq = to_rgb(read_image_float(base / rows[i].hq_path));
    const Image lq = to_rgb(read_image_float(base / rows[i].lq_path));
    if (lq.height == 0 || hq.height % lq.height != 0 || hq.width != hq.height || lq.width != lq.height) {
      throw FormatError(fmt::format("row {}: LQ {}x{} does not tile HQ {}x{}", rows[i].id, lq.width, lq.height,
                                    hq.width, hq.height));
    }
    pairs[i] = {upsample_nearest(lq, hq.height / lq.height), hq};
  });
  return pairs;
}

}  // namespace gformer
