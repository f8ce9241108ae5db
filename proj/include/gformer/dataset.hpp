// SPDX-License-Identifier: Apache-2.0
//
// Paired HQ/LQ synthetic datasets: generation, manifest CSV and loading.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gformer/degrade.hpp"
#include "gformer/image.hpp"

namespace gformer {

struct ManifestRow {
  std::size_t id = 0;
  std::uint64_t identity_seed = 0;
  std::uint64_t sample_seed = 0;
  DegradationParams params;
  std::string lq_path, hq_path;  // relative to the manifest's directory

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct DatasetOptions {
  std::size_t identities = 2;
  std::size_t samples_per_identity = 2;
  std::size_t resolution = 64;
  std::uint64_t seed = 0;
  /// Fraction of identities assigned to train.csv; 0 writes manifest.csv only.
  double split = 0.0;
  /// 0 means std::thread::hardware_concurrency().
  std::size_t workers = 0;
};

/// One HQ/LQ pair. `lq` has the 8-bit values the file on disk would hold.
struct Sample {
  ManifestRow row;
  Image hq, lq;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seeds and degradation parameters for every row, identity-major. Row i*K+k
/// is sample k of identity i. A drawn tau that does not divide the resolution
/// is redrawn from the same stream.
std::vector<ManifestRow> plan_dataset(const DatasetOptions& options);

/// Renders the planned rows in memory across a worker pool. Deterministic
/// regardless of the worker count.
std::vector<Sample> render_samples(const std::vector<ManifestRow>& rows, std::size_t resolution,
                                   std::size_t workers = 0);

/// Writes hq/ and lq/ images plus manifest.csv (and train.csv/test.csv when
/// options.split is in (0, 1)) under `dir`. Returns the full manifest.
std::vector<ManifestRow> synthesize_dataset(const std::filesystem::path& dir, const DatasetOptions& options);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
/// Throws FormatError on a wrong header, field count or unparsable field.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

/// Training pair as the restorer sees it: LQ enlarged back to the HQ size by
/// nearest-neighbour replication.
struct Pair {
  Image input, target;
};

Pair to_pair(const Sample& s);
/// Reads every row of a manifest, resolving paths against its directory.
std::vector<Pair> load_pairs(const std::filesystem::path& manifest, std::size_t workers = 0);

}  // namespace gformer
