// SPDX-License-Identifier: Apache-2.0
//
// Cost of channel attention against the pixel-to-pixel reference as the
// image grows.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace gformer {

struct AttentionBenchRow {
  std::size_t hw = 0;
  std::uint64_t channel_flops = 0;  // 2 x multiply-accumulates of the score product
  std::uint64_t channel_score_bytes = 0;
  std::optional<std::uint64_t> spatial_flops, spatial_score_bytes;  // empty beyond the reference's pixel limit
  double channel_ms = 0.0;  // best of several timed runs
};

struct AttentionBench {
  std::vector<AttentionBenchRow> rows;
  /// Coefficient of determination of a least-squares line through (hw, channel_ms).
  double linear_r2 = 0.0;
};

/// Float channel attention on 1 x channels x side x side inputs for each side.
AttentionBench bench_attention(std::size_t channels, std::size_t heads, const std::vector<std::size_t>& sides,
                               std::uint64_t seed = 0, double min_trial_ms = 20.0);

void write_bench_csv(std::ostream& out, const AttentionBench& bench);

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gformer
