// SPDX-License-Identifier: Apache-2.0
#include "gformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <random>

#include "gformer/errors.hpp"
#include "gformer/model.hpp"

namespace gformer {

namespace {

Tensor<float> random_image(std::size_t c, std::size_t side, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(c * side * side);
  for (auto& x : v) x = n(rng);
  return Tensor<float>({1, c, side, side}, std::move(v));
}

}  // namespace

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

AttentionBench bench_attention(std::size_t channels, std::size_t heads, const std::vector<std::size_t>& sides,
                               std::uint64_t seed, double min_trial_ms) {
  if (sides.size() < 2) throw ConfigError("bench-attention needs at least two sizes");
  if (heads == 0 || channels % heads != 0) throw ConfigError("channels must split evenly into heads");
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  const Tensor<float> theta = Tensor<float>::ones({heads});
  AttentionBench bench;
  for (std::size_t side : sides) {
    if (side == 0) throw ConfigError("sizes must be positive");
    const auto q = random_image(channels, side, rng), k = random_image(channels, side, rng),
               v = random_image(channels, side, rng);
    AttentionBenchRow row;
    row.hw = side * side;
    AttentionProbe probe;
    channel_attention(q, k, v, theta, heads, &probe);
    row.channel_flops = 2 * probe.score_macs;
    row.channel_score_bytes = probe.score_scalars * sizeof(float);
    if (row.hw <= kMaxSpatialAttentionPixels) {
      AttentionProbe sp;
      spatial_attention(q, k, v, &sp);
      row.spatial_flops = 2 * sp.score_macs;
      row.spatial_score_bytes = sp.score_scalars * sizeof(float);
    }
    using clock = std::chrono::steady_clock;
    double best = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
      std::size_t reps = 0;
      const auto t0 = clock::now();
      double elapsed = 0.0;
      do {
        channel_attention(q, k, v, theta, heads);
        ++reps;
        elapsed = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      } while (elapsed < min_trial_ms);
      best = std::min(best, elapsed / static_cast<double>(reps));
    }
    row.channel_ms = best;
    bench.rows.push_back(row);
  }
  std::vector<double> x, y;
  for (const auto& r : bench.rows) x.push_back(static_cast<double>(r.hw)), y.push_back(r.channel_ms);
  bench.linear_r2 = linear_fit_r2(x, y);
  return bench;
}

void write_bench_csv(std::ostream& out, const AttentionBench& bench) {
  out << "hw,channel_flops,channel_score_bytes,spatial_flops,spatial_score_bytes,channel_ms\n";
  for (const auto& r : bench.rows) {
    out << r.hw << ',' << r.channel_flops << ',' << r.channel_score_bytes << ',';
    if (r.spatial_flops) out << *r.spatial_flops;
    out << ',';
    if (r.spatial_score_bytes) out << *r.spatial_score_bytes;
    out << ',' << r.channel_ms << '\n';
  }
}

}  // namespace gformer
