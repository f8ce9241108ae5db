// SPDX-License-Identifier: Apache-2.0
//
// Synthetic degradation (Gaussian blur, linear motion blur, area
// downsampling) and a procedural iris-like texture generator.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "gformer/image.hpp"

namespace gformer {

struct DegradationParams {
  int delta = 3;       // Gaussian kernel size, odd, 3..15
  int gamma = 3;       // motion kernel length, odd, 3..15
  double angle = 0.0;  // motion direction, [0, pi)
  int tau = 1;         // downsample factor, 1..4
  std::uint64_t seed = 0;

  /// Throws ConfigError when a field is outside its range.
  void validate() const;
  friend bool operator==(const DegradationParams&, const DegradationParams&) = default;
};

/// Square kernel, row-major, rows running down the image.
struct Kernel {
  std::size_t size = 0;
  std::vector<double> weights;

  double at(std::size_t row, std::size_t col) const { return weights[row * size + col]; }
};

/// Sampled 2-D Gaussian with sigma = size / 4, normalized to unit mass.
Kernel gaussian_kernel(int size);
/// Unit-mass segment of `length` samples through the center, each sample
/// split bilinearly over its four nearest grid points.
Kernel motion_kernel(int length, double angle);
Kernel impulse_kernel();

/// Reflect-padded correlation of every channel with `k`, in double precision.
Image convolve_reflect(const Image& image, const Kernel& k);
/// Mean over tau x tau blocks. Throws DimensionError unless tau divides both extents.
Image downsample_area(const Image& image, std::size_t tau);

struct DegradeOptions {
  /// Test hook: replace both blur kernels with impulses.
  bool identity_kernels = false;
};

/// Blur with the Gaussian, then the motion kernel, downsample by tau and clamp
/// to [0, 1].
Image degrade(const Image& y, const DegradationParams& p, const DegradeOptions& options = {});

/// delta and gamma uniform over {3, 5, ..., 15}, tau over {1, 2, 3, 4}, angle
/// over [0, pi). Draws straight from the engine so streams are identical
/// across standard libraries.
DegradationParams sample_params(std::mt19937_64& rng);

/// Gray iris-like texture replicated to three channels: a pupil disc, an
/// annulus of band-limited radial and angular structure with crypts, and a
/// limbus ring. identity_seed fixes the structure; sample_seed only applies a
/// small gain, offset and noise jitter.
Image synth_iris(std::uint64_t identity_seed, std::uint64_t sample_seed, std::size_t resolution);

}  // namespace gformer
