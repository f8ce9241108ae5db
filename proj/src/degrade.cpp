// SPDX-License-Identifier: Apache-2.0
#include "gformer/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gformer/errors.hpp"

namespace gformer {

namespace {

void check_kernel_size(int size, const char* name) {
  if (size < 3 || size > 15 || size % 2 == 0) {
    throw ConfigError(std::string(name) + " must be odd and in [3, 15], got " + std::to_string(size));
  }
}

void normalize(Kernel& k) {
  double total = 0.0;
  for (double w : k.weights) total += w;
  for (double& w : k.weights) w /= total;
}

// Mirror without repeating the edge sample: -1 -> 1, n -> n - 2.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

// Uniform double in [0, 1) from the top 53 bits of one draw.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

struct Planes {
  std::size_t channels, height, width;
  std::vector<double> v;
};

Planes correlate(const Planes& in, const Kernel& k) {
  Planes out{in.channels, in.height, in.width, std::vector<double>(in.v.size(), 0.0)};
  const auto r = static_cast<std::ptrdiff_t>(k.size / 2);
  std::vector<std::size_t> cols(in.width * k.size);
  for (std::size_t x = 0; x < in.width; ++x)
    for (std::size_t kx = 0; kx < k.size; ++kx)
      cols[x * k.size + kx] = reflect(static_cast<std::ptrdiff_t>(x + kx) - r, in.width);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* plane = in.v.data() + c * in.height * in.width;
    double* dst = out.v.data() + c * in.height * in.width;
    for (std::size_t y = 0; y < in.height; ++y) {
      for (std::size_t ky = 0; ky < k.size; ++ky) {
        const double* row = plane + reflect(static_cast<std::ptrdiff_t>(y + ky) - r, in.height) * in.width;
        const double* kw = k.weights.data() + ky * k.size;
        for (std::size_t x = 0; x < in.width; ++x) {
          const std::size_t* cx = cols.data() + x * k.size;
          double acc = 0.0;
          for (std::size_t kx = 0; kx < k.size; ++kx) acc += kw[kx] * row[cx[kx]];
          dst[y * in.width + x] += acc;
        }
      }
    }
  }
  return out;
}

Planes to_planes(const Image& image) {
  return {image.channels, image.height, image.width, std::vector<double>(image.data.begin(), image.data.end())};
}

Image to_image(const Planes& p, bool clamp) {
  Image out(p.channels, p.height, p.width);
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    out.data[i] = static_cast<float>(clamp ? std::clamp(p.v[i], 0.0, 1.0) : p.v[i]);
  }
  return out;
}

Planes block_mean(const Planes& in, std::size_t tau) {
  if (tau == 0 || in.height % tau != 0 || in.width % tau != 0) {
    throw DimensionError("downsample factor " + std::to_string(tau) + " does not divide " +
                         std::to_string(in.height) + "x" + std::to_string(in.width));
  }
  if (tau == 1) return in;
  const std::size_t h = in.height / tau, w = in.width / tau;
  Planes out{in.channels, h, w, std::vector<double>(in.channels * h * w, 0.0)};
  const double scale = 1.0 / static_cast<double>(tau * tau);
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < tau; ++dy)
          for (std::size_t dx = 0; dx < tau; ++dx)
            acc += in.v[(c * in.height + y * tau + dy) * in.width + x * tau + dx];
        out.v[(c * h + y) * w + x] = acc * scale;
      }
  return out;
}

}  // namespace

void DegradationParams::validate() const {
  check_kernel_size(delta, "delta");
  check_kernel_size(gamma, "gamma");
  if (!(angle >= 0.0 && angle < std::numbers::pi)) {
    throw ConfigError("motion angle must be in [0, pi), got " + std::to_string(angle));
  }
  if (tau < 1 || tau > 4) throw ConfigError("tau must be in [1, 4], got " + std::to_string(tau));
}

Kernel gaussian_kernel(int size) {
  check_kernel_size(size, "Gaussian kernel size");
  const double sigma = size / 4.0;
  const int c = size / 2;
  Kernel k{static_cast<std::size_t>(size), std::vector<double>(static_cast<std::size_t>(size * size))};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d2 = static_cast<double>((x - c) * (x - c) + (y - c) * (y - c));
      k.weights[static_cast<std::size_t>(y * size + x)] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  normalize(k);
  return k;
}

Kernel motion_kernel(int length, double angle) {
  check_kernel_size(length, "motion length");
  if (!std::isfinite(angle)) throw ConfigError("motion angle must be finite");
  const auto n = static_cast<std::size_t>(length);
  Kernel k{n, std::vector<double>(n * n, 0.0)};
  const double c = static_cast<double>(length / 2);
  // Snap near-integer coordinates so cos(pi/2) lands exactly on the grid.
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double mass = 1.0 / length;
  for (int t = -(length - 1) / 2; t <= (length - 1) / 2; ++t) {
    const double px = snap(c + t * dx), py = snap(c + t * dy);
    const double x0 = std::floor(px), y0 = std::floor(py);
    const double fx = px - x0, fy = py - y0;
    const double share[2][2] = {{(1 - fy) * (1 - fx), (1 - fy) * fx}, {fy * (1 - fx), fy * fx}};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        if (share[a][b] == 0.0) continue;
        const auto row = static_cast<std::size_t>(y0) + static_cast<std::size_t>(a);
        const auto col = static_cast<std::size_t>(x0) + static_cast<std::size_t>(b);
        k.weights[row * n + col] += mass * share[a][b];
      }
  }
  normalize(k);
  return k;
}

Kernel impulse_kernel() { return Kernel{1, {1.0}}; }

Image convolve_reflect(const Image& image, const Kernel& k) {
  return to_image(correlate(to_planes(image), k), false);
}

Image downsample_area(const Image& image, std::size_t tau) {
  return to_image(block_mean(to_planes(image), tau), false);
}

Image degrade(const Image& y, const DegradationParams& p, const DegradeOptions& options) {
  p.validate();
  const auto tau = static_cast<std::size_t>(p.tau);
  if (y.height % tau != 0 || y.width % tau != 0) {
    throw DimensionError("image " + std::to_string(y.height) + "x" + std::to_string(y.width) +
                         " is not divisible by tau=" + std::to_string(p.tau));
  }
  const Kernel g = options.identity_kernels ? impulse_kernel() : gaussian_kernel(p.delta);
  const Kernel m = options.identity_kernels ? impulse_kernel() : motion_kernel(p.gamma, p.angle);
  return to_image(block_mean(correlate(correlate(to_planes(y), g), m), tau), true);
}

DegradationParams sample_params(std::mt19937_64& rng) {
  DegradationParams p;
  p.delta = 3 + 2 * static_cast<int>(rng() % 7);
  p.gamma = 3 + 2 * static_cast<int>(rng() % 7);
  p.tau = 1 + static_cast<int>(rng() % 4);
  p.angle = unit(rng) * std::numbers::pi;
  p.seed = rng();
  return p;
}

Image synth_iris(std::uint64_t identity_seed, std::uint64_t sample_seed, std::size_t resolution) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::mt19937_64 id(identity_seed);

  const double cx = uniform(id, -0.03, 0.03), cy = uniform(id, -0.03, 0.03);
  const double r_pupil = uniform(id, 0.09, 0.15), r_iris = uniform(id, 0.38, 0.45);
  const double pupil_level = uniform(id, 0.03, 0.10);
  const double iris_level = uniform(id, 0.35, 0.60);
  const double sclera_level = uniform(id, 0.45, 0.75);
  const double contrast = uniform(id, 0.16, 0.24);

  struct Wave {
    int m;
    double radial, twist, phase_a, phase_r, amp;
  };
  std::vector<Wave> waves(12);
  for (auto& w : waves) {
    w.m = 3 + static_cast<int>(id() % 14);
    w.radial = uniform(id, 0.5, 4.0);
    w.twist = uniform(id, -2.0, 2.0);
    w.phase_a = uniform(id, 0.0, kTwoPi);
    w.phase_r = uniform(id, 0.0, kTwoPi);
    w.amp = uniform(id, 0.5, 1.0);
  }
  double power = 0.0;
  for (const auto& w : waves) power += w.amp * w.amp / 4.0;
  const double wave_norm = 1.0 / std::sqrt(power);

  struct Crypt {
    double rho, theta, s_rho, s_theta, depth;
  };
  std::vector<Crypt> crypts(4 + id() % 6);
  for (auto& c : crypts) {
    c.rho = uniform(id, 0.15, 0.85);
    c.theta = uniform(id, 0.0, kTwoPi);
    c.s_rho = uniform(id, 0.04, 0.10);
    c.s_theta = uniform(id, 0.08, 0.25);
    c.depth = uniform(id, 0.10, 0.25);
  }
  const double collarette = uniform(id, 0.25, 0.40);
  const double collarette_gain = uniform(id, -0.12, 0.12);

  std::mt19937_64 sample(sample_seed ^ (identity_seed * 0x9e3779b97f4a7c15ULL));
  const double gain = uniform(sample, 0.93, 1.07), offset = uniform(sample, -0.03, 0.03);
  constexpr double kNoise = 0.01;

  const double edge = 0.7 / static_cast<double>(resolution);
  auto step = [edge](double d) { return 1.0 / (1.0 + std::exp(-d / edge)); };

  Image out(3, resolution, resolution);
  for (std::size_t py = 0; py < resolution; ++py) {
    for (std::size_t px = 0; px < resolution; ++px) {
      const double u = (static_cast<double>(px) + 0.5) / static_cast<double>(resolution) - 0.5 - cx;
      const double v = (static_cast<double>(py) + 0.5) / static_cast<double>(resolution) - 0.5 - cy;
      const double r = std::hypot(u, v), theta = std::atan2(v, u);
      const double rho = std::clamp((r - r_pupil) / (r_iris - r_pupil), 0.0, 1.0);

      double texture = 0.0;
      for (const auto& w : waves) {
        texture += w.amp * std::cos(w.m * theta + w.phase_a + w.twist * rho) *
                   std::cos(kTwoPi * w.radial * rho + w.phase_r);
      }
      double iris = iris_level + contrast * wave_norm * texture;
      for (const auto& c : crypts) {
        double dt = std::remainder(theta - c.theta, kTwoPi);
        const double dr = rho - c.rho;
        iris -= c.depth * std::exp(-0.5 * (dr * dr / (c.s_rho * c.s_rho) + dt * dt / (c.s_theta * c.s_theta)));
      }
      const double dc = (rho - collarette) / 0.03;
      iris += collarette_gain * std::exp(-0.5 * dc * dc);
      // Darker limbus just inside the outer boundary.
      const double dl = (r - r_iris) / 0.02;
      iris -= 0.12 * std::exp(-0.5 * dl * dl);

      const double s_pupil = step(r - r_pupil), s_iris = step(r - r_iris);
      const double value = pupil_level * (1.0 - s_pupil) + s_pupil * (iris * (1.0 - s_iris) + sclera_level * s_iris);

      // Box-Muller, one draw pair per pixel so the stream does not depend on the library.
      const double n1 = std::max(unit(sample), 0x1.0p-53), n2 = unit(sample);
      const double noise = std::sqrt(-2.0 * std::log(n1)) * std::cos(kTwoPi * n2);
      const auto f = static_cast<float>(std::clamp(gain * value + offset + kNoise * noise, 0.0, 1.0));
      for (std::size_t c = 0; c < 3; ++c) out.at(c, py, px) = f;
    }
  }
  return out;
}

}  // namespace gformer
