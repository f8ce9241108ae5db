// SPDX-License-Identifier: Apache-2.0
#include "gformer/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "gformer/errors.hpp"

namespace gformer {

namespace {

void same_shape(const Image& a, const Image& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw DimensionError(fmt::format("image shapes differ: {}x{}x{} vs {}x{}x{}", a.channels, a.height, a.width,
                                     b.channels, b.height, b.width));
  }
}

std::vector<double> luma(const Image& im) {
  std::vector<double> out(im.pixels(), 0.0);
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t i = 0; i < im.pixels(); ++i) out[i] += im.data[c * im.pixels() + i];
  for (double& v : out) v /= static_cast<double>(im.channels);
  return out;
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

// Weights of source cells [0, n) covering output cell o of m along one axis.
std::vector<std::pair<std::size_t, double>> coverage(std::size_t o, std::size_t m, std::size_t n) {
  const double scale = static_cast<double>(n) / static_cast<double>(m);
  const double lo = o * scale, hi = (o + 1) * scale;
  std::vector<std::pair<std::size_t, double>> w;
  for (auto i = static_cast<std::size_t>(std::floor(lo)); i < n && static_cast<double>(i) < hi; ++i) {
    const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
    if (overlap > 0) w.emplace_back(i, overlap / scale);
  }
  return w;
}

}  // namespace

double psnr(const Image& y, const Image& y_hat, double max_val) {
  same_shape(y, y_hat);
  double se = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const double d = static_cast<double>(y.data[i]) - y_hat.data[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / (se / static_cast<double>(y.data.size())));
}

double ssim(const Image& y, const Image& y_hat, double range) {
  same_shape(y, y_hat);
  constexpr std::size_t kWin = 8;
  if (y.height < kWin || y.width < kWin) throw DimensionError("ssim needs at least 8x8 pixels");
  const auto a = luma(y), b = luma(y_hat);
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  const double n = kWin * kWin;
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + kWin <= y.height; ++r)
    for (std::size_t c = 0; c + kWin <= y.width; ++c) {
      double sa = 0, sb = 0;
      for (std::size_t i = 0; i < kWin; ++i)
        for (std::size_t j = 0; j < kWin; ++j) {
          sa += a[(r + i) * y.width + c + j];
          sb += b[(r + i) * y.width + c + j];
        }
      const double ma = sa / n, mb = sb / n;
      double vaa = 0, vbb = 0, vab = 0;
      for (std::size_t i = 0; i < kWin; ++i)
        for (std::size_t j = 0; j < kWin; ++j) {
          const double da = a[(r + i) * y.width + c + j] - ma, db = b[(r + i) * y.width + c + j] - mb;
          vaa += da * da, vbb += db * db, vab += da * db;
        }
      vaa /= n, vbb /= n, vab /= n;
      total += (2 * ma * mb + c1) * (2 * vab + c2) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

std::vector<double> code_plane(const Image& image) {
  if (image.height < kCodeSide || image.width < kCodeSide) {
    throw DimensionError(fmt::format("iris code needs at least {0}x{0} pixels, got {1}x{2}", kCodeSide, image.height,
                                     image.width));
  }
  const auto g = luma(image);
  std::vector<double> out(kCodeSide * kCodeSide, 0.0);
  for (std::size_t oy = 0; oy < kCodeSide; ++oy) {
    const auto wy = coverage(oy, kCodeSide, image.height);
    for (std::size_t ox = 0; ox < kCodeSide; ++ox) {
      const auto wx = coverage(ox, kCodeSide, image.width);
      double acc = 0.0;
      for (const auto& [y, a] : wy)
        for (const auto& [x, b] : wx) acc += a * b * g[y * image.width + x];
      out[oy * kCodeSide + ox] = acc;
    }
  }
  return out;
}

std::vector<double> gabor_kernel(std::size_t orientation) {
  constexpr double kWavelength = 10.0, kSigma = 4.0;
  const double theta = static_cast<double>(orientation) * std::numbers::pi / kCodeOrientations;
  const int size = 2 * kGaborRadius + 1;
  std::vector<double> k(static_cast<std::size_t>(size * size));
  double mean = 0.0;
  for (int y = -kGaborRadius; y <= kGaborRadius; ++y)
    for (int x = -kGaborRadius; x <= kGaborRadius; ++x) {
      const double u = x * std::cos(theta) + y * std::sin(theta);
      const double v = (x * x + y * y) / (2.0 * kSigma * kSigma);
      const double w = std::exp(-v) * std::cos(2.0 * std::numbers::pi * u / kWavelength);
      k[static_cast<std::size_t>((y + kGaborRadius) * size + x + kGaborRadius)] = w;
      mean += w;
    }
  mean /= static_cast<double>(k.size());
  for (double& w : k) w -= mean;
  return k;
}

IrisCode iris_code(const Image& image) {
  const auto plane = code_plane(image);
  IrisCode code{std::vector<std::uint64_t>(kCodeBits / 64, 0)};
  const int size = 2 * kGaborRadius + 1;
  for (std::size_t o = 0; o < kCodeOrientations; ++o) {
    const auto k = gabor_kernel(o);
    for (std::size_t y = 0; y < kCodeSide; ++y)
      for (std::size_t x = 0; x < kCodeSide; ++x) {
        double r = 0.0;
        for (int dy = -kGaborRadius; dy <= kGaborRadius; ++dy) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + dy, kCodeSide);
          for (int dx = -kGaborRadius; dx <= kGaborRadius; ++dx) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x) + dx, kCodeSide);
            r += k[static_cast<std::size_t>((dy + kGaborRadius) * size + dx + kGaborRadius)] *
                 plane[sy * kCodeSide + sx];
          }
        }
        if (r > 0.0) {
          const std::size_t bit = (o * kCodeSide + y) * kCodeSide + x;
          code.words[bit / 64] |= std::uint64_t{1} << (bit % 64);
        }
      }
  }
  return code;
}

double match_score(const IrisCode& a, const IrisCode& b) {
  if (a.words.size() != b.words.size()) throw DimensionError("iris codes differ in length");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i) differ += static_cast<std::size_t>(std::popcount(a.words[i] ^ b.words[i]));
  return 1.0 - static_cast<double>(differ) / static_cast<double>(a.words.size() * 64);
}

RocCurve roc(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty()) throw std::invalid_argument("ROC needs genuine and impostor scores");
  auto g = s.genuine, im = s.impostor;
  for (double v : g)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite genuine score");
  for (double v : im)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite impostor score");
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> thresholds(g);
  thresholds.insert(thresholds.end(), im.begin(), im.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  auto at_least = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t)) /
           static_cast<double>(sorted.size());
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  RocCurve curve;
  curve.points.push_back({kInf, 0.0, 0.0});
  for (double t : thresholds) curve.points.push_back({t, at_least(im, t), at_least(g, t)});
  curve.points.push_back({-kInf, 1.0, 1.0});
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i - 1];
    const auto& q = curve.points[i];
    area += (q.far - p.far) * (q.tar + p.tar) / 2.0;
  }
  return area;
}

double auc_mann_whitney(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty()) throw std::invalid_argument("AUC needs genuine and impostor scores");
  auto im = s.impostor;
  std::sort(im.begin(), im.end());
  double wins = 0.0;
  for (double g : s.genuine) {
    const auto lo = std::lower_bound(im.begin(), im.end(), g);
    const auto hi = std::upper_bound(lo, im.end(), g);
    wins += static_cast<double>(lo - im.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(s.genuine.size()) * static_cast<double>(s.impostor.size()));
}

double eer(const RocCurve& curve) {
  // FAR - FRR rises from -1 to +1 along the sweep.
  const auto& pts = curve.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].far - (1.0 - pts[i].tar);
    if (d < 0.0) continue;
    if (d == 0.0 || i == 0) return pts[i].far;
    const double dp = pts[i - 1].far - (1.0 - pts[i - 1].tar);
    const double a = -dp / (d - dp);
    return pts[i - 1].far + a * (pts[i].far - pts[i - 1].far);
  }
  return 1.0;
}

double tar_at_far(const RocCurve& curve, double far_target) {
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.far <= far_target) best = std::max(best, p.tar);
  return best;
}

std::vector<LabelledScore> pair_scores(const std::vector<IrisCode>& probes, const std::vector<IrisCode>& references,
                                       const std::vector<std::uint64_t>& identities) {
  if (probes.size() != identities.size() || references.size() != identities.size()) {
    throw DimensionError("probes, references and identities must align");
  }
  std::vector<LabelledScore> out;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = 0; j < references.size(); ++j)
      out.push_back({i, j, identities[i] == identities[j], match_score(probes[i], references[j]), true});
    for (std::size_t j = i + 1; j < probes.size(); ++j)
      out.push_back({i, j, identities[i] == identities[j], match_score(probes[i], probes[j]), false});
  }
  return out;
}

ScoreSet to_score_set(const std::vector<LabelledScore>& scores) {
  ScoreSet s;
  for (const auto& l : scores) (l.genuine ? s.genuine : s.impostor).push_back(l.score);
  return s;
}

Metrics summarize(const ScoreSet& scores, const std::vector<double>& psnrs, const std::vector<double>& ssims) {
  const RocCurve curve = roc(scores);
  Metrics m;
  m.auc = auc(curve);
  m.eer = eer(curve);
  m.tar_far_001 = tar_at_far(curve, 0.001);
  m.tar_far_01 = tar_at_far(curve, 0.01);
  m.tar_far_1 = tar_at_far(curve, 0.1);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
  };
  m.psnr_mean = mean(psnrs);
  m.ssim_mean = mean(ssims);
  return m;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.10g}", v);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_scores_csv(const std::filesystem::path& path, const std::vector<LabelledScore>& scores) {
  auto out = open_out(path);
  out << "pair_id,label,score\n";
  for (const auto& s : scores) {
    out << fmt::format("p{}-{}{},{},{}\n", s.a, s.against_reference ? "r" : "p", s.b,
                       s.genuine ? "genuine" : "impostor", format_number(s.score));
  }
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, Metrics>>& rows) {
  auto out = open_out(path);
  out << "method,auc,eer,tar_far_001,tar_far_01,tar_far_1,psnr_mean,ssim_mean\n";
  for (const auto& [name, m] : rows) {
    out << name;
    for (double v : {m.auc, m.eer, m.tar_far_001, m.tar_far_01, m.tar_far_1, m.psnr_mean, m.ssim_mean}) {
      out << ',' << format_number(v);
    }
    out << '\n';
  }
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  auto out = open_out(path);
  out << "threshold,far,tar\n";
  for (const auto& p : curve.points)
    out << format_number(p.threshold) << ',' << format_number(p.far) << ',' << format_number(p.tar) << '\n';
}

}  // namespace gformer
