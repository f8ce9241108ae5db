// SPDX-License-Identifier: Apache-2.0
//
// Image-quality metrics, a Gabor-sign iris code matcher and rank metrics over
// genuine/impostor score sets.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gformer/image.hpp"

namespace gformer {

/// 10 log10(max^2 / MSE) over every sample. Identical images give +infinity.
double psnr(const Image& y, const Image& y_hat, double max_val = 1.0);

/// Mean SSIM over all 8x8 windows at stride 1 on the channel-averaged images,
/// with C1 = (0.01 R)^2 and C2 = (0.03 R)^2.
double ssim(const Image& y, const Image& y_hat, double range = 1.0);

constexpr std::size_t kCodeSide = 64;
constexpr std::size_t kCodeOrientations = 4;
constexpr std::size_t kCodeBits = kCodeOrientations * kCodeSide * kCodeSide;

struct IrisCode {
  std::vector<std::uint64_t> words;  // kCodeBits bits, orientation-major
  bool bit(std::size_t i) const { return (words[i / 64] >> (i % 64)) & 1u; }
  friend bool operator==(const IrisCode&, const IrisCode&) = default;
};

/// Channel average, area-resampled to 64x64.
std::vector<double> code_plane(const Image& image);
/// Even Gabor kernel (zero mean) for orientation index 0..3.
std::vector<double> gabor_kernel(std::size_t orientation);
constexpr int kGaborRadius = 8;

/// Sign bits of the four oriented responses, reflect padded. Throws
/// DimensionError for images smaller than 64x64.
IrisCode iris_code(const Image& image);
/// 1 - normalized Hamming distance.
double match_score(const IrisCode& a, const IrisCode& b);

struct ScoreSet {
  std::vector<double> genuine, impostor;
};

struct RocPoint {
  double threshold, far, tar;
};

/// Thresholds +inf, every distinct score in decreasing order, then -inf.
/// A pair is accepted when its score is >= the threshold.
struct RocCurve {
  std::vector<RocPoint> points;
};

/// Throws std::invalid_argument for an empty side or a non-finite score.
RocCurve roc(const ScoreSet& s);
/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);
/// P(genuine > impostor) + P(genuine == impostor) / 2 over all pairs.
double auc_mann_whitney(const ScoreSet& s);
/// FAR where FAR = 1 - TAR, interpolated linearly between bracketing points.
double eer(const RocCurve& curve);
/// Highest TAR among operating points with FAR <= far_target.
double tar_at_far(const RocCurve& curve, double far_target);

struct LabelledScore {
  std::size_t a, b;  // probe index, then probe or reference index
  bool genuine;
  double score;
  bool against_reference;
};

/// Evaluation pairing: every probe against every reference image and every
/// other probe. Pairs with equal identity are genuine, the rest impostor.
std::vector<LabelledScore> pair_scores(const std::vector<IrisCode>& probes, const std::vector<IrisCode>& references,
                                       const std::vector<std::uint64_t>& identities);
ScoreSet to_score_set(const std::vector<LabelledScore>& scores);

struct Metrics {
  double auc = 0, eer = 0, tar_far_001 = 0, tar_far_01 = 0, tar_far_1 = 0, psnr_mean = 0, ssim_mean = 0;
};

Metrics summarize(const ScoreSet& scores, const std::vector<double>& psnrs, const std::vector<double>& ssims);

/// pair_id,label,score
void write_scores_csv(const std::filesystem::path& path, const std::vector<LabelledScore>& scores);
/// method followed by the seven metric columns, one row per method.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, Metrics>>& rows);
/// threshold,far,tar
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);

std::string format_number(double v);

}  // namespace gformer
