// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "gformer/ops.hpp"
#include "gformer/tensor.hpp"

namespace gformer {

struct GradcheckOptions {
  double eps = 1e-4;
  /// Fraction of input scalars probed; 1 checks every scalar.
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
  /// When above eps, a scalar whose estimated rounding error exceeds
  /// roundoff_target relative is measured again with the largest step up to
  /// max_eps that moves the summed entries of `terms` by at most max_movement
  /// in total. Keeping that movement small keeps the step clear of kinks such
  /// as |r| at r = 0.
  double max_eps = 0.0;
  double roundoff_target = 1e-6;
  double max_movement = 2e-8;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. The error of one scalar is
///   |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
/// Inputs must be double-precision leaves with requires_grad set; they are
/// perturbed in place and restored.
///
/// `terms` returns tensors whose summed entries make up the function. The two
/// perturbed evaluations are subtracted entry by entry before anything is
/// reduced, so the difference is not limited by the rounding of a large total.
inline GradcheckReport gradcheck_terms_report(const std::function<std::vector<Tensor<double>>()>& terms,
                                              std::vector<Tensor<double>> inputs,
                                              const GradcheckOptions& options = {}) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw ContractError("gradcheck input does not require grad");
    in.zero_grad();
  }
  {
    Tensor<double> loss;
    for (const auto& t : terms()) loss = loss.defined() ? add(loss, sum(t)) : sum(t);
    backward(loss);
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GradcheckReport report;
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (options.sample_fraction < 1.0 && unit(rng) >= options.sample_fraction) continue;
      const double original = values[i];
      struct Estimate {
        double numeric, rounding, movement;
      };
      auto central = [&](double h) {
        NoGradGuard no_grad;
        values[i] = original + h;
        const auto plus = terms();
        values[i] = original - h;
        const auto minus = terms();
        values[i] = original;
        double diff = 0.0, movement = 0.0, squares = 0.0;
        for (std::size_t k = 0; k < plus.size(); ++k) {
          const auto p = plus[k].values(), m = minus[k].values();
          for (std::size_t j = 0; j < p.size(); ++j) {
            diff += p[j] - m[j];
            movement += std::abs(p[j] - m[j]);
            if (p[j] != m[j]) squares += p[j] * p[j];
          }
        }
        // Each entry that moved carries independent rounding of about one ulp.
        const double rounding = 2.0 * std::numeric_limits<double>::epsilon() * std::sqrt(squares) / h;
        return Estimate{diff / (2.0 * h), rounding, movement};
      };
      const Estimate first = central(options.eps);
      double numeric = first.numeric;
      if (options.max_eps > options.eps && first.rounding > options.roundoff_target * std::abs(first.numeric)) {
        double h = options.max_eps;
        if (first.movement > 0.0) h = std::min(h, options.eps * options.max_movement / first.movement);
        if (h > options.eps) numeric = central(h).numeric;
      }
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
      ++report.checked;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline GradcheckReport gradcheck_report(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                        const GradcheckOptions& options = {}) {
  return gradcheck_terms_report([&] { return std::vector<Tensor<double>>{f()}; }, std::move(inputs), options);
}

inline double gradcheck(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                        double eps = 1e-4) {
  return gradcheck_report(f, std::move(inputs), GradcheckOptions{eps}).max_relative_error;
}

}  // namespace gformer
