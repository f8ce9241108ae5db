// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient checks over the library's differentiable code,
// grouped by scope. Shared by the command-line tool and the acceptance run.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gformer/config.hpp"

namespace gformer {

struct CheckResult {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed() const { return max_relative_error <= tolerance; }
};

enum class GradcheckScope { Op, Block, Model };

GradcheckScope parse_gradcheck_scope(const std::string& text);

/// Every check of one scope, in double precision on seeded random data.
std::vector<CheckResult> run_gradchecks(GradcheckScope scope, std::uint64_t seed);

/// Full restorer, discriminator logit and total loss on one image, probing a
/// random `fraction` of the restorer's parameters. Steps start at `eps` and grow
/// for scalars whose gradient is too small to resolve at that step.
CheckResult model_gradcheck(const ModelConfig& cfg, std::uint64_t seed, double fraction = 0.01,
                            double eps = 1e-6);

}  // namespace gformer
