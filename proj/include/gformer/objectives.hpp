// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: pixel L1, a perceptual distance under a frozen random
// convolutional feature extractor, the logistic adversarial pair and the
// multi-resolution pyramid term.

#pragma once

#include <cstdint>
#include <vector>

#include "gformer/config.hpp"
#include "gformer/model.hpp"
#include "gformer/ops.hpp"
#include "gformer/params.hpp"

namespace gformer {

struct LossWeights {
  double l1 = 0.1;
  double perceptual = 1.0;
  double adversarial = 0.1;
  // The pyramid term always has weight 1.
};

template <typename T>
struct LossTerms {
  Tensor<T> l1, perceptual, adversarial, pyramid, total;
};

/// Mean absolute difference.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& y, const Tensor<T>& y_hat);

/// Five stride-2 3x3 convolutions with SiLU between them, 8 to 128 channels.
/// Weights come from a seeded normal draw and never receive gradients.
template <typename T>
class PerceptualExtractor {
 public:
  static constexpr std::size_t kLayers = 5;
  static constexpr std::uint64_t kDefaultSeed = 0x9e3779b97f4a7c15ULL;

  explicit PerceptualExtractor(std::uint64_t seed = kDefaultSeed);

  std::vector<Tensor<T>> features(const Tensor<T>& x) const;
  const std::vector<Tensor<T>>& weights() const { return weights_; }

 private:
  std::vector<Tensor<T>> weights_;
};

/// Mean L1 distance over the concatenated features of every extractor layer.
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& y, const Tensor<T>& y_hat, const PerceptualExtractor<T>& phi);

/// Generator side: mean of log(1 + exp(-D(y_hat))).
template <typename T>
Tensor<T> adversarial_loss_g(const Tensor<T>& d_fake);

/// Discriminator side: mean softplus(-D(real)) + mean softplus(D(fake)).
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

/// Sum over levels of the mean L1 distance between each pyramid image and
/// the area-downsampled ground truth at its resolution.
template <typename T>
Tensor<T> pyramid_loss(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& y, std::size_t expected_levels);

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& y, const Tensor<T>& y_hat, const std::vector<Tensor<T>>& pyramid,
                        const Tensor<T>& d_fake, const LossWeights& weights, const PerceptualExtractor<T>& phi);

/// Parameters of the discriminator ("disc." prefix): a 1x1 input layer,
/// one stride-2 3x3 stage per entry of cfg.discriminator_channels down to
/// 4x4, then a linear head.
std::vector<ParameterSpec> discriminator_parameter_specs(const ModelConfig& cfg);
ParameterStore<float> init_discriminator_parameters(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
class Discriminator {
 public:
  Discriminator(ModelConfig cfg, ParameterStore<T> params);

  /// One logit per image, shape B x 1.
  Tensor<T> forward(const Tensor<T>& x) const;

  const ParameterStore<T>& params() const { return params_; }
  ParameterStore<T>& params() { return params_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
};

}  // namespace gformer
