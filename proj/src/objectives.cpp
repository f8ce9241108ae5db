// SPDX-License-Identifier: Apache-2.0
#include "gformer/objectives.hpp"

#include "gformer/errors.hpp"

namespace gformer {

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& y, const Tensor<T>& y_hat) {
  if (y.shape() != y_hat.shape()) {
    throw DimensionError("l1_loss: " + to_string(y.shape()) + " vs " + to_string(y_hat.shape()));
  }
  return mean(abs(sub(y_hat, y)));
}

template <typename T>
PerceptualExtractor<T>::PerceptualExtractor(std::uint64_t seed) {
  Initializer init(seed);
  std::size_t c_in = 3;
  for (std::size_t c_out : {8u, 16u, 32u, 64u, 128u}) {
    const Shape shape{c_out, c_in, 3, 3};
    const auto values = init.he_normal(shape, c_in * 9, 1.0);
    weights_.emplace_back(shape, std::vector<T>(values.begin(), values.end()), false);
    c_in = c_out;
  }
}

template <typename T>
std::vector<Tensor<T>> PerceptualExtractor<T>::features(const Tensor<T>& x) const {
  std::vector<Tensor<T>> out;
  Tensor<T> h = x;
  for (const auto& w : weights_) {
    h = silu(conv2d(h, w, 2, 1));
    out.push_back(h);
  }
  return out;
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& y, const Tensor<T>& y_hat, const PerceptualExtractor<T>& phi) {
  if (y.shape() != y_hat.shape()) {
    throw DimensionError("perceptual_loss: " + to_string(y.shape()) + " vs " + to_string(y_hat.shape()));
  }
  const auto fy = phi.features(y);
  const auto fh = phi.features(y_hat);
  std::size_t count = 0;
  Tensor<T> acc;
  for (std::size_t i = 0; i < fy.size(); ++i) {
    const Tensor<T> s = sum(abs(sub(fh[i], fy[i])));
    acc = acc.defined() ? add(acc, s) : s;
    count += fy[i].numel();
  }
  return mul_scalar(acc, T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> adversarial_loss_g(const Tensor<T>& d_fake) {
  return mean(softplus(mul_scalar(d_fake, T(-1))));
}

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return add(mean(softplus(mul_scalar(d_real, T(-1)))), mean(softplus(d_fake)));
}

template <typename T>
Tensor<T> pyramid_loss(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& y, std::size_t expected_levels) {
  if (pyramid.size() != expected_levels || pyramid.empty()) {
    throw DimensionError("pyramid has " + std::to_string(pyramid.size()) + " levels, expected " +
                         std::to_string(expected_levels));
  }
  Tensor<T> acc;
  for (const auto& level : pyramid) {
    if (level.rank() != 4 || level.dim(2) == 0 || y.dim(2) % level.dim(2) != 0) {
      throw DimensionError("pyramid level " + to_string(level.shape()) + " does not tile " + to_string(y.shape()));
    }
    const Tensor<T> term = l1_loss(downsample_area(y, y.dim(2) / level.dim(2)), level);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& y, const Tensor<T>& y_hat, const std::vector<Tensor<T>>& pyramid,
                        const Tensor<T>& d_fake, const LossWeights& weights, const PerceptualExtractor<T>& phi) {
  if (weights.l1 < 0 || weights.perceptual < 0 || weights.adversarial < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  LossTerms<T> t;
  t.l1 = l1_loss(y, y_hat);
  t.perceptual = perceptual_loss(y, y_hat, phi);
  t.adversarial = adversarial_loss_g(d_fake);
  t.pyramid = pyramid_loss(pyramid, y, pyramid.size());
  t.total = add(add(add(mul_scalar(t.l1, static_cast<T>(weights.l1)),
                        mul_scalar(t.perceptual, static_cast<T>(weights.perceptual))),
                    mul_scalar(t.adversarial, static_cast<T>(weights.adversarial))),
                t.pyramid);
  return t;
}

// ---------------------------------------------------------------------------

std::vector<ParameterSpec> discriminator_parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParameterSpec> specs;
  const auto& ch = cfg.discriminator_channels;
  specs.push_back({"disc.from_rgb.w", {ch[0], 3, 1, 1}, 3, 1.0, 0.0});
  specs.push_back({"disc.from_rgb.b", {ch[0]}, 0, 1.0, 0.0});
  std::size_t c_prev = ch[0];
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "disc.s" + std::to_string(i);
    specs.push_back({p + ".w", {ch[i], c_prev, 3, 3}, c_prev * 9, 1.0, 0.0});
    specs.push_back({p + ".b", {ch[i]}, 0, 1.0, 0.0});
    c_prev = ch[i];
  }
  const std::size_t flat = c_prev * 16;
  specs.push_back({"disc.head.w", {flat, 1}, flat, 1.0, 0.0});
  specs.push_back({"disc.head.b", {1}, 0, 1.0, 0.0});
  return specs;
}

ParameterStore<float> init_discriminator_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  return init_parameters(discriminator_parameter_specs(cfg), seed);
}

template <typename T>
Discriminator<T>::Discriminator(ModelConfig cfg, ParameterStore<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  check_parameters(params_, discriminator_parameter_specs(cfg_));
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& x) const {
  const std::size_t r = cfg_.input_resolution;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != r || x.dim(3) != r) {
    throw ConfigError("discriminator expects Bx3x" + std::to_string(r) + "x" + std::to_string(r) + ", got " +
                      to_string(x.shape()));
  }
  Tensor<T> h = silu(add_channel_bias(pointwise_conv(x, params_.at("disc.from_rgb.w")), params_.at("disc.from_rgb.b")));
  for (std::size_t i = 0; i < cfg_.discriminator_channels.size(); ++i) {
    const std::string p = "disc.s" + std::to_string(i);
    h = silu(add_channel_bias(conv2d(h, params_.at(p + ".w"), 2, 1), params_.at(p + ".b")));
  }
  const Tensor<T> flat = reshape(h, Shape{h.dim(0), h.numel() / h.dim(0)});
  return linear(flat, params_.at("disc.head.w"), params_.at("disc.head.b"));
}

#define GFORMER_INSTANTIATE_OBJECTIVES(T)                                                                      \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                              \
  template class PerceptualExtractor<T>;                                                                       \
  template Tensor<T> perceptual_loss(const Tensor<T>&, const Tensor<T>&, const PerceptualExtractor<T>&);       \
  template Tensor<T> adversarial_loss_g(const Tensor<T>&);                                                     \
  template Tensor<T> discriminator_loss(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> pyramid_loss(const std::vector<Tensor<T>>&, const Tensor<T>&, std::size_t);               \
  template LossTerms<T> total_loss(const Tensor<T>&, const Tensor<T>&, const std::vector<Tensor<T>>&,          \
                                   const Tensor<T>&, const LossWeights&, const PerceptualExtractor<T>&);       \
  template class Discriminator<T>;

GFORMER_INSTANTIATE_OBJECTIVES(float)
GFORMER_INSTANTIATE_OBJECTIVES(double)

}  // namespace gformer
