// SPDX-License-Identifier: Apache-2.0
//
// The restoration network: a Transformer encoder with channel-wise
// ("depth-wise") self-attention, convolutional refinement and an MLP latent
// head, feeding a style-modulated generator whose blocks are modulated by
// fused encoder features through a channel-split feature transform.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gformer/config.hpp"
#include "gformer/ops.hpp"
#include "gformer/params.hpp"

namespace gformer {

// ---------------------------------------------------------------------------
// Encoder building blocks

template <typename T>
struct AttentionWeights {
  Tensor<T> qkv_pointwise;  // 3C x C x 1 x 1
  Tensor<T> qkv_depthwise;  // 3C x 1 x 3 x 3
  Tensor<T> theta;          // one learnable temperature per head
  Tensor<T> projection;     // C x C x 1 x 1
};

/// Storage and work of the score matrix of one attention call.
struct AttentionProbe {
  Shape score_shape;
  std::size_t score_scalars = 0;
  std::uint64_t score_macs = 0;
};

/// Channel attention on precomputed Q, K, V (each BxCxHxW). Per head, the
/// channels of Q and K are L2-normalized over pixels, the C_h x C_h score
/// beta = Q^T K is scaled by theta and softmaxed along its second index, and
/// each output channel is the resulting convex combination of V channels.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& theta,
                            std::size_t heads, AttentionProbe* probe = nullptr);

/// Depth-wise self-attention: pointwise then depthwise convolutions produce
/// Q, K, V from the normalized input, followed by channel_attention and an
/// output projection. The caller adds the residual.
template <typename T>
Tensor<T> dsa_attention(const Tensor<T>& y, const AttentionWeights<T>& w, std::size_t heads,
                        AttentionProbe* probe = nullptr);

/// Conventional pixel-to-pixel attention on precomputed Q, K, V, with an
/// HW x HW score. Reference only; refuses more than 4096 pixels.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            AttentionProbe* probe = nullptr);

/// spatial_attention behind the same projections as dsa_attention.
template <typename T>
Tensor<T> spatial_attention_reference(const Tensor<T>& y, const AttentionWeights<T>& w,
                                      AttentionProbe* probe = nullptr);

inline constexpr std::size_t kMaxSpatialAttentionPixels = 4096;

template <typename T>
struct FeedForwardWeights {
  Tensor<T> expand;     // 2h x C x 1 x 1
  Tensor<T> depthwise;  // 2h x 1 x 3 x 3
  Tensor<T> project;    // C x h x 1 x 1
};

/// Gated depth-wise feed-forward network: expand to two h-channel halves,
/// 3x3 depthwise mixing, GELU(a) * b, project back.
template <typename T>
Tensor<T> dfn_forward(const Tensor<T>& x, const FeedForwardWeights<T>& w);

template <typename T>
struct TransformerBlockWeights {
  Tensor<T> norm1_gain, norm1_bias;
  AttentionWeights<T> attention;
  Tensor<T> norm2_gain, norm2_bias;
  FeedForwardWeights<T> ffn;
};

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockWeights<T>& w, std::size_t heads);

// ---------------------------------------------------------------------------
// Modulator and generator building blocks

template <typename T>
struct FusionWeights {
  std::optional<Tensor<T>> align;  // 1x1, only when channel counts differ
  Tensor<T> conv, bias;            // 3x3
};

/// Start of the fusion recursion: the state before level 1 is the latent
/// code itself.
template <typename T>
Tensor<T> initial_fusion_state(const Tensor<T>& latent) {
  return latent;
}

/// Level >= 2 fusion: upsample the previous fusion state x2, align its
/// channels, add the skip feature, 3x3 convolution.
template <typename T>
Tensor<T> fuse(const Tensor<T>& previous, const Tensor<T>& skip, const FusionWeights<T>& w);

/// Level 1 fusion: the latent vector is projected and reshaped into a map at
/// the skip's resolution before the same add-and-convolve step.
template <typename T>
Tensor<T> fuse_latent(const Tensor<T>& latent, const Tensor<T>& projection, const Tensor<T>& projection_bias,
                      const Tensor<T>& skip, const FusionWeights<T>& w);

template <typename T>
struct ModulatedConvWeights {
  Tensor<T> weight;      // C_out x C_in x 3 x 3
  Tensor<T> bias;        // C_out
  Tensor<T> style;       // latent_dim x C_in
  Tensor<T> style_bias;  // C_in
};

/// Per-sample kernels B x C_out x C_in x k x k: `w` scaled by `style`
/// (B x C_in) along the input axis, then optionally demodulated so every
/// output channel has unit L2 norm.
template <typename T>
Tensor<T> modulate_weights(const Tensor<T>& w, const Tensor<T>& style, bool demodulate);

/// 1 / sqrt(E[silu(z)^2]) for z ~ N(0, 1). Demodulated kernels keep unit
/// variance through the convolution; this keeps it through the activation.
inline constexpr double kModulatedActivationGain = 1.6765324703310909;

/// Style-modulated 3x3 convolution, bias and SiLU, scaled by the gain above.
template <typename T>
Tensor<T> modulated_conv(const Tensor<T>& x, const Tensor<T>& latent, const ModulatedConvWeights<T>& w,
                         bool demodulate = true);

template <typename T>
struct GeneratorBlockWeights {
  ModulatedConvWeights<T> conv0, conv1;
};

/// Two modulated convolutions driven by styles derived from the latent.
template <typename T>
Tensor<T> generator_block(const Tensor<T>& input, const Tensor<T>& latent, const GeneratorBlockWeights<T>& w,
                          bool demodulate = true);

template <typename T>
struct SftWeights {
  Tensor<T> scale, scale_bias;  // 3x3, C_fusion -> C - split
  Tensor<T> shift, shift_bias;  // 3x3, C_fusion -> C - split
};

/// mu and sigma maps from the fusion feature, one 3x3 branch each.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sft_factors(const Tensor<T>& fusion, const SftWeights<T>& w);

/// Channel-split feature transform: the first `split` channels of f_g pass
/// through, the rest become mu * f_g + sigma.
template <typename T>
Tensor<T> cs_sft(const Tensor<T>& f_g, const Tensor<T>& mu, const Tensor<T>& sigma, std::size_t split);

/// 1x1 convolution to three channels.
template <typename T>
Tensor<T> to_rgb(const Tensor<T>& feature, const Tensor<T>& w, const Tensor<T>& bias);

/// Fully connected layer on B x in rows; `w` is in x out.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// ---------------------------------------------------------------------------
// Whole network

template <typename T>
struct FeatureBundle {
  std::vector<Tensor<T>> skips;  // deepest first
  Tensor<T> latent;              // B x latent_dim
};

template <typename T>
struct GformerOutput {
  Tensor<T> restored;              // B x 3 x R x R
  std::vector<Tensor<T>> pyramid;  // one RGB image per level, deepest first
};

/// Parameter name prefix of the generative prior (generator blocks, constant
/// input and output head). Everything else belongs to the encoder or the
/// modulators.
inline constexpr const char* kPriorPrefix = "gen.";

struct ParameterSpec {
  std::string name;
  Shape shape;
  /// Normal(0, gain^2 / fan_in) when fan_in > 0, otherwise every entry is `fill`.
  std::size_t fan_in = 0;
  double gain = 1.0;
  double fill = 0.0;
};

/// Every weight of the restorer in creation order, with its initializer.
std::vector<ParameterSpec> gformer_parameter_specs(const ModelConfig& cfg);
ParameterStore<float> init_parameters(const std::vector<ParameterSpec>& specs, std::uint64_t seed);
ParameterStore<float> init_gformer_parameters(const ModelConfig& cfg, std::uint64_t seed);
/// Throws ConfigError unless `store` holds exactly `specs` (names, order and shapes).
template <typename T>
void check_parameters(const ParameterStore<T>& store, const std::vector<ParameterSpec>& specs);

template <typename T>
class Gformer {
 public:
  Gformer(ModelConfig cfg, ParameterStore<T> params);

  const ModelConfig& config() const { return cfg_; }
  const ParameterStore<T>& params() const { return params_; }
  ParameterStore<T>& params() { return params_; }

  /// `x` must already be at the model's input resolution.
  FeatureBundle<T> encode(const Tensor<T>& x) const;
  GformerOutput<T> decode(const FeatureBundle<T>& features) const;
  GformerOutput<T> forward(const Tensor<T>& x) const { return decode(encode(x)); }

  /// The prior on its own: generator blocks from the constant input driven by
  /// `latent`, no encoder features, output through the final head.
  Tensor<T> generate(const Tensor<T>& latent) const;

  TransformerBlockWeights<T> transformer_weights(std::size_t level) const;
  GeneratorBlockWeights<T> generator_weights(std::size_t level) const;
  FusionWeights<T> fusion_weights(std::size_t level) const;
  SftWeights<T> sft_weights(std::size_t level) const;

 private:
  const Tensor<T>& p(const std::string& name) const { return params_.at(name); }

  ModelConfig cfg_;
  ParameterStore<T> params_;
};

}  // namespace gformer
