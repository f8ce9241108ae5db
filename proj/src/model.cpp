// SPDX-License-Identifier: Apache-2.0
#include "gformer/model.hpp"

#include "gformer/errors.hpp"

namespace gformer {

namespace {

template <typename T>
Tensor<T> conv_bias(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1) {
  return add_channel_bias(conv2d(x, w, stride, w.dim(2) / 2), b);
}

// Unit L2 norm along the last axis of a [N, C, P] tensor.
template <typename T>
Tensor<T> l2_normalize_last(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const Tensor<T> sq = sum_to(mul(x, x), Shape{s[0], s[1], 1});
  return mul(x, rsqrt(add_scalar(sq, T(1e-12))));
}

template <typename T>
void require_image(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) throw DimensionError(std::string(what) + " expects BxCxHxW, got " + to_string(x.shape()));
}

std::string level_name(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

}  // namespace

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& theta,
                            std::size_t heads, AttentionProbe* probe) {
  require_image(q, "channel_attention");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("channel_attention: Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                         ", V " + to_string(v.shape()));
  }
  const std::size_t batch = q.dim(0), channels = q.dim(1), pixels = q.dim(2) * q.dim(3);
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError(std::to_string(channels) + " channels cannot be split into " + std::to_string(heads) +
                      " heads");
  }
  if (theta.numel() != heads) {
    throw ConfigError("theta holds " + std::to_string(theta.numel()) + " values for " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t ch = channels / heads;
  const Shape per_head{batch * heads, ch, pixels};
  const Tensor<T> qn = l2_normalize_last(reshape(q, per_head));
  const Tensor<T> kn = l2_normalize_last(reshape(k, per_head));

  const std::uint64_t before = FlopCounter::value();
  const Tensor<T> beta = matmul(qn, transpose(kn));
  if (probe) {
    probe->score_shape = beta.shape();
    probe->score_scalars = beta.numel();
    probe->score_macs = FlopCounter::value() - before;
  }

  const Tensor<T> scaled =
      reshape(mul(reshape(beta, Shape{batch, heads, ch, ch}), reshape(theta, Shape{1, heads, 1, 1})),
              Shape{batch * heads, ch, ch});
  const Tensor<T> attn = softmax(scaled, 2);
  return reshape(matmul(attn, reshape(v, per_head)), q.shape());
}

template <typename T>
Tensor<T> dsa_attention(const Tensor<T>& y, const AttentionWeights<T>& w, std::size_t heads, AttentionProbe* probe) {
  require_image(y, "dsa_attention");
  const std::size_t c = y.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ConfigError(std::to_string(c) + " channels cannot be split into " + std::to_string(heads) + " heads");
  }
  const Tensor<T> qkv = depthwise_conv2d(pointwise_conv(y, w.qkv_pointwise), w.qkv_depthwise);
  const Tensor<T> out = channel_attention(slice(qkv, 1, 0, c), slice(qkv, 1, c, 2 * c), slice(qkv, 1, 2 * c, 3 * c),
                                          w.theta, heads, probe);
  return pointwise_conv(out, w.projection);
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, AttentionProbe* probe) {
  require_image(q, "spatial_attention");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("spatial_attention: Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                         ", V " + to_string(v.shape()));
  }
  const std::size_t batch = q.dim(0), channels = q.dim(1), pixels = q.dim(2) * q.dim(3);
  if (pixels > kMaxSpatialAttentionPixels) {
    throw DimensionError("spatial attention over " + std::to_string(pixels) + " pixels exceeds the limit of " +
                         std::to_string(kMaxSpatialAttentionPixels));
  }
  const Shape flat{batch, channels, pixels};
  const std::uint64_t before = FlopCounter::value();
  const Tensor<T> alpha = matmul(transpose(reshape(q, flat)), reshape(k, flat));  // B x HW x HW
  if (probe) {
    probe->score_shape = alpha.shape();
    probe->score_scalars = alpha.numel();
    probe->score_macs = FlopCounter::value() - before;
  }
  const Tensor<T> attn = softmax(alpha, 2);
  // out[p, c] = sum_q attn[p, q] v[q, c], kept channel-major.
  return reshape(matmul(reshape(v, flat), transpose(attn)), q.shape());
}

template <typename T>
Tensor<T> spatial_attention_reference(const Tensor<T>& y, const AttentionWeights<T>& w, AttentionProbe* probe) {
  require_image(y, "spatial_attention_reference");
  const std::size_t c = y.dim(1);
  if (y.dim(2) * y.dim(3) > kMaxSpatialAttentionPixels) {
    throw DimensionError("spatial attention over " + std::to_string(y.dim(2) * y.dim(3)) +
                         " pixels exceeds the limit of " + std::to_string(kMaxSpatialAttentionPixels));
  }
  const Tensor<T> qkv = depthwise_conv2d(pointwise_conv(y, w.qkv_pointwise), w.qkv_depthwise);
  const Tensor<T> out =
      spatial_attention(slice(qkv, 1, 0, c), slice(qkv, 1, c, 2 * c), slice(qkv, 1, 2 * c, 3 * c), probe);
  return pointwise_conv(out, w.projection);
}

template <typename T>
Tensor<T> dfn_forward(const Tensor<T>& x, const FeedForwardWeights<T>& w) {
  require_image(x, "dfn_forward");
  const std::size_t hidden = w.project.dim(1);
  if (w.expand.dim(0) != 2 * hidden || w.depthwise.dim(0) != 2 * hidden) {
    throw DimensionError("feed-forward weights disagree on the hidden width: expand " + to_string(w.expand.shape()) +
                         ", depthwise " + to_string(w.depthwise.shape()) + ", project " +
                         to_string(w.project.shape()));
  }
  const Tensor<T> z = depthwise_conv2d(pointwise_conv(x, w.expand), w.depthwise);
  const Tensor<T> gated = mul(gelu(slice(z, 1, 0, hidden)), slice(z, 1, hidden, 2 * hidden));
  return pointwise_conv(gated, w.project);
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockWeights<T>& w, std::size_t heads) {
  const Tensor<T> x1 = add(x, dsa_attention(layernorm(x, w.norm1_gain, w.norm1_bias), w.attention, heads));
  return add(x1, dfn_forward(layernorm(x1, w.norm2_gain, w.norm2_bias), w.ffn));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || bias.numel() != w.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()) + ", bias " +
                         to_string(bias.shape()));
  }
  return add(matmul(x, w), reshape(bias, Shape{1, w.dim(1)}));
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& previous, const Tensor<T>& skip, const FusionWeights<T>& w) {
  require_image(previous, "fuse");
  Tensor<T> up = upsample_nearest2x(previous);
  if (w.align) up = pointwise_conv(up, *w.align);
  if (up.shape() != skip.shape()) {
    throw DimensionError("fusion wiring: aligned previous state " + to_string(up.shape()) + " vs skip " +
                         to_string(skip.shape()));
  }
  return conv_bias(add(up, skip), w.conv, w.bias);
}

template <typename T>
Tensor<T> fuse_latent(const Tensor<T>& latent, const Tensor<T>& projection, const Tensor<T>& projection_bias,
                      const Tensor<T>& skip, const FusionWeights<T>& w) {
  require_image(skip, "fuse_latent");
  const Shape map{skip.dim(0), skip.dim(1), skip.dim(2), skip.dim(3)};
  if (projection.rank() != 2 || projection.dim(1) * skip.dim(0) != numel(map)) {
    throw DimensionError("latent projection " + to_string(projection.shape()) + " cannot produce a " +
                         to_string(map) + " map");
  }
  const Tensor<T> start = reshape(linear(latent, projection, projection_bias), map);
  return conv_bias(add(start, skip), w.conv, w.bias);
}

template <typename T>
Tensor<T> modulate_weights(const Tensor<T>& w, const Tensor<T>& style, bool demodulate) {
  if (w.rank() != 4 || style.rank() != 2 || style.dim(1) != w.dim(1)) {
    throw ConfigError("style " + to_string(style.shape()) + " does not match kernel " + to_string(w.shape()));
  }
  const std::size_t batch = style.dim(0), c_out = w.dim(0), c_in = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor<T> ws = mul(reshape(w, Shape{1, c_out, c_in, kh, kw}), reshape(style, Shape{batch, 1, c_in, 1, 1}));
  if (demodulate) {
    const Tensor<T> energy = sum_to(mul(ws, ws), Shape{batch, c_out, 1, 1, 1});
    ws = mul(ws, rsqrt(add_scalar(energy, T(1e-8))));
  }
  return ws;
}

template <typename T>
Tensor<T> modulated_conv(const Tensor<T>& x, const Tensor<T>& latent, const ModulatedConvWeights<T>& w,
                         bool demodulate) {
  require_image(x, "modulated_conv");
  if (latent.rank() != 2 || latent.dim(1) != w.style.dim(0) || latent.dim(0) != x.dim(0)) {
    throw ConfigError("latent " + to_string(latent.shape()) + " does not match style map " +
                      to_string(w.style.shape()) + " for input " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), c_in = x.dim(1), c_out = w.weight.dim(0), k = w.weight.dim(2);
  const Tensor<T> style = linear(latent, w.style, w.style_bias);
  const Tensor<T> kernels = reshape(modulate_weights(w.weight, style, demodulate), Shape{batch * c_out, c_in, k, k});
  const Tensor<T> y = conv2d(reshape(x, Shape{1, batch * c_in, x.dim(2), x.dim(3)}), kernels, 1, k / 2, batch);
  return mul_scalar(silu(add_channel_bias(reshape(y, Shape{batch, c_out, x.dim(2), x.dim(3)}), w.bias)),
                    static_cast<T>(kModulatedActivationGain));
}

template <typename T>
Tensor<T> generator_block(const Tensor<T>& input, const Tensor<T>& latent, const GeneratorBlockWeights<T>& w,
                          bool demodulate) {
  return modulated_conv(modulated_conv(input, latent, w.conv0, demodulate), latent, w.conv1, demodulate);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> sft_factors(const Tensor<T>& fusion, const SftWeights<T>& w) {
  return {conv_bias(fusion, w.scale, w.scale_bias), conv_bias(fusion, w.shift, w.shift_bias)};
}

template <typename T>
Tensor<T> cs_sft(const Tensor<T>& f_g, const Tensor<T>& mu, const Tensor<T>& sigma, std::size_t split) {
  require_image(f_g, "cs_sft");
  const std::size_t c = f_g.dim(1);
  if (split >= c) throw DimensionError("channel split " + std::to_string(split) + " leaves nothing of " +
                                       std::to_string(c) + " channels to modulate");
  const Shape expected{f_g.dim(0), c - split, f_g.dim(2), f_g.dim(3)};
  if (mu.shape() != expected || sigma.shape() != expected) {
    throw DimensionError("cs_sft factors " + to_string(mu.shape()) + " / " + to_string(sigma.shape()) +
                         ", expected " + to_string(expected));
  }
  if (split == 0) return add(mul(mu, f_g), sigma);
  return concat<T>({slice(f_g, 1, 0, split), add(mul(mu, slice(f_g, 1, split, c)), sigma)}, 1);
}

template <typename T>
Tensor<T> to_rgb(const Tensor<T>& feature, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 4 || w.dim(0) != 3) throw DimensionError("to_rgb kernel must be 3xCx1x1, got " + to_string(w.shape()));
  return add_channel_bias(pointwise_conv(feature, w), bias);
}

// ---------------------------------------------------------------------------

std::vector<ParameterSpec> gformer_parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParameterSpec> specs;
  auto normal = [&](std::string name, Shape shape, std::size_t fan_in, double gain = 1.0) {
    specs.push_back({std::move(name), std::move(shape), fan_in, gain, 0.0});
  };
  auto constant = [&](std::string name, Shape shape, double value) {
    specs.push_back({std::move(name), std::move(shape), 0, 1.0, value});
  };
  auto conv = [&](const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k, double gain = 1.0) {
    normal(name + ".w", {c_out, c_in, k, k}, c_in * k * k, gain);
    constant(name + ".b", {c_out}, 0.0);
  };

  const std::size_t lt = cfg.levels_transformer;
  conv("enc.stem", cfg.channels[0], 3, 3);
  for (std::size_t l = 0; l < lt; ++l) {
    const std::size_t c = cfg.channels[l], hidden = cfg.ffn_hidden(c);
    const std::string p = level_name("enc.t", l);
    constant(p + ".ln1.g", {c}, 1.0);
    constant(p + ".ln1.b", {c}, 0.0);
    normal(p + ".attn.qkv_pw", {3 * c, c, 1, 1}, c);
    normal(p + ".attn.qkv_dw", {3 * c, 1, 3, 3}, 9);
    constant(p + ".attn.theta", {cfg.heads[l]}, cfg.theta_init);
    normal(p + ".attn.proj", {c, c, 1, 1}, c, 0.5);
    constant(p + ".ln2.g", {c}, 1.0);
    constant(p + ".ln2.b", {c}, 0.0);
    normal(p + ".ffn.expand", {2 * hidden, c, 1, 1}, c);
    normal(p + ".ffn.dw", {2 * hidden, 1, 3, 3}, 9);
    normal(p + ".ffn.proj", {c, hidden, 1, 1}, hidden, 0.5);
    if (l + 1 < lt) conv(level_name("enc.down", l), cfg.channels[l + 1], c, 3);
  }
  std::size_t c_prev = cfg.channels[lt - 1];
  for (std::size_t j = 0; j < cfg.levels_conv_refine; ++j) {
    const std::size_t c = cfg.refine_channels[j];
    conv(level_name("enc.r", j) + ".down", c, c_prev, 3);
    conv(level_name("enc.r", j) + ".conv", c, c, 3);
    c_prev = c;
  }
  const std::vector<std::size_t> res = cfg.level_resolutions();
  const std::vector<std::size_t> ch = cfg.level_channels();
  const std::size_t flat = ch[0] * res[0] * res[0], latent = cfg.latent_dim;
  normal("enc.mlp.w0", {flat, latent}, flat);
  constant("enc.mlp.b0", {latent}, 0.0);
  normal("enc.mlp.w1", {latent, latent}, latent);
  constant("enc.mlp.b1", {latent}, 0.0);

  normal("mod.latent_proj.w", {latent, flat}, latent);
  constant("mod.latent_proj.b", {flat}, 0.0);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string p = level_name("mod", i);
    const std::size_t c = ch[i], modulated = c - cfg.split_channels(c);
    if (i > 0 && ch[i - 1] != c) normal(p + ".align", {c, ch[i - 1], 1, 1}, ch[i - 1]);
    conv(p + ".fuse", c, c, 3);
    normal(p + ".rgb.w", {3, c, 1, 1}, c, 0.5);
    constant(p + ".rgb.b", {3}, 0.5);
    normal(p + ".sft.scale.w", {modulated, c, 3, 3}, 9 * c, 0.1);
    constant(p + ".sft.scale.b", {modulated}, 1.0);
    normal(p + ".sft.shift.w", {modulated, c, 3, 3}, 9 * c, 0.1);
    constant(p + ".sft.shift.b", {modulated}, 0.0);
  }

  normal("gen.const", {1, ch[0], res[0], res[0]}, 1);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string p = level_name("gen.b", i);
    const std::size_t c_in = i == 0 ? ch[0] : ch[i - 1], c = ch[i];
    for (const auto& [name, cin] : {std::pair<std::string, std::size_t>{".conv0", c_in}, {".conv1", c}}) {
      normal(p + name + ".w", {c, cin, 3, 3}, cin * 9);
      constant(p + name + ".b", {c}, 0.0);
      normal(p + name + ".style.w", {latent, cin}, latent, 0.5);
      constant(p + name + ".style.b", {cin}, 1.0);
    }
  }
  normal("gen.head.w", {3, ch.back(), 1, 1}, ch.back(), 0.5);
  constant("gen.head.b", {3}, 0.5);
  return specs;
}

ParameterStore<float> init_parameters(const std::vector<ParameterSpec>& specs, std::uint64_t seed) {
  Initializer init(seed);
  ParameterStore<float> store;
  for (const auto& s : specs) {
    if (s.fan_in > 0) {
      store.add(s.name, Tensor<float>(s.shape, init.he_normal(s.shape, s.fan_in, s.gain), true));
    } else {
      store.add(s.name, Tensor<float>::full(s.shape, static_cast<float>(s.fill), true));
    }
  }
  return store;
}

ParameterStore<float> init_gformer_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  return init_parameters(gformer_parameter_specs(cfg), seed);
}

template <typename T>
void check_parameters(const ParameterStore<T>& store, const std::vector<ParameterSpec>& specs) {
  if (store.size() != specs.size()) {
    throw ConfigError("parameter table has " + std::to_string(store.size()) + " entries, the configuration needs " +
                      std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& e = store.entries()[i];
    if (e.name != specs[i].name || e.tensor.shape() != specs[i].shape) {
      throw ConfigError("parameter " + std::to_string(i) + " is '" + e.name + "' " + to_string(e.tensor.shape()) +
                        ", the configuration expects '" + specs[i].name + "' " + to_string(specs[i].shape));
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Gformer<T>::Gformer(ModelConfig cfg, ParameterStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  check_parameters(params_, gformer_parameter_specs(cfg_));
}

template <typename T>
TransformerBlockWeights<T> Gformer<T>::transformer_weights(std::size_t level) const {
  const std::string q = level_name("enc.t", level);
  return {p(q + ".ln1.g"),
          p(q + ".ln1.b"),
          {p(q + ".attn.qkv_pw"), p(q + ".attn.qkv_dw"), p(q + ".attn.theta"), p(q + ".attn.proj")},
          p(q + ".ln2.g"),
          p(q + ".ln2.b"),
          {p(q + ".ffn.expand"), p(q + ".ffn.dw"), p(q + ".ffn.proj")}};
}

template <typename T>
GeneratorBlockWeights<T> Gformer<T>::generator_weights(std::size_t level) const {
  const std::string q = level_name("gen.b", level);
  auto conv = [&](const std::string& c) {
    return ModulatedConvWeights<T>{p(q + c + ".w"), p(q + c + ".b"), p(q + c + ".style.w"), p(q + c + ".style.b")};
  };
  return {conv(".conv0"), conv(".conv1")};
}

template <typename T>
FusionWeights<T> Gformer<T>::fusion_weights(std::size_t level) const {
  const std::string q = level_name("mod", level);
  FusionWeights<T> w{std::nullopt, p(q + ".fuse.w"), p(q + ".fuse.b")};
  if (params_.contains(q + ".align")) w.align = p(q + ".align");
  return w;
}

template <typename T>
SftWeights<T> Gformer<T>::sft_weights(std::size_t level) const {
  const std::string q = level_name("mod", level);
  return {p(q + ".sft.scale.w"), p(q + ".sft.scale.b"), p(q + ".sft.shift.w"), p(q + ".sft.shift.b")};
}

template <typename T>
FeatureBundle<T> Gformer<T>::encode(const Tensor<T>& x) const {
  const std::size_t r = cfg_.input_resolution;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != r || x.dim(3) != r) {
    throw ConfigError("encoder expects Bx3x" + std::to_string(r) + "x" + std::to_string(r) + " input, got " +
                      to_string(x.shape()));
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = conv_bias(x, p("enc.stem.w"), p("enc.stem.b"));
  for (std::size_t l = 0; l < cfg_.levels_transformer; ++l) {
    h = transformer_block(h, transformer_weights(l), cfg_.heads[l]);
    skips.push_back(h);
    if (l + 1 < cfg_.levels_transformer) {
      const std::string q = level_name("enc.down", l);
      h = conv_bias(h, p(q + ".w"), p(q + ".b"), 2);
    }
  }
  for (std::size_t j = 0; j < cfg_.levels_conv_refine; ++j) {
    const std::string q = level_name("enc.r", j);
    h = silu(conv_bias(h, p(q + ".down.w"), p(q + ".down.b"), 2));
    h = silu(conv_bias(h, p(q + ".conv.w"), p(q + ".conv.b")));
    skips.push_back(h);
  }
  const Tensor<T>& deepest = skips.back();
  const Tensor<T> flat = reshape(deepest, Shape{deepest.dim(0), deepest.numel() / deepest.dim(0)});
  const Tensor<T> hidden = silu(linear(flat, p("enc.mlp.w0"), p("enc.mlp.b0")));
  FeatureBundle<T> out{{skips.rbegin(), skips.rend()}, linear(hidden, p("enc.mlp.w1"), p("enc.mlp.b1"))};
  return out;
}

template <typename T>
GformerOutput<T> Gformer<T>::decode(const FeatureBundle<T>& features) const {
  const std::size_t levels = cfg_.generator_blocks();
  if (features.skips.size() != levels) {
    throw DimensionError("decoder expects " + std::to_string(levels) + " skip features, got " +
                         std::to_string(features.skips.size()));
  }
  const Tensor<T>& latent = features.latent;
  const std::size_t batch = latent.dim(0);
  GformerOutput<T> out;
  Tensor<T> fusion = initial_fusion_state(latent);
  Tensor<T> feature;
  for (std::size_t i = 0; i < levels; ++i) {
    const std::string q = level_name("mod", i);
    fusion = i == 0 ? fuse_latent(fusion, p("mod.latent_proj.w"), p("mod.latent_proj.b"), features.skips[0],
                                  fusion_weights(0))
                    : fuse(fusion, features.skips[i], fusion_weights(i));
    out.pyramid.push_back(to_rgb(fusion, p(q + ".rgb.w"), p(q + ".rgb.b")));

    const Tensor<T> input =
        i == 0 ? concat(std::vector<Tensor<T>>(batch, p("gen.const")), 0) : upsample_nearest2x(feature);
    const Tensor<T> f_g = generator_block(input, latent, generator_weights(i));
    const auto [mu, sigma] = sft_factors(fusion, sft_weights(i));
    feature = cs_sft(f_g, mu, sigma, cfg_.split_channels(f_g.dim(1)));
  }
  out.restored = to_rgb(feature, p("gen.head.w"), p("gen.head.b"));
  return out;
}

template <typename T>
Tensor<T> Gformer<T>::generate(const Tensor<T>& latent) const {
  if (latent.rank() != 2 || latent.dim(1) != cfg_.latent_dim) {
    throw ConfigError("latent must be Bx" + std::to_string(cfg_.latent_dim) + ", got " + to_string(latent.shape()));
  }
  Tensor<T> feature = concat(std::vector<Tensor<T>>(latent.dim(0), p("gen.const")), 0);
  for (std::size_t i = 0; i < cfg_.generator_blocks(); ++i) {
    if (i > 0) feature = upsample_nearest2x(feature);
    feature = generator_block(feature, latent, generator_weights(i));
  }
  return to_rgb(feature, p("gen.head.w"), p("gen.head.b"));
}

#define GFORMER_INSTANTIATE_MODEL(T)                                                                              \
  template Tensor<T> channel_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       std::size_t, AttentionProbe*);                                             \
  template Tensor<T> dsa_attention(const Tensor<T>&, const AttentionWeights<T>&, std::size_t, AttentionProbe*);   \
  template Tensor<T> spatial_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, AttentionProbe*);    \
  template Tensor<T> spatial_attention_reference(const Tensor<T>&, const AttentionWeights<T>&, AttentionProbe*);  \
  template Tensor<T> dfn_forward(const Tensor<T>&, const FeedForwardWeights<T>&);                                 \
  template Tensor<T> transformer_block(const Tensor<T>&, const TransformerBlockWeights<T>&, std::size_t);         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const FusionWeights<T>&);                           \
  template Tensor<T> fuse_latent(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                 const FusionWeights<T>&);                                                        \
  template Tensor<T> modulate_weights(const Tensor<T>&, const Tensor<T>&, bool);                                  \
  template Tensor<T> modulated_conv(const Tensor<T>&, const Tensor<T>&, const ModulatedConvWeights<T>&, bool);    \
  template Tensor<T> generator_block(const Tensor<T>&, const Tensor<T>&, const GeneratorBlockWeights<T>&, bool);  \
  template std::pair<Tensor<T>, Tensor<T>> sft_factors(const Tensor<T>&, const SftWeights<T>&);                   \
  template Tensor<T> cs_sft(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);                   \
  template Tensor<T> to_rgb(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                \
  template void check_parameters(const ParameterStore<T>&, const std::vector<ParameterSpec>&);                    \
  template class Gformer<T>;

GFORMER_INSTANTIATE_MODEL(float)
GFORMER_INSTANTIATE_MODEL(double)

}  // namespace gformer
