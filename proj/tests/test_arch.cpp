// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gformer/gradcheck.hpp"
#include "gformer/model.hpp"
#include "test_util.hpp"

using namespace gformer;
using gformer::testing::bit_equal;
using gformer::testing::random_tensor;

namespace {

using Td = Tensor<double>;

Td weighted_sum(const Td& y, std::uint64_t seed) { return sum(mul(y, random_tensor<double>(y.shape(), seed, false))); }

AttentionWeights<double> random_attention(std::size_t c, std::size_t heads, std::uint64_t seed) {
  return {random_tensor<double>({3 * c, c, 1, 1}, seed), random_tensor<double>({3 * c, 1, 3, 3}, seed + 1),
          random_tensor<double>({heads}, seed + 2), random_tensor<double>({c, c, 1, 1}, seed + 3)};
}

FeedForwardWeights<double> random_ffn(std::size_t c, std::size_t hidden, std::uint64_t seed) {
  return {random_tensor<double>({2 * hidden, c, 1, 1}, seed), random_tensor<double>({2 * hidden, 1, 3, 3}, seed + 1),
          random_tensor<double>({c, hidden, 1, 1}, seed + 2)};
}

TransformerBlockWeights<double> random_block(std::size_t c, std::size_t heads, std::uint64_t seed) {
  return {random_tensor<double>({c}, seed, true, 0.5), random_tensor<double>({c}, seed + 1, true, 0.5),
          random_attention(c, heads, seed + 10),       random_tensor<double>({c}, seed + 2, true, 0.5),
          random_tensor<double>({c}, seed + 3, true, 0.5), random_ffn(c, 5, seed + 20)};
}

// Direct loops: per head, normalize each channel over pixels, score
// s[i][j] = theta * <q_i, k_j>, softmax over j, out_i = sum_j a[i][j] v_j.
std::vector<double> naive_channel_attention(const Td& q, const Td& k, const Td& v, const std::vector<double>& theta,
                                            std::size_t heads) {
  const std::size_t b = q.dim(0), c = q.dim(1), hw = q.dim(2) * q.dim(3), ch = c / heads;
  auto normalized = [&](const Td& t, std::size_t n, std::size_t chan) {
    std::vector<double> row(hw);
    double ss = 0;
    for (std::size_t p = 0; p < hw; ++p) ss += std::pow(t.values()[(n * c + chan) * hw + p], 2);
    for (std::size_t p = 0; p < hw; ++p) row[p] = t.values()[(n * c + chan) * hw + p] / std::sqrt(ss + 1e-12);
    return row;
  };
  std::vector<double> out(q.numel(), 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < ch; ++i) {
        const auto qi = normalized(q, n, h * ch + i);
        std::vector<double> s(ch);
        double mx = -1e300;
        for (std::size_t j = 0; j < ch; ++j) {
          const auto kj = normalized(k, n, h * ch + j);
          double dot = 0;
          for (std::size_t p = 0; p < hw; ++p) dot += qi[p] * kj[p];
          s[j] = theta[h] * dot;
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < ch; ++j)
          for (std::size_t p = 0; p < hw; ++p)
            out[(n * c + h * ch + i) * hw + p] += s[j] / z * v.values()[(n * c + h * ch + j) * hw + p];
      }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor<float> toy_input(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
  auto x = random_tensor<float>({batch, 3, cfg.input_resolution, cfg.input_resolution}, seed, false, 0.5);
  for (auto& v : x.mutable_data()) v += 0.5f;
  return x;
}

}  // namespace

TEST_CASE("channel attention: theta = 0 averages the value channels") {
  const auto q = random_tensor<double>({2, 4, 3, 3}, 1, false);
  const auto k = random_tensor<double>({2, 4, 3, 3}, 2, false);
  const auto v = random_tensor<double>({2, 4, 3, 3}, 3, false);
  const auto out = channel_attention(q, k, v, Td::zeros({1}), 1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 9; ++p) {
      double mean = 0;
      for (std::size_t c = 0; c < 4; ++c) mean += v.values()[(n * 4 + c) * 9 + p] / 4.0;
      for (std::size_t c = 0; c < 4; ++c) CHECK(out.values()[(n * 4 + c) * 9 + p] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("channel attention: single pixel by hand") {
  // One pixel: normalization leaves only the signs, q^ = [1, -1], k^ = [1, -1].
  // theta * beta = 0.7 * [[1, -1], [-1, 1]]; row softmax gives s = sigmoid(1.4)
  // on the diagonal.
  const Td q({1, 2, 1, 1}, {2.0, -3.0});
  const Td k({1, 2, 1, 1}, {0.5, -4.0});
  const Td v({1, 2, 1, 1}, {1.0, 5.0});
  const auto out = channel_attention(q, k, v, Td({1}, {0.7}), 1);
  const double s = sigmoid(1.4);
  CHECK(out.values()[0] == doctest::Approx(s * 1.0 + (1 - s) * 5.0).epsilon(1e-12));
  CHECK(out.values()[1] == doctest::Approx((1 - s) * 1.0 + s * 5.0).epsilon(1e-12));
}

TEST_CASE("channel attention matches a direct loop implementation") {
  const auto q = random_tensor<double>({2, 6, 3, 4}, 11, false);
  const auto k = random_tensor<double>({2, 6, 3, 4}, 12, false);
  const auto v = random_tensor<double>({2, 6, 3, 4}, 13, false);
  const std::vector<double> theta{0.8, -1.3, 2.1};
  const auto out = channel_attention(q, k, v, Td({3}, theta), 3);
  const auto ref = naive_channel_attention(q, k, v, theta, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  CHECK_THROWS_AS(channel_attention(q, k, v, Td({4}, {1, 1, 1, 1}), 4), ConfigError);
}

TEST_CASE("attention score storage and work follow the shape laws") {
  const std::size_t c = 8, heads = 2, ch = c / heads;
  const auto w = random_attention(c, heads, 5);
  std::vector<std::size_t> spatial_scalars;
  for (std::size_t side : {8u, 16u, 32u}) {
    const std::size_t hw = side * side;
    const auto y = random_tensor<double>({1, c, side, side}, side, false);
    AttentionProbe channel, spatial;
    const auto a = dsa_attention(y, w, heads, &channel);
    const auto b = spatial_attention_reference(y, w, &spatial);
    CHECK(a.shape() == y.shape());
    CHECK(b.shape() == y.shape());
    CHECK(channel.score_scalars == heads * ch * ch);
    CHECK(channel.score_shape == Shape{heads, ch, ch});
    CHECK(channel.score_macs == heads * hw * ch * ch);
    CHECK(spatial.score_scalars == hw * hw);
    CHECK(spatial.score_macs == hw * hw * c);
    spatial_scalars.push_back(spatial.score_scalars);
  }
  CHECK(spatial_scalars[1] == 16 * spatial_scalars[0]);
  CHECK(spatial_scalars[2] == 16 * spatial_scalars[1]);

  // Single head: channel work HW * C^2, spatial work (HW)^2 * C.
  const auto w1 = random_attention(c, 1, 9);
  const auto y = random_tensor<double>({1, c, 4, 4}, 9, false);
  AttentionProbe channel, spatial;
  dsa_attention(y, w1, 1, &channel);
  spatial_attention_reference(y, w1, &spatial);
  CHECK(channel.score_macs == 16 * c * c);
  CHECK(spatial.score_macs == 16 * 16 * c);
}

TEST_CASE("spatial reference attention") {
  SUBCASE("2x2 image, one channel, by hand") {
    const Td q({1, 1, 2, 2}, {0.5, -1.0, 2.0, 0.1});
    const Td k({1, 1, 2, 2}, {1.0, 0.3, -0.2, 0.7});
    const Td v({1, 1, 2, 2}, {3.0, -1.0, 0.5, 2.0});
    AttentionProbe probe;
    const auto out = spatial_attention(q, k, v, &probe);
    CHECK(probe.score_shape == Shape{1, 4, 4});
    for (std::size_t p = 0; p < 4; ++p) {
      double z = 0, acc = 0;
      for (std::size_t r = 0; r < 4; ++r) {
        const double e = std::exp(q.values()[p] * k.values()[r]);
        z += e;
        acc += e * v.values()[r];
      }
      CHECK(out.values()[p] == doctest::Approx(acc / z).epsilon(1e-12));
    }
    AttentionProbe channel;
    channel_attention(q, k, v, Td({1}, {1.0}), 1, &channel);
    CHECK(channel.score_shape == Shape{1, 1, 1});
  }
  SUBCASE("memory guard") {
    const auto w = random_attention(2, 1, 3);
    const auto big = Td::zeros({1, 2, 65, 64});
    CHECK_THROWS_AS(spatial_attention_reference(big, w), DimensionError);
    const auto limit = random_tensor<double>({1, 1, 64, 64}, 4, false);
    CHECK_NOTHROW(spatial_attention(limit, limit, limit));
  }
}

TEST_CASE("dsa attention gradient") {
  const auto y = random_tensor<double>({1, 4, 3, 3}, 31);
  const auto w = random_attention(4, 2, 32);
  const double err = gradcheck([&] { return weighted_sum(dsa_attention(y, w, 2), 33); },
                               {y, w.qkv_pointwise, w.qkv_depthwise, w.theta, w.projection});
  CHECK(err <= 1e-5);
  CHECK_THROWS_AS(dsa_attention(y, w, 3), ConfigError);
}

TEST_CASE("feed-forward network") {
  CHECK(preset("paper-256").ffn_hidden(64) == 170);
  const auto x = random_tensor<double>({2, 4, 5, 5}, 41);
  FeedForwardWeights<double> zero{Td::zeros({10, 4, 1, 1}), Td::zeros({10, 1, 3, 3}), Td::zeros({4, 5, 1, 1})};
  const auto z = dfn_forward(x, zero);
  CHECK(z.shape() == x.shape());
  for (double v : z.values()) CHECK(v == 0.0);
  CHECK(bit_equal(add(x, z), x));

  const auto w = random_ffn(4, 5, 42);
  CHECK(dfn_forward(x, w).shape() == x.shape());
  CHECK(gradcheck([&] { return weighted_sum(dfn_forward(x, w), 43); }, {x, w.expand, w.depthwise, w.project}) <=
        1e-5);
}

TEST_CASE("transformer block") {
  const auto x = random_tensor<double>({1, 4, 4, 4}, 51);
  SUBCASE("zeroed sublayers are the identity") {
    auto w = random_block(4, 2, 52);
    w.attention.projection = Td::zeros({4, 4, 1, 1}, true);
    w.ffn.project = Td::zeros({4, 5, 1, 1}, true);
    CHECK(bit_equal(transformer_block(x, w, 2), x));
  }
  SUBCASE("large inputs stay finite") {
    const auto w = random_block(4, 2, 53);
    const auto big = random_tensor<double>({1, 4, 4, 4}, 54, false, 100.0);
    const auto out = transformer_block(big, w, 2);
    for (double v : out.values()) CHECK(std::isfinite(v));
    const auto bigf = random_tensor<float>({1, 4, 4, 4}, 54, false, 100.0);
    auto wf = TransformerBlockWeights<float>{
        Tensor<float>::ones({4}), Tensor<float>::zeros({4}),
        {random_tensor<float>({12, 4, 1, 1}, 1), random_tensor<float>({12, 1, 3, 3}, 2), Tensor<float>::full({2}, 5.0f),
         random_tensor<float>({4, 4, 1, 1}, 3)},
        Tensor<float>::ones({4}), Tensor<float>::zeros({4}),
        {random_tensor<float>({10, 4, 1, 1}, 4), random_tensor<float>({10, 1, 3, 3}, 5),
         random_tensor<float>({4, 5, 1, 1}, 6)}};
    const auto outf = transformer_block(bigf, wf, 2);
    for (float v : outf.values()) CHECK(std::isfinite(v));
  }
  SUBCASE("gradient") {
    const auto w = random_block(4, 2, 55);
    const double err = gradcheck([&] { return weighted_sum(transformer_block(x, w, 2), 56); },
                                 {x, w.norm1_gain, w.norm1_bias, w.attention.qkv_pointwise, w.attention.qkv_depthwise,
                                  w.attention.theta, w.attention.projection, w.norm2_gain, w.norm2_bias, w.ffn.expand,
                                  w.ffn.depthwise, w.ffn.project});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("fusion") {
  SUBCASE("the recursion starts from the latent code") {
    const auto latent = random_tensor<double>({2, 16}, 61);
    CHECK(bit_equal(initial_fusion_state(latent), latent));
    CHECK(initial_fusion_state(latent).node() == latent.node());
  }
  SUBCASE("zero skip with identity convolution passes the upsampled state") {
    const auto prev = random_tensor<double>({1, 3, 4, 4}, 62);
    Td delta = Td::zeros({3, 3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) delta.mutable_data()[(c * 3 + c) * 9 + 4] = 1.0;
    const FusionWeights<double> w{std::nullopt, delta, Td::zeros({3})};
    const auto out = fuse(prev, Td::zeros({1, 3, 8, 8}), w);
    CHECK(bit_equal(out, upsample_nearest2x(prev)));
  }
  SUBCASE("alignment and wiring errors") {
    const auto prev = random_tensor<double>({1, 4, 4, 4}, 63);
    const auto skip = random_tensor<double>({1, 2, 8, 8}, 64);
    FusionWeights<double> w{random_tensor<double>({2, 4, 1, 1}, 65), random_tensor<double>({2, 2, 3, 3}, 66),
                            random_tensor<double>({2}, 67)};
    CHECK(fuse(prev, skip, w).shape() == Shape{1, 2, 8, 8});
    CHECK(gradcheck([&] { return weighted_sum(fuse(prev, skip, w), 68); }, {prev, skip, *w.align, w.conv, w.bias}) <=
          1e-6);
    CHECK_THROWS_AS(fuse(prev, random_tensor<double>({1, 2, 4, 4}, 69), w), DimensionError);
  }
  SUBCASE("latent projection") {
    const auto latent = random_tensor<double>({2, 5}, 70);
    const auto proj = random_tensor<double>({5, 3 * 4 * 4}, 71);
    const auto bias = random_tensor<double>({48}, 72);
    const auto skip = random_tensor<double>({2, 3, 4, 4}, 73);
    const FusionWeights<double> w{std::nullopt, random_tensor<double>({3, 3, 3, 3}, 74), random_tensor<double>({3}, 75)};
    CHECK(fuse_latent(latent, proj, bias, skip, w).shape() == skip.shape());
    CHECK(gradcheck([&] { return weighted_sum(fuse_latent(latent, proj, bias, skip, w), 76); },
                    {latent, proj, bias, skip, w.conv, w.bias}) <= 1e-6);
    CHECK_THROWS_AS(fuse_latent(latent, proj, bias, Td::zeros({2, 3, 8, 8}), w), DimensionError);
  }
}

TEST_CASE("style modulation") {
  const auto w = random_tensor<double>({4, 3, 3, 3}, 81);
  SUBCASE("unit style without demodulation is the plain kernel") {
    const auto m = modulate_weights(w, Td::ones({2, 3}), false);
    CHECK(m.shape() == Shape{2, 4, 3, 3, 3});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < w.numel(); ++i) CHECK(m.values()[n * w.numel() + i] == w.values()[i]);

    const auto x = random_tensor<double>({2, 3, 5, 5}, 82);
    const auto bias = random_tensor<double>({4}, 83);
    const ModulatedConvWeights<double> mw{w, bias, Td::zeros({6, 3}), Td::ones({3})};
    const auto latent = random_tensor<double>({2, 6}, 84);
    const auto plain = mul_scalar(silu(add_channel_bias(conv2d(x, w, 1, 1), bias)), kModulatedActivationGain);
    CHECK(bit_equal(modulated_conv(x, latent, mw, false), plain));
  }
  SUBCASE("demodulation gives every output channel unit norm") {
    const auto style = random_tensor<double>({2, 3}, 85, false, 3.0);
    const auto m = modulate_weights(w, style, true);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o) {
        double ss = 0;
        for (std::size_t i = 0; i < 27; ++i) ss += std::pow(m.values()[(n * 4 + o) * 27 + i], 2);
        CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
      }
    const auto mf = modulate_weights(random_tensor<float>({4, 3, 3, 3}, 81), random_tensor<float>({2, 3}, 85), true);
    for (std::size_t r = 0; r < 8; ++r) {
      double ss = 0;
      for (std::size_t i = 0; i < 27; ++i) ss += std::pow(static_cast<double>(mf.values()[r * 27 + i]), 2);
      CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("style length mismatch") {
    CHECK_THROWS_AS(modulate_weights(w, Td::ones({2, 4}), true), ConfigError);
    const ModulatedConvWeights<double> mw{w, Td::zeros({4}), Td::zeros({6, 3}), Td::ones({3})};
    CHECK_THROWS_AS(modulated_conv(Td::zeros({1, 3, 4, 4}), Td::zeros({1, 5}), mw), ConfigError);
  }
  SUBCASE("generator block gradient") {
    const auto x = random_tensor<double>({2, 3, 4, 4}, 86);
    const auto latent = random_tensor<double>({2, 5}, 87);
    GeneratorBlockWeights<double> g{
        {random_tensor<double>({4, 3, 3, 3}, 88), random_tensor<double>({4}, 89), random_tensor<double>({5, 3}, 90),
         random_tensor<double>({3}, 91)},
        {random_tensor<double>({4, 4, 3, 3}, 92), random_tensor<double>({4}, 93), random_tensor<double>({5, 4}, 94),
         random_tensor<double>({4}, 95)}};
    const auto out = generator_block(x, latent, g);
    CHECK(out.shape() == Shape{2, 4, 4, 4});
    const double err = gradcheck([&] { return weighted_sum(generator_block(x, latent, g), 96); },
                                 {x, latent, g.conv0.weight, g.conv0.bias, g.conv0.style, g.conv0.style_bias,
                                  g.conv1.weight, g.conv1.bias, g.conv1.style, g.conv1.style_bias});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("channel-split feature transform") {
  const auto f = random_tensor<double>({2, 6, 4, 4}, 101);
  SUBCASE("unit scale and zero shift are the identity") {
    CHECK(bit_equal(cs_sft(f, Td::ones({2, 3, 4, 4}), Td::zeros({2, 3, 4, 4}), 3), f));
  }
  SUBCASE("zero scale and shift clear the modulated half only") {
    const auto out = cs_sft(f, Td::zeros({2, 3, 4, 4}), Td::zeros({2, 3, 4, 4}), 3);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t p = 0; p < 16; ++p) {
          const std::size_t i = (n * 6 + c) * 16 + p;
          CHECK(out.values()[i] == (c < 3 ? f.values()[i] : 0.0));
        }
  }
  SUBCASE("odd channel counts floor the split") {
    const ModelConfig cfg;
    const auto g = random_tensor<double>({1, 5, 2, 2}, 102);
    const std::size_t split = cfg.split_channels(5);
    CHECK(split == 2);
    CHECK(bit_equal(cs_sft(g, Td::ones({1, 3, 2, 2}), Td::zeros({1, 3, 2, 2}), split), g));
    CHECK_THROWS_AS(cs_sft(g, Td::ones({1, 2, 2, 2}), Td::zeros({1, 2, 2, 2}), split), DimensionError);
  }
  SUBCASE("modulating half the channels costs half") {
    const auto fusion = random_tensor<double>({1, 8, 8, 8}, 103, false);
    const SftWeights<double> half{random_tensor<double>({4, 8, 3, 3}, 104), Td::ones({4}),
                                  random_tensor<double>({4, 8, 3, 3}, 105), Td::zeros({4})};
    const SftWeights<double> full{random_tensor<double>({8, 8, 3, 3}, 104), Td::ones({8}),
                                  random_tensor<double>({8, 8, 3, 3}, 105), Td::zeros({8})};
    FlopCounter::reset();
    sft_factors(fusion, half);
    const auto split_macs = FlopCounter::value();
    FlopCounter::reset();
    sft_factors(fusion, full);
    const auto all_macs = FlopCounter::value();
    CHECK(split_macs > 0);
    CHECK(2 * split_macs == all_macs);
  }
  SUBCASE("gradient") {
    const auto fusion = random_tensor<double>({2, 4, 4, 4}, 106);
    const SftWeights<double> w{random_tensor<double>({3, 4, 3, 3}, 107), random_tensor<double>({3}, 108),
                               random_tensor<double>({3, 4, 3, 3}, 109), random_tensor<double>({3}, 110)};
    const double err = gradcheck(
        [&] {
          const auto [mu, sigma] = sft_factors(fusion, w);
          return weighted_sum(cs_sft(f, mu, sigma, 3), 111);
        },
        {f, fusion, w.scale, w.scale_bias, w.shift, w.shift_bias});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("to_rgb") {
  const auto f = random_tensor<double>({2, 5, 4, 4}, 121);
  const auto w = random_tensor<double>({3, 5, 1, 1}, 122);
  const auto b = random_tensor<double>({3}, 123);
  CHECK(to_rgb(f, w, b).shape() == Shape{2, 3, 4, 4});
  const auto black = to_rgb(f, Td::zeros({3, 5, 1, 1}), Td::zeros({3}));
  for (double v : black.values()) CHECK(v == 0.0);
  CHECK(gradcheck([&] { return weighted_sum(to_rgb(f, w, b), 124); }, {f, w, b}) <= 1e-6);
  CHECK_THROWS_AS(to_rgb(f, Td::zeros({4, 5, 1, 1}), Td::zeros({4})), DimensionError);
}

TEST_CASE("toy model wiring") {
  const ModelConfig cfg = preset("toy-64");
  const Gformer<float> model(cfg, init_gformer_parameters(cfg, 7));
  const auto x = toy_input(cfg, 2, 8);
  NoGradGuard no_grad;
  const auto features = model.encode(x);
  REQUIRE(features.skips.size() == 4);
  const std::vector<std::size_t> res{8, 16, 32, 64}, ch{24, 24, 24, 12};
  for (std::size_t i = 0; i < 4; ++i) CHECK(features.skips[i].shape() == Shape{2, ch[i], res[i], res[i]});
  CHECK(features.latent.shape() == Shape{2, 48});
  const auto out = model.decode(features);
  CHECK(out.restored.shape() == Shape{2, 3, 64, 64});
  REQUIRE(out.pyramid.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.pyramid[i].shape() == Shape{2, 3, res[i], res[i]});
  for (float v : out.restored.values()) CHECK(std::isfinite(v));
  CHECK(model.generate(features.latent).shape() == Shape{2, 3, 64, 64});

  CHECK_THROWS_AS(model.encode(Tensor<float>::zeros({1, 3, 32, 32})), ConfigError);
  CHECK_THROWS_AS(model.generate(Tensor<float>::zeros({1, 8})), ConfigError);
}

TEST_CASE("parameter tables") {
  const ModelConfig cfg = preset("toy-64");
  const auto a = init_gformer_parameters(cfg, 3);
  const auto b = init_gformer_parameters(cfg, 3);
  const auto c = init_gformer_parameters(cfg, 4);
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.entries()[i].name == b.entries()[i].name);
    CHECK(bit_equal(a.entries()[i].tensor, b.entries()[i].tensor));
    differs = differs || a.entries()[i].tensor.values() != c.entries()[i].tensor.values();
  }
  CHECK(differs);
  CHECK(a.tensors({kPriorPrefix}).size() == 3 + 4 * 8);
  for (const auto& e : a.entries())
    if (e.name.ends_with(".attn.theta")) {
      for (float v : e.tensor.values()) CHECK(v == 1.0f);
    }

  const ModelConfig paper = preset("paper-256");
  CHECK_THROWS_AS(Gformer<float>(paper, a.clone()), ConfigError);
  auto wrong = ParameterStore<float>();
  CHECK_THROWS_AS(Gformer<float>(cfg, std::move(wrong)), ConfigError);
}

TEST_CASE("paper-256 preset end to end") {
  const ModelConfig cfg = preset("paper-256");
  const auto specs = gformer_parameter_specs(cfg);
  std::size_t thetas = 0;
  for (const auto& s : specs)
    if (s.name.ends_with(".attn.theta")) CHECK(s.shape == Shape{cfg.heads[thetas++]});
  CHECK(thetas == 4);

  const Gformer<float> model(cfg, init_gformer_parameters(cfg, 1));
  const auto x = toy_input(cfg, 1, 2);
  NoGradGuard no_grad;
  const auto features = model.encode(x);
  REQUIRE(features.skips.size() == 7);
  const std::vector<std::size_t> res{4, 8, 16, 32, 64, 128, 256}, ch{512, 512, 512, 512, 256, 128, 64};
  for (std::size_t i = 0; i < 7; ++i) CHECK(features.skips[i].shape() == Shape{1, ch[i], res[i], res[i]});
  CHECK(features.latent.shape() == Shape{1, 512});
  const auto out = model.decode(features);
  CHECK(out.restored.shape() == Shape{1, 3, 256, 256});
  REQUIRE(out.pyramid.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(out.pyramid[i].shape() == Shape{1, 3, res[i], res[i]});
}

TEST_CASE("forward is deterministic") {
  const ModelConfig cfg = preset("toy-64");
  const auto x = toy_input(cfg, 1, 12);
  const Gformer<float> a(cfg, init_gformer_parameters(cfg, 11));
  const Gformer<float> b(cfg, init_gformer_parameters(cfg, 11));
  const auto ya = a.forward(x), yb = b.forward(x);
  CHECK(bit_equal(ya.restored, yb.restored));
  for (std::size_t i = 0; i < ya.pyramid.size(); ++i) CHECK(bit_equal(ya.pyramid[i], yb.pyramid[i]));
}
