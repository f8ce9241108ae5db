// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gformer/adam.hpp"
#include "gformer/gradcheck.hpp"
#include "gformer/ops.hpp"
#include "test_util.hpp"

using namespace gformer;
using gformer::testing::random_tensor;

namespace {

// Contracts a tensor against fixed random weights so that every output
// element carries a distinct, non-zero sensitivity.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor<double>(y.shape(), seed, false)));
}

Tensor<double> mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor<double>({rows, cols}, std::move(v));
}

}  // namespace

TEST_CASE("tensor construction validates extents") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({0, 2}, {}), DimensionError);
  const auto t = Tensor<float>::full({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.values()[5] == 1.5f);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    const auto eye = mat(2, 2, {1, 0, 0, 1});
    const auto m = mat(2, 2, {1, 2, 3, 4});
    CHECK(matmul(eye, m).values() == m.values());
  }
  SUBCASE("selector row") {
    const auto out = matmul(mat(2, 2, {1, 0, 0, 0}), mat(2, 2, {5, 6, 7, 8}));
    CHECK(out.values() == std::vector<double>{5, 6, 0, 0});
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string what = e.what();
      CHECK(what.find("[2x3]") != std::string::npos);
    }
  }
  SUBCASE("gradients match central differences") {
    auto a = random_tensor({3, 4}, 1);
    auto b = random_tensor({4, 2}, 2);
    CHECK(gradcheck([&] { return weighted_sum(matmul(a, b), 3); }, {a, b}) <= 1e-6);
  }
  SUBCASE("batched gradients") {
    auto a = random_tensor({2, 3, 4}, 4);
    auto b = random_tensor({2, 4, 5}, 5);
    CHECK(gradcheck([&] { return weighted_sum(matmul(a, b), 6); }, {a, b}) <= 1e-6);
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 unit kernel is the identity") {
    const auto x = random_tensor({1, 1, 5, 5}, 7, false);
    const auto w = Tensor<double>::ones({1, 1, 1, 1});
    CHECK(conv2d(x, w, 1, 0).values() == x.values());
  }
  SUBCASE("3x3 box filter keeps a constant interior") {
    const auto x = Tensor<double>::full({1, 1, 6, 6}, 0.7);
    const auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
    const auto y = conv2d(x, w, 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 6, 6});
    for (std::size_t r = 1; r < 5; ++r)
      for (std::size_t c = 1; c < 5; ++c) CHECK(y.values()[r * 6 + c] == doctest::Approx(0.7).epsilon(1e-12));
    // zero padding darkens the corner to 4/9 of the value
    CHECK(y.values()[0] == doctest::Approx(0.7 * 4.0 / 9.0));
  }
  SUBCASE("output extent") {
    const auto y = conv2d(Tensor<double>::zeros({1, 2, 9, 7}), Tensor<double>::zeros({3, 2, 3, 3}), 2, 1);
    CHECK(y.shape() == Shape{1, 3, 5, 4});
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d(Tensor<double>::zeros({1, 2, 4, 4}), Tensor<double>::zeros({1, 3, 3, 3}), 1, 1),
                    DimensionError);
  }
  SUBCASE("gradcheck stride 1") {
    auto x = random_tensor({2, 3, 8, 8}, 11);
    auto w = random_tensor({4, 3, 3, 3}, 12);
    CHECK(gradcheck([&] { return weighted_sum(conv2d(x, w, 1, 1), 13); }, {x, w}) <= 1e-6);
  }
  SUBCASE("gradcheck stride 2") {
    auto x = random_tensor({1, 2, 7, 7}, 14);
    auto w = random_tensor({3, 2, 3, 3}, 15);
    CHECK(gradcheck([&] { return weighted_sum(conv2d(x, w, 2, 1), 16); }, {x, w}) <= 1e-6);
  }
}

TEST_CASE("depthwise_conv2d") {
  SUBCASE("delta kernels are the identity") {
    const auto x = random_tensor({2, 3, 5, 5}, 21, false);
    auto w = Tensor<double>::zeros({3, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 9 + 4] = 1.0;
    CHECK(depthwise_conv2d(x, w).values() == x.values());
  }
  SUBCASE("channels stay separate") {
    auto x = Tensor<double>::zeros({1, 2, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x.mutable_data()[i] = 1.0 + i;  // channel 0 only
    const auto w = random_tensor({2, 1, 3, 3}, 22, false);
    const auto y = depthwise_conv2d(x, w);
    for (std::size_t i = 16; i < 32; ++i) CHECK(y.values()[i] == 0.0);
  }
  SUBCASE("kernel count must match channels") {
    CHECK_THROWS_AS(depthwise_conv2d(Tensor<double>::zeros({1, 4, 4, 4}), Tensor<double>::zeros({3, 1, 3, 3})),
                    DimensionError);
  }
  SUBCASE("gradcheck") {
    auto x = random_tensor({1, 4, 6, 6}, 23);
    auto w = random_tensor({4, 1, 3, 3}, 24);
    CHECK(gradcheck([&] { return weighted_sum(depthwise_conv2d(x, w), 25); }, {x, w}) <= 1e-6);
  }
}

TEST_CASE("pointwise_conv") {
  const auto x = random_tensor({2, 3, 4, 4}, 31, false);
  SUBCASE("identity matrix") {
    auto w = Tensor<double>::zeros({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
    CHECK(pointwise_conv(x, w).values() == x.values());
  }
  SUBCASE("row of ones sums channels") {
    const auto y = pointwise_conv(x, Tensor<double>::ones({1, 3, 1, 1}));
    REQUIRE(y.shape() == Shape{2, 1, 4, 4});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 16; ++p) {
        double expected = 0.0;
        for (std::size_t c = 0; c < 3; ++c) expected += x.values()[(n * 3 + c) * 16 + p];
        CHECK(y.values()[n * 16 + p] == doctest::Approx(expected).epsilon(1e-14));
      }
  }
  SUBCASE("gradcheck") {
    auto xi = random_tensor({2, 3, 4, 4}, 32);
    auto w = random_tensor({5, 3, 1, 1}, 33);
    CHECK(gradcheck([&] { return weighted_sum(pointwise_conv(xi, w), 34); }, {xi, w}) <= 1e-6);
  }
}

TEST_CASE("layernorm over channels") {
  const auto gain = Tensor<double>::ones({2});
  const auto bias = Tensor<double>::zeros({2});
  SUBCASE("constant channels normalize to zero") {
    const auto y = layernorm(Tensor<double>::full({1, 2, 3, 3}, 4.2), gain, bias);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("+1/-1 channels are already unit variance") {
    auto x = Tensor<double>::zeros({1, 2, 1, 2});
    x.mutable_data()[0] = 1;
    x.mutable_data()[1] = 1;
    x.mutable_data()[2] = -1;
    x.mutable_data()[3] = -1;
    const auto y = layernorm(x, gain, bias);
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y.values()[2] == doctest::Approx(-1.0).epsilon(1e-5));
  }
  SUBCASE("per-location mean is zero") {
    const auto x = random_tensor({2, 6, 3, 3}, 41, false, 5.0);
    const auto y = layernorm(x, Tensor<double>::ones({6}), Tensor<double>::zeros({6}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        double m = 0.0;
        for (std::size_t c = 0; c < 6; ++c) m += y.values()[(n * 6 + c) * 9 + p];
        CHECK(std::abs(m / 6.0) < 1e-5);
      }
  }
  SUBCASE("single channel is degenerate") {
    CHECK_THROWS_AS(layernorm(Tensor<double>::zeros({1, 1, 2, 2}), Tensor<double>::ones({1}),
                              Tensor<double>::zeros({1})),
                    DimensionError);
  }
  SUBCASE("gradcheck") {
    auto x = random_tensor({2, 5, 3, 4}, 42);
    auto g = random_tensor({5}, 43);
    auto b = random_tensor({5}, 44);
    CHECK(gradcheck([&] { return weighted_sum(layernorm(x, g, b), 45); }, {x, g, b}) <= 1e-6);
  }
}

TEST_CASE("softmax") {
  SUBCASE("symmetric pair") {
    const auto y = softmax(Tensor<double>({2}, {0.0, 0.0}), 0);
    CHECK(y.values()[0] == 0.5);
    CHECK(y.values()[1] == 0.5);
  }
  SUBCASE("ln 3 gives 1:3") {
    const auto y = softmax(Tensor<double>({2}, {0.0, std::log(3.0)}), 0);
    CHECK(y.values()[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(y.values()[1] == doctest::Approx(0.75).epsilon(1e-15));
  }
  SUBCASE("large logits do not overflow") {
    const auto y = softmax(Tensor<float>({2}, {1000.0f, 1000.0f}), 0);
    CHECK(y.values()[0] == 0.5f);
    CHECK(y.values()[1] == 0.5f);
  }
  SUBCASE("slices sum to one along any axis") {
    const auto x = random_tensor({3, 4, 5}, 51, false, 10.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const auto y = softmax(x, axis);
      const auto s = sum_to(y, axis == 0 ? Shape{1, 4, 5} : axis == 1 ? Shape{3, 1, 5} : Shape{3, 4, 1});
      for (double v : s.values()) CHECK(std::abs(v - 1.0) < 1e-6);
      for (double v : y.values()) CHECK((v > 0.0 && v < 1.0));
    }
  }
  SUBCASE("gradcheck") {
    auto x = random_tensor({3, 4}, 52);
    CHECK(gradcheck([&] { return weighted_sum(softmax(x, 1), 53); }, {x}) <= 1e-6);
  }
}

TEST_CASE("resize") {
  const auto x = random_tensor({1, 2, 4, 6}, 61, false);
  SUBCASE("tau 1 is the identity") { CHECK(resize(x, ResizeFactor::down(1)).values() == x.values()); }
  SUBCASE("block mean") {
    const auto y = resize(Tensor<double>({1, 1, 2, 2}, {1, 1, 3, 3}), ResizeFactor::down(2));
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 2.0);
  }
  SUBCASE("up then down round trip") {
    const auto y = resize(resize(x, ResizeFactor::up2()), ResizeFactor::down(2));
    CHECK(y.values() == x.values());
  }
  SUBCASE("non-divisible extent") {
    CHECK_THROWS_AS(resize(x, ResizeFactor::down(4)), DimensionError);
  }
  SUBCASE("gradcheck both directions") {
    auto xi = random_tensor({1, 2, 4, 4}, 62);
    CHECK(gradcheck([&] { return weighted_sum(resize(xi, ResizeFactor::down(2)), 63); }, {xi}) <= 1e-6);
    CHECK(gradcheck([&] { return weighted_sum(resize(xi, ResizeFactor::up2()), 64); }, {xi}) <= 1e-6);
  }
}

TEST_CASE("elementwise and structural ops gradcheck") {
  auto a = random_tensor({2, 3, 4}, 71);
  auto b = random_tensor({3, 1}, 72);
  std::vector<double> positive(24);
  for (std::size_t i = 0; i < positive.size(); ++i) positive[i] = 0.5 + 0.1 * static_cast<double>(i);
  auto pos = Tensor<double>({2, 3, 4}, positive, true);
  CHECK(gradcheck([&] { return weighted_sum(add(a, b), 74); }, {a, b}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(sub(a, b), 75); }, {a, b}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(mul(a, b), 76); }, {a, b}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(div(a, pos), 77); }, {a, pos}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(rsqrt(pos), 78); }, {pos}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(sqrt(pos), 79); }, {pos}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(softplus(mul_scalar(a, 3.0)), 80); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(gelu(mul_scalar(a, 3.0)), 81); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(silu(mul_scalar(a, 3.0)), 82); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(transpose(a), 83); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(sum_to(a, {3, 1}), 84); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(slice(a, 1, 1, 3), 85); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(concat<double>({a, slice(a, 1, 0, 1), a}, 1), 86); }, {a}) <= 1e-6);
  CHECK(gradcheck([&] { return weighted_sum(reshape(a, {4, 6}), 87); }, {a}) <= 1e-6);
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    auto x = random_tensor({3, 2}, 91);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("half sum of squares gives x") {
    auto x = random_tensor({7}, 92);
    backward(mul_scalar(sum(mul(x, x)), 0.5));
    for (std::size_t i = 0; i < 7; ++i) CHECK(x.grad()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = random_tensor({3}, 93);
    CHECK_THROWS_AS(backward(x), ContractError);
  }
  SUBCASE("unused parameters keep zero gradient") {
    auto used = random_tensor({3}, 94);
    auto unused = random_tensor({3}, 95);
    backward(sum(used));
    for (double g : unused.grad()) CHECK(g == 0.0);
  }
  SUBCASE("two consumers accumulate like the fused op") {
    auto x = random_tensor({4}, 96);
    const auto a = random_tensor({4}, 97, false);
    const auto b = random_tensor({4}, 98, false);
    backward(sum(add(mul(x, a), mul(x, b))));
    const std::vector<double> split(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(sum(mul(x, add(a, b))));
    for (std::size_t i = 0; i < 4; ++i) CHECK(split[i] == doctest::Approx(x.grad()[i]).epsilon(1e-15));
  }
  SUBCASE("reverse topological visit order") {
    auto x = random_tensor({2, 2}, 99);
    const auto h = mul_scalar(x, 2.0);
    const auto loss = sum(add(h, transpose(h)));
    const auto order = topological_order(loss);
    std::vector<std::string> ops;
    for (auto* node : order) ops.push_back(node->op);
    REQUIRE(ops.size() == 5);
    CHECK(ops.front() == "leaf");
    CHECK(ops.back() == "sum");
    // every node appears after all of its inputs
    for (std::size_t i = 0; i < order.size(); ++i)
      for (const auto& in : order[i]->inputs) {
        const auto pos = std::find(order.begin(), order.end(), in.get()) - order.begin();
        CHECK(static_cast<std::size_t>(pos) < i);
      }
  }
  SUBCASE("composite conv -> layernorm -> softmax -> L1 chain") {
    auto x = random_tensor({1, 3, 5, 5}, 100);
    auto w = random_tensor({4, 3, 3, 3}, 101);
    auto g = random_tensor({4}, 102);
    auto b = random_tensor({4}, 103);
    const auto target = random_tensor({1, 4, 5, 5}, 104, false);
    auto f = [&] { return mean(abs(sub(softmax(layernorm(conv2d(x, w, 1, 1), g, b), 1), target))); };
    CHECK(gradcheck(f, {x, w, g, b}) <= 1e-5);
  }
  SUBCASE("no_grad records nothing") {
    auto x = random_tensor({2}, 105);
    NoGradGuard guard;
    const auto y = mul_scalar(x, 3.0);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("gradcheck utility") {
  SUBCASE("sum is exact") {
    auto x = random_tensor({4, 3}, 111);
    CHECK(gradcheck([&] { return sum(x); }, {x}) < 1e-9);
  }
  SUBCASE("L1 away from zero residuals") {
    auto x = random_tensor({10}, 112);
    std::vector<double> t(10);
    for (std::size_t i = 0; i < 10; ++i) t[i] = x.values()[i] + (i % 2 ? 0.3 : -0.3);
    const Tensor<double> target({10}, t);
    CHECK(gradcheck([&] { return mean(abs(sub(x, target))); }, {x}) <= 1e-6);
  }
  SUBCASE("a wrong backward rule is caught") {
    auto x = random_tensor({3}, 113);
    auto f = [&] {
      // value of x^2 with the gradient of x
      auto sq = mul(x, x).detach();
      return sum(add(sq, sub(x, x.detach())));
    };
    CHECK(gradcheck(f, {x}) > 0.1);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor<float>> params{Tensor<float>({3}, {1.0f, -2.0f, 0.5f}, true)};
    const auto before = params[0].values();
    AdamState<float> state;
    adam_step(params, state);
    CHECK(params[0].values() == before);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    std::vector<Tensor<double>> params{Tensor<double>({3}, {1.0, 1.0, 1.0}, true)};
    auto g = params[0].mutable_grad();
    g[0] = 3.0;
    g[1] = -0.01;
    g[2] = 250.0;
    AdamState<double> state;
    adam_step(params, state);
    CHECK(params[0].values()[0] == doctest::Approx(1.0 - 2e-4).epsilon(1e-9));
    CHECK(params[0].values()[1] == doctest::Approx(1.0 + 2e-4).epsilon(1e-9));
    CHECK(params[0].values()[2] == doctest::Approx(1.0 - 2e-4).epsilon(1e-9));
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor<float>> params{Tensor<float>::zeros({3}, true)};
    AdamState<float> state;
    state.m = {std::vector<float>(2)};
    state.v = {std::vector<float>(2)};
    CHECK_THROWS_AS(adam_step(params, state), DimensionError);
  }
  SUBCASE("quadratic bowl descends monotonically") {
    // Independent scalar simulation of the same recurrence.
    double p_ref = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
      const double g = 2.0 * p_ref;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      p_ref -= 2e-4 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    std::vector<Tensor<double>> params{Tensor<double>({1}, {1.0}, true)};
    AdamState<double> state;
    double previous = 1.0;
    for (int t = 0; t < 200; ++t) {
      params[0].zero_grad();
      backward(sum(mul(params[0], params[0])));
      adam_step(params, state);
      const double now = std::abs(params[0].item());
      CHECK(now < previous);
      previous = now;
    }
    CHECK(params[0].item() == doctest::Approx(p_ref).epsilon(1e-12));
    // Each early Adam step moves ~lr, so 200 steps cover about 0.04.
    CHECK(params[0].item() == doctest::Approx(0.96).epsilon(1e-3));
  }
}

TEST_CASE("forward passes are bit-deterministic") {
  auto run = [] {
    const auto x = random_tensor<float>({2, 3, 8, 8}, 121, false);
    const auto w = random_tensor<float>({4, 3, 3, 3}, 122, false);
    return softmax(layernorm(conv2d(x, w, 1, 1), Tensor<float>::ones({4}), Tensor<float>::zeros({4})), 1);
  };
  CHECK(run().values() == run().values());
}
