// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Image-like tensors are laid out
// batch x channels x height x width. All ops are instantiated for float
// (training) and double (gradient checking).

#pragma once

#include <vector>

#include "gformer/tensor.hpp"

namespace gformer {

// Elementwise with numpy-style broadcasting (shapes right-aligned).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T value);

template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> rsqrt(const Tensor<T>& x);
/// log(1 + exp(x)), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);

/// Sum of all elements, shape [1].
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Sums over the axes where `target` has extent 1 (inverse of broadcasting).
template <typename T> Tensor<T> sum_to(const Tensor<T>& x, const Shape& target);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// [m x k] . [k x n], or batched [N x m x k] . [N x k x n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes each spatial location of a BxCxHxW tensor across its channels,
/// then applies per-channel gain and bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T eps = T(1e-5));

/// Grouped 2-D cross-correlation with zero padding. `w` is
/// C_out x (C_in / groups) x k x k.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad,
                 std::size_t groups = 1);
/// One k x k kernel per channel, "same" padding.
template <typename T> Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w);
/// 1x1 convolution mixing channels per pixel.
template <typename T> Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w);
/// Adds a length-C bias to every pixel of a BxCxHxW tensor.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Mean of each tau x tau block.
template <typename T> Tensor<T> downsample_area(const Tensor<T>& x, std::size_t tau);
/// Each pixel replicated into a 2x2 block.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

struct ResizeFactor {
  enum class Direction { Down, Up2 };
  Direction direction = Direction::Down;
  std::size_t tau = 1;

  static ResizeFactor down(std::size_t tau) { return {Direction::Down, tau}; }
  static ResizeFactor up2() { return {Direction::Up2, 2}; }
};
template <typename T> Tensor<T> resize(const Tensor<T>& x, ResizeFactor factor);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

}  // namespace gformer
