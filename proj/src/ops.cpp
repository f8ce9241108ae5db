// SPDX-License-Identifier: Apache-2.0
#include "gformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernels.hpp"

namespace gformer {

namespace {

Shape contiguous_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Right-aligns `operand` against `out` and returns per-axis strides into the
// operand, zero along broadcast axes.
Shape broadcast_strides(const Shape& operand, const Shape& out) {
  Shape padded(out.size(), 1);
  std::copy(operand.begin(), operand.end(), padded.end() - static_cast<std::ptrdiff_t>(operand.size()));
  Shape strides = contiguous_strides(padded);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (padded[i] == out[i]) continue;
    if (padded[i] != 1) {
      throw DimensionError("cannot broadcast " + to_string(operand) + " to " + to_string(out));
    }
    strides[i] = 0;
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Calls f(i, ia, ib) for every flat output index i with the matching flat
// indices into the two operands.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t step_a = sa[rank - 1];
  const std::size_t step_b = sb[rank - 1];
  const std::size_t total = numel(out);
  Shape idx(rank, 0);
  std::size_t base_a = 0, base_b = 0, i = 0;
  while (i < total) {
    std::size_t ia = base_a, ib = base_b;
    for (std::size_t j = 0; j < inner; ++j, ++i, ia += step_a, ib += step_b) f(i, ia, ib);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      base_a += sa[ax];
      base_b += sb[ax];
      if (idx[ax] < out[ax]) break;
      base_a -= sa[ax] * out[ax];
      base_b -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T, class Fwd, class GradA, class GradB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, GradA grad_a,
                 GradB grad_b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<T> out(numel(out_shape));
  if (a.shape() == b.shape()) {
    const auto& da = a.values();
    const auto& db = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
    return Tensor<T>::from_op(std::move(out_shape), std::move(out), {a, b}, name,
                              [grad_a, grad_b](Node<T>& self) {
                                Node<T>& na = *self.inputs[0];
                                Node<T>& nb = *self.inputs[1];
                                const auto& g = self.grad;
                                if (na.requires_grad) {
                                  auto& ga = na.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    ga[i] += grad_a(g[i], na.data[i], nb.data[i]);
                                }
                                if (nb.requires_grad) {
                                  auto& gb = nb.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    gb[i] += grad_b(g[i], na.data[i], nb.data[i]);
                                }
                              });
  }
  Shape sa = broadcast_strides(a.shape(), out_shape);
  Shape sb = broadcast_strides(b.shape(), out_shape);
  {
    const auto& da = a.values();
    const auto& db = b.values();
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(da[ia], db[ib]); });
  }
  Shape shape_copy = out_shape;
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), {a, b}, name,
      [grad_a, grad_b, sa, sb, shape_copy](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        const auto& g = self.grad;
        if (na.requires_grad) {
          auto& ga = na.grad_buffer();
          for_each_broadcast(shape_copy, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += grad_a(g[i], na.data[ia], nb.data[ib]);
          });
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for_each_broadcast(shape_copy, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += grad_b(g[i], na.data[ia], nb.data[ib]);
          });
        }
      });
}

// dfn receives (x, y) and returns dy/dx.
template <typename T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto& dx = x.values();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(dx[i]);
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, name, [deriv](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    auto& gi = in.grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
  });
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + " expects a rank-" + std::to_string(rank) +
                         " tensor, got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary(
      x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  return unary(
      x, "mul_scalar", [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  // Subgradient 0 at the kink.
  return unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
  return unary(
      x, "rsqrt", [](T v) { return T(1) / std::sqrt(v); }, [](T, T y) { return T(-0.5) * y * y * y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, "softplus", [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        // sigmoid(v), branch keeps exp() from overflowing
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  return Tensor<T>::from_op({1}, {static_cast<T>(acc)}, {x}, "sum", [](Node<T>& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : gi) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& target) {
  if (target.size() > x.rank()) {
    throw DimensionError("sum_to target " + to_string(target) + " has higher rank than " +
                         to_string(x.shape()));
  }
  const Shape sx = contiguous_strides(x.shape());
  const Shape st = broadcast_strides(target, x.shape());
  std::vector<T> out(numel(target), T(0));
  const auto& dx = x.values();
  for_each_broadcast(x.shape(), sx, st, [&](std::size_t i, std::size_t, std::size_t it) { out[it] += dx[i]; });
  Shape full = x.shape();
  return Tensor<T>::from_op(target, std::move(out), {x}, "sum_to", [sx, st, full](Node<T>& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    const auto& g = self.grad;
    for_each_broadcast(full, sx, st, [&](std::size_t i, std::size_t, std::size_t it) { gi[i] += g[it]; });
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return Tensor<T>::from_op(std::move(shape), x.values(), {x}, "reshape", [](Node<T>& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(x.rank() - 2);
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (rows * cols);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<T> out(x.numel());
  const auto& dx = x.values();
  for (std::size_t n = 0; n < batch; ++n)
    kernels::transpose(dx.data() + n * rows * cols, out.data() + n * rows * cols, rows, cols);
  return Tensor<T>::from_op(std::move(shape), std::move(out), {x}, "transpose",
                            [rows, cols, batch](Node<T>& self) {
                              auto& gi = self.inputs[0]->grad_buffer();
                              for (std::size_t n = 0; n < batch; ++n) {
                                const T* g = self.grad.data() + n * rows * cols;
                                T* dst = gi.data() + n * rows * cols;
                                for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] += g[c * rows + r];
                              }
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + to_string(first));
  std::size_t total = 0;
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    lengths.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape shape = first;
  shape[axis] = total;
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].values();
    const std::size_t block = lengths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * block, block, out.data() + o * total * inner + offset * inner);
    offset += lengths[k];
  }
  return Tensor<T>::from_op(std::move(shape), std::move(out), parts, "concat",
                            [lengths, outer, inner, total](Node<T>& self) {
                              std::size_t offset = 0;
                              for (std::size_t k = 0; k < lengths.size(); ++k) {
                                Node<T>& in = *self.inputs[k];
                                const std::size_t block = lengths[k] * inner;
                                if (in.requires_grad) {
                                  auto& gi = in.grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    const T* g = self.grad.data() + o * total * inner + offset * inner;
                                    for (std::size_t j = 0; j < block; ++j) gi[o * block + j] += g[j];
                                  }
                                }
                                offset += lengths[k];
                              }
                            });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t full = x.dim(axis);
  const std::size_t len = end - begin;
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<T> out(numel(shape));
  const auto& src = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(src.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  return Tensor<T>::from_op(std::move(shape), std::move(out), {x}, "slice",
                            [outer, inner, full, begin, len](Node<T>& self) {
                              auto& gi = self.inputs[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o) {
                                T* dst = gi.data() + (o * full + begin) * inner;
                                const T* g = self.grad.data() + o * len * inner;
                                for (std::size_t j = 0; j < len * inner; ++j) dst[j] += g[j];
                              }
                            });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  const bool shapes_ok = (a.rank() == 2 && b.rank() == 2) ||
                         (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0));
  if (!shapes_ok || a.dim(a.rank() - 1) != b.dim(b.rank() - 2)) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " . " + to_string(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s)
    kernels::gemm(a.values().data() + s * m * k, b.values().data() + s * k * n, out.data() + s * m * n, m, k, n);
  FlopCounter::add(static_cast<std::uint64_t>(batch) * m * k * n);
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a, b}, "matmul", [batch, m, k, n](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    std::vector<T> scratch;
    for (std::size_t s = 0; s < batch; ++s) {
      const T* g = self.grad.data() + s * m * n;
      if (na.requires_grad) {
        // dA = dC . B^T
        scratch.resize(n * k);
        kernels::transpose(nb.data.data() + s * k * n, scratch.data(), k, n);
        kernels::gemm(g, scratch.data(), na.grad_buffer().data() + s * m * k, m, n, k);
      }
      if (nb.requires_grad) {
        // dB = A^T . dC
        scratch.resize(k * m);
        kernels::transpose(na.data.data() + s * m * k, scratch.data(), m, k);
        kernels::gemm(scratch.data(), g, nb.grad_buffer().data() + s * k * n, k, m, n);
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax axis out of range for " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  const auto& src = x.values();
  std::vector<T> out(src.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T peak = src[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, src[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(src[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, "softmax", [outer, inner, len](Node<T>& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          gi[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_rank(x.shape(), 4, "layernorm");
  const std::size_t batch = x.dim(0), channels = x.dim(1), pixels = x.dim(2) * x.dim(3);
  if (channels < 2) {
    throw DimensionError("layernorm over " + std::to_string(channels) +
                         " channel(s) is degenerate; need at least 2");
  }
  if (gain.numel() != channels || bias.numel() != channels) {
    throw DimensionError("layernorm gain/bias must have " + std::to_string(channels) + " entries");
  }
  const auto& src = x.values();
  const auto& g = gain.values();
  const auto& b = bias.values();
  std::vector<T> out(src.size());
  // Normalized activations and inverse deviations, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(src.size());
  auto inv_std = std::make_shared<std::vector<T>>(batch * pixels);
  std::vector<T> mu(pixels), var(pixels);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xs = src.data() + n * channels * pixels;
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < pixels; ++p) mu[p] += xs[c * pixels + p];
    for (std::size_t p = 0; p < pixels; ++p) mu[p] /= static_cast<T>(channels);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < pixels; ++p) {
        const T d = xs[c * pixels + p] - mu[p];
        var[p] += d * d;
      }
    T* is = inv_std->data() + n * pixels;
    for (std::size_t p = 0; p < pixels; ++p) is[p] = T(1) / std::sqrt(var[p] / static_cast<T>(channels) + eps);
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = n * channels * pixels + c * pixels;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T h = (xs[c * pixels + p] - mu[p]) * is[p];
        (*xhat)[off + p] = h;
        out[off + p] = g[c] * h + b[c];
      }
    }
  }
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {x, gain, bias}, "layernorm",
      [xhat, inv_std, batch, channels, pixels](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const auto& dy = self.grad;
        if (ng.requires_grad || nb.requires_grad) {
          auto& gg = ng.grad_buffer();
          auto& gb = nb.grad_buffer();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t off = n * channels * pixels + c * pixels;
              T sg = T(0), sb = T(0);
              for (std::size_t p = 0; p < pixels; ++p) {
                sg += dy[off + p] * (*xhat)[off + p];
                sb += dy[off + p];
              }
              if (ng.requires_grad) gg[c] += sg;
              if (nb.requires_grad) gb[c] += sb;
            }
        }
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        const auto& gain = ng.data;
        std::vector<T> mean_d(pixels), mean_dh(pixels);
        const T inv_c = T(1) / static_cast<T>(channels);
        for (std::size_t n = 0; n < batch; ++n) {
          std::fill(mean_d.begin(), mean_d.end(), T(0));
          std::fill(mean_dh.begin(), mean_dh.end(), T(0));
          const std::size_t base = n * channels * pixels;
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < pixels; ++p) {
              const T d = dy[base + c * pixels + p] * gain[c];
              mean_d[p] += d;
              mean_dh[p] += d * (*xhat)[base + c * pixels + p];
            }
          const T* is = inv_std->data() + n * pixels;
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < pixels; ++p) {
              const std::size_t idx = base + c * pixels + p;
              const T d = dy[idx] * gain[c];
              gx[idx] += is[p] * (d - mean_d[p] * inv_c - (*xhat)[idx] * mean_dh[p] * inv_c);
            }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad,
                 std::size_t groups) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d kernel");
  const std::size_t batch = x.dim(0), c_in = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0 || w.dim(1) * groups != c_in) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(x.shape()) + ", kernel " +
                         to_string(w.shape()) + ", groups " + std::to_string(groups));
  }
  if (stride == 0 || height + 2 * pad < kh || width + 2 * pad < kw) {
    throw DimensionError("conv2d kernel " + to_string(w.shape()) + " does not fit input " +
                         to_string(x.shape()));
  }
  kernels::ConvGeometry geo{c_in / groups, height, width, kh, kw, stride, pad};
  const std::size_t out_h = geo.out_height(), out_w = geo.out_width();
  const std::size_t cg_out = c_out / groups;
  const std::size_t rows = geo.col_rows(), cols = geo.col_cols();
  std::vector<T> out(batch * c_out * cols, T(0));
  thread_local std::vector<T> col;  // scratch, only ever grows
  FlopCounter::add(static_cast<std::uint64_t>(batch) * c_out * rows * cols);
  const T* wd = w.values().data();
  const T* xd = x.values().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      const T* in = xd + (n * c_in + g * geo.channels) * height * width;
      const T* col_ptr = kernels::im2col(in, geo, col);
      kernels::gemm(wd + g * cg_out * rows, col_ptr, out.data() + (n * c_out + g * cg_out) * cols, cg_out, rows, cols);
    }
  Shape shape{batch, c_out, out_h, out_w};
  return Tensor<T>::from_op(std::move(shape), std::move(out), {x, w}, "conv2d",
                            [geo, batch, groups, c_in, c_out, cg_out](Node<T>& self) {
                              Node<T>& nx = *self.inputs[0];
                              Node<T>& nw = *self.inputs[1];
                              const std::size_t rows = geo.col_rows(), cols = geo.col_cols();
                              const std::size_t plane = geo.height * geo.width;
                              thread_local std::vector<T> col, col_t, w_t, dcol;
                              for (std::size_t n = 0; n < batch; ++n)
                                for (std::size_t g = 0; g < groups; ++g) {
                                  const T* dy = self.grad.data() + (n * c_out + g * cg_out) * cols;
                                  if (nw.requires_grad) {
                                    const T* in = nx.data.data() + (n * c_in + g * geo.channels) * plane;
                                    const T* col_ptr = kernels::im2col(in, geo, col);
                                    col_t.resize(rows * cols);
                                    kernels::transpose(col_ptr, col_t.data(), rows, cols);
                                    kernels::gemm(dy, col_t.data(), nw.grad_buffer().data() + g * cg_out * rows,
                                                  cg_out, cols, rows);
                                  }
                                  if (nx.requires_grad) {
                                    w_t.resize(rows * cg_out);
                                    kernels::transpose(nw.data.data() + g * cg_out * rows, w_t.data(), cg_out, rows);
                                    dcol.assign(rows * cols, T(0));
                                    kernels::gemm(w_t.data(), dy, dcol.data(), rows, cg_out, cols);
                                    T* dx = nx.grad_buffer().data() + (n * c_in + g * geo.channels) * plane;
                                    kernels::col2im_add(dcol.data(), geo, dx);
                                  }
                                }
                            });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank(x.shape(), 4, "depthwise_conv2d input");
  require_rank(w.shape(), 4, "depthwise_conv2d kernel");
  if (w.dim(0) != x.dim(1) || w.dim(1) != 1) {
    throw DimensionError("depthwise kernel " + to_string(w.shape()) + " does not match " +
                         std::to_string(x.dim(1)) + " input channels");
  }
  if (w.dim(2) % 2 == 0 || w.dim(2) != w.dim(3)) {
    throw DimensionError("depthwise kernel must be square and odd, got " + to_string(w.shape()));
  }
  return conv2d(x, w, 1, w.dim(2) / 2, x.dim(1));
}

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank(w.shape(), 4, "pointwise_conv kernel");
  if (w.dim(2) != 1 || w.dim(3) != 1) {
    throw DimensionError("pointwise kernel must be 1x1, got " + to_string(w.shape()));
  }
  return conv2d(x, w, 1, 0, 1);
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.shape(), 4, "add_channel_bias");
  const std::size_t batch = x.dim(0), channels = x.dim(1), pixels = x.dim(2) * x.dim(3);
  if (bias.numel() != channels) {
    throw DimensionError("bias of " + std::to_string(bias.numel()) + " entries for " +
                         std::to_string(channels) + " channels");
  }
  std::vector<T> out = x.values();
  const auto& b = bias.values();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      T* dst = out.data() + (n * channels + c) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) dst[p] += b[c];
    }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x, bias}, "add_channel_bias",
                            [batch, channels, pixels](Node<T>& self) {
                              Node<T>& nx = *self.inputs[0];
                              Node<T>& nb = *self.inputs[1];
                              if (nx.requires_grad) {
                                auto& gx = nx.grad_buffer();
                                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                              }
                              if (nb.requires_grad) {
                                auto& gb = nb.grad_buffer();
                                for (std::size_t n = 0; n < batch; ++n)
                                  for (std::size_t c = 0; c < channels; ++c) {
                                    const T* g = self.grad.data() + (n * channels + c) * pixels;
                                    T acc = T(0);
                                    for (std::size_t p = 0; p < pixels; ++p) acc += g[p];
                                    gb[c] += acc;
                                  }
                              }
                            });
}

template <typename T>
Tensor<T> downsample_area(const Tensor<T>& x, std::size_t tau) {
  require_rank(x.shape(), 4, "downsample_area");
  if (tau == 0 || x.dim(2) % tau != 0 || x.dim(3) % tau != 0) {
    throw DimensionError("extent " + to_string(x.shape()) + " not divisible by downsample factor " +
                         std::to_string(tau));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / tau, ow = w / tau;
  const T inv_area = T(1) / static_cast<T>(tau * tau);
  const auto& src = x.values();
  std::vector<T> out(planes * oh * ow, T(0));
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = T(0);
        for (std::size_t dy = 0; dy < tau; ++dy)
          for (std::size_t dx = 0; dx < tau; ++dx) acc += src[(pl * h + oy * tau + dy) * w + ox * tau + dx];
        out[(pl * oh + oy) * ow + ox] = acc * inv_area;
      }
  return Tensor<T>::from_op({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, "downsample_area",
                            [planes, h, w, oh, ow, tau, inv_area](Node<T>& self) {
                              auto& gi = self.inputs[0]->grad_buffer();
                              for (std::size_t pl = 0; pl < planes; ++pl)
                                for (std::size_t y = 0; y < h; ++y)
                                  for (std::size_t xx = 0; xx < w; ++xx)
                                    gi[(pl * h + y) * w + xx] +=
                                        self.grad[(pl * oh + y / tau) * ow + xx / tau] * inv_area;
                            });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "upsample_nearest2x");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto& src = x.values();
  std::vector<T> out(planes * oh * ow);
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(pl * oh + y) * ow + xx] = src[(pl * h + y / 2) * w + xx / 2];
  return Tensor<T>::from_op({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, "upsample_nearest2x",
                            [planes, h, w, oh, ow](Node<T>& self) {
                              auto& gi = self.inputs[0]->grad_buffer();
                              for (std::size_t pl = 0; pl < planes; ++pl)
                                for (std::size_t y = 0; y < oh; ++y)
                                  for (std::size_t xx = 0; xx < ow; ++xx)
                                    gi[(pl * h + y / 2) * w + xx / 2] += self.grad[(pl * oh + y) * ow + xx];
                            });
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, ResizeFactor factor) {
  if (factor.direction == ResizeFactor::Direction::Up2) return upsample_nearest2x(x);
  if (factor.tau == 1) return x;
  return downsample_area(x, factor.tau);
}

#define GFORMER_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> abs(const Tensor<T>&);                                                        \
  template Tensor<T> sqrt(const Tensor<T>&);                                                       \
  template Tensor<T> rsqrt(const Tensor<T>&);                                                      \
  template Tensor<T> softplus(const Tensor<T>&);                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                       \
  template Tensor<T> silu(const Tensor<T>&);                                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> sum_to(const Tensor<T>&, const Shape&);                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> transpose(const Tensor<T>&);                                                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                           \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> pointwise_conv(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> downsample_area(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                         \
  template Tensor<T> resize(const Tensor<T>&, ResizeFactor);

GFORMER_INSTANTIATE_OPS(float)
GFORMER_INSTANTIATE_OPS(double)

}  // namespace gformer
