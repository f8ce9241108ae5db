// SPDX-License-Identifier: Apache-2.0
//
// Raw loops shared by the differentiable ops. Row-major throughout; matrix
// products go through Eigen.

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace gformer::kernels {

/// C[m x n] += A[m x k] . B[k x n], all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(m), inner = static_cast<Eigen::Index>(k),
             cols = static_cast<Eigen::Index>(n);
  Eigen::Map<Matrix>(c, rows, cols).noalias() +=
      Eigen::Map<const Matrix>(a, rows, inner) * Eigen::Map<const Matrix>(b, inner, cols);
}

/// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

struct ConvGeometry {
  std::size_t channels;  // per group
  std::size_t height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, pad;

  std::size_t out_height() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return out_height() * out_width(); }
  bool is_identity_unfold() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) of one kernel tap read inside the image row.
inline void valid_columns(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const std::size_t ow = g.out_width();
  // ix = ox * stride + kx - pad must lie in [0, width).
  lo = kx >= g.pad ? 0 : (g.pad - kx + g.stride - 1) / g.stride;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(g.width + g.pad) - 1 - static_cast<std::ptrdiff_t>(kx);
  hi = last < 0 ? 0 : std::min(ow, static_cast<std::size_t>(last) / g.stride + 1);
  if (hi < lo) hi = lo;
}

/// Unfolds one group of one image into a (C*kh*kw) x (Ho*Wo) matrix.
/// Returns `in` itself when the unfold would be a copy.
template <typename T>
const T* im2col(const T* in, const ConvGeometry& g, std::vector<T>& col) {
  if (g.is_identity_unfold()) return in;
  const std::size_t oh = g.out_height(), ow = g.out_width();
  col.resize(g.col_rows() * oh * ow);
  T* dst = col.data();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* plane = in + c * g.height * g.width;
        std::size_t lo, hi;
        valid_columns(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < oh; ++oy, dst += ow) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          const T* row = plane + static_cast<std::size_t>(iy) * g.width + (lo * g.stride + kx - g.pad);
          std::fill_n(dst, lo, T(0));
          if (g.stride == 1) {
            std::copy_n(row, hi - lo, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox, row += g.stride) dst[ox] = *row;
          }
          std::fill(dst + hi, dst + ow, T(0));
        }
      }
  return col.data();
}

/// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* out) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  if (g.is_identity_unfold()) {
    for (std::size_t i = 0; i < g.channels * oh * ow; ++i) out[i] += col[i];
    return;
  }
  const T* src = col;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* plane = out + c * g.height * g.width;
        std::size_t lo, hi;
        valid_columns(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < oh; ++oy, src += ow) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* row = plane + static_cast<std::size_t>(iy) * g.width + (lo * g.stride + kx - g.pad);
          for (std::size_t ox = lo; ox < hi; ++ox, row += g.stride) *row += src[ox];
        }
      }
}

}  // namespace gformer::kernels
