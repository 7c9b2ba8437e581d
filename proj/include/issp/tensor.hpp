// Copyright 2025 The issp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "issp/errors.hpp"
#include "issp/rng.hpp"

namespace issp {

/// Dense row-major tensor.  Plain value type: no views, no broadcasting.
/// The stride of the last axis is always 1.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), T{});
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<T> values) {
    if (checked_numel(shape) != values.size()) {
      throw ShapeMismatch("tensor data length " + std::to_string(values.size()) +
                          " does not match shape product " +
                          std::to_string(checked_numel(shape)));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_not_matrix(); }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_not_matrix(); }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Reinterprets the same data under a new shape with equal element count.
  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_numel(new_shape) != data_.size()) {
      throw ShapeMismatch("reshape to incompatible element count");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeMismatch("tensor shape must have at least one axis");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d < 1) throw ShapeMismatch("tensor dimensions must be >= 1");
      n *= d;
    }
    return n;
  }

  [[noreturn]] std::size_t throw_not_matrix() const {
    throw ShapeMismatch("operation requires a rank-2 tensor");
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Tuning constants for the register-blocked kernels.  The wide/narrow column
// blocks are chosen so the accumulator tile fits the vector register file;
// doubles get half the width of floats.
template <typename T>
struct MatmulBlock {
  static constexpr int kWide = 64;
  static constexpr int kNarrow = 16;
};
template <>
struct MatmulBlock<double> {
  static constexpr int kWide = 32;
  static constexpr int kNarrow = 8;
};

template <typename T, int IR, int JB>
inline void matmul_tile(const T* __restrict a, const T* __restrict b,
                        T* __restrict c, std::size_t i0, std::size_t j0,
                        std::size_t k, std::size_t n) {
  T acc[IR][JB];
  for (int r = 0; r < IR; ++r)
    for (int j = 0; j < JB; ++j) acc[r][j] = T{};
  for (std::size_t t = 0; t < k; ++t) {
    const T* br = b + t * n + j0;
    for (int r = 0; r < IR; ++r) {
      T av = a[(i0 + r) * k + t];
      for (int j = 0; j < JB; ++j) acc[r][j] += av * br[j];
    }
  }
  for (int r = 0; r < IR; ++r)
    std::memcpy(c + (i0 + r) * n + j0, acc[r], sizeof(T) * JB);
}

template <typename T, int IR>
inline void matmul_rows(const T* __restrict a, const T* __restrict b,
                        T* __restrict c, std::size_t i0, std::size_t k,
                        std::size_t n) {
  constexpr int kWide = MatmulBlock<T>::kWide;
  constexpr int kNarrow = MatmulBlock<T>::kNarrow;
  std::size_t j0 = 0;
  for (; j0 + kWide <= n; j0 += kWide) matmul_tile<T, IR, kWide>(a, b, c, i0, j0, k, n);
  for (; j0 + kNarrow <= n; j0 += kNarrow) matmul_tile<T, IR, kNarrow>(a, b, c, i0, j0, k, n);
  for (; j0 < n; ++j0) {
    for (int r = 0; r < IR; ++r) {
      T s{};
      for (std::size_t t = 0; t < k; ++t) s += a[(i0 + r) * k + t] * b[t * n + j0];
      c[(i0 + r) * n + j0] = s;
    }
  }
}

/// c[m×n] = a[m×k] · b[k×n].  Every output element is a single accumulator
/// summed over ascending t regardless of block boundaries, so results are
/// deterministic for a given build and match the naive triple loop up to
/// FMA contraction (the compiler may fuse differently per loop shape).
template <typename T>
inline void matmul_into(const T* a, const T* b, T* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  std::size_t i0 = 0;
  for (; i0 + 4 <= m; i0 += 4) matmul_rows<T, 4>(a, b, c, i0, k, n);
  for (; i0 < m; ++i0) matmul_rows<T, 1>(a, b, c, i0, k, n);
}

template <typename T>
struct AbtLanes {
  static constexpr int kVW = 16;
};
template <>
struct AbtLanes<double> {
  static constexpr int kVW = 8;
};

/// c[m×n] = a[m×k] · b[n×k]ᵀ without materializing the transpose.  Used for
/// weight gradients, where both operands are laid out along the reduction
/// axis.  Accumulation runs in kVW interleaved lanes that are combined in a
/// fixed order at the end; deterministic, but a different (documented)
/// summation order than matmul_into.
template <typename T>
inline void matmul_abt_into(const T* __restrict a, const T* __restrict bt,
                            T* __restrict c, std::size_t m, std::size_t k,
                            std::size_t n) {
  constexpr int TI = 4, TJ = 4, VW = AbtLanes<T>::kVW;
  std::size_t i0 = 0;
  for (; i0 + TI <= m; i0 += TI) {
    std::size_t j0 = 0;
    for (; j0 + TJ <= n; j0 += TJ) {
      T acc[TI][TJ][VW];
      for (int di = 0; di < TI; ++di)
        for (int dj = 0; dj < TJ; ++dj)
          for (int v = 0; v < VW; ++v) acc[di][dj][v] = T{};
      std::size_t t = 0;
      for (; t + VW <= k; t += VW) {
        T av[TI][VW], bv[TJ][VW];
        for (int di = 0; di < TI; ++di)
          for (int v = 0; v < VW; ++v) av[di][v] = a[(i0 + di) * k + t + v];
        for (int dj = 0; dj < TJ; ++dj)
          for (int v = 0; v < VW; ++v) bv[dj][v] = bt[(j0 + dj) * k + t + v];
        for (int di = 0; di < TI; ++di)
          for (int dj = 0; dj < TJ; ++dj)
            for (int v = 0; v < VW; ++v) acc[di][dj][v] += av[di][v] * bv[dj][v];
      }
      for (int di = 0; di < TI; ++di)
        for (int dj = 0; dj < TJ; ++dj) {
          T s{};
          for (int v = 0; v < VW; ++v) s += acc[di][dj][v];
          for (std::size_t tt = t; tt < k; ++tt)
            s += a[(i0 + di) * k + tt] * bt[(j0 + dj) * k + tt];
          c[(i0 + di) * n + j0 + dj] = s;
        }
    }
    for (; j0 < n; ++j0)
      for (int di = 0; di < TI; ++di) {
        T s{};
        for (std::size_t tt = 0; tt < k; ++tt)
          s += a[(i0 + di) * k + tt] * bt[j0 * k + tt];
        c[(i0 + di) * n + j0] = s;
      }
  }
  for (; i0 < m; ++i0)
    for (std::size_t j = 0; j < n; ++j) {
      T s{};
      for (std::size_t tt = 0; tt < k; ++tt) s += a[i0 * k + tt] * bt[j * k + tt];
      c[i0 * n + j] = s;
    }
}

}  // namespace detail

/// Matrix product with deterministic ascending-index summation per output
/// element (bit-reproducible training depends on this).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionMismatch("matmul requires rank-2 tensors");
  }
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul inner dimensions disagree: " +
                            std::to_string(a.cols()) + " vs " +
                            std::to_string(b.rows()));
  }
  Tensor<T> c({a.rows(), b.cols()});
  detail::matmul_into(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

/// a[m×k] · bᵀ where b is stored n×k.  Same contract as matmul on the
/// transposed operand; reduction order is fixed but lane-interleaved.
template <typename T>
Tensor<T> matmul_abt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionMismatch("matmul_abt requires rank-2 tensors");
  }
  if (a.cols() != b.cols()) {
    throw DimensionMismatch("matmul_abt reduction dimensions disagree: " +
                            std::to_string(a.cols()) + " vs " +
                            std::to_string(b.cols()));
  }
  Tensor<T> c({a.rows(), b.rows()});
  detail::matmul_abt_into(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionMismatch("transpose requires a rank-2 tensor");
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

struct ConvGeometry {
  std::size_t ho = 0;
  std::size_t wo = 0;
};

/// Output size of a convolution; throws when the geometry does not tile.
inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh,
                                  std::size_t kw, std::size_t pad,
                                  std::size_t stride) {
  if (stride < 1) throw BadGeometry("stride must be >= 1");
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw BadGeometry("kernel larger than padded input");
  }
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
    throw BadGeometry("convolution output size is not integral");
  }
  ConvGeometry g;
  g.ho = (h + 2 * pad - kh) / stride + 1;
  g.wo = (w + 2 * pad - kw) / stride + 1;
  return g;
}

namespace detail {

/// im2col for one image plane-set.  `x` points at the first channel of this
/// sample; channels are `x_pitch` apart (so batched activations, where one
/// row holds every sample's plane, use pitch = batch·h·w).  Column j of the
/// output enumerates output pixel j's receptive field in (channel,
/// kernel-row, kernel-col) order; rows of the output are `col_pitch` apart.
template <typename T>
void im2col_plane(const T* x, std::size_t channels, std::size_t h,
                  std::size_t w, std::size_t x_pitch, std::size_t kh,
                  std::size_t kw, std::size_t pad, std::size_t stride,
                  std::size_t ho, std::size_t wo, T* col,
                  std::size_t col_pitch) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * x_pitch;
    for (std::size_t kr = 0; kr < kh; ++kr) {
      for (std::size_t kc = 0; kc < kw; ++kc) {
        T* row = col + ((c * kh + kr) * kw + kc) * col_pitch;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + kr) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::memset(dst, 0, sizeof(T) * wo);
            continue;
          }
          const T* src_row = xc + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(kc) - static_cast<std::ptrdiff_t>(pad);
            std::ptrdiff_t lead = ix0 < 0 ? -ix0 : 0;
            std::ptrdiff_t last = ix0 + static_cast<std::ptrdiff_t>(wo) - 1;
            std::ptrdiff_t trail = last >= static_cast<std::ptrdiff_t>(w)
                                       ? last - static_cast<std::ptrdiff_t>(w) + 1
                                       : 0;
            std::ptrdiff_t mid = static_cast<std::ptrdiff_t>(wo) - lead - trail;
            if (lead > 0) std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(lead));
            if (mid > 0) {
              std::memcpy(dst + lead, src_row + ix0 + lead,
                          sizeof(T) * static_cast<std::size_t>(mid));
            }
            if (trail > 0) {
              std::memset(dst + lead + (mid > 0 ? mid : 0), 0,
                          sizeof(T) * static_cast<std::size_t>(trail));
            }
          } else {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kc) -
                                  static_cast<std::ptrdiff_t>(pad);
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                            ? T{}
                            : src_row[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col_plane.  The caller zeroes the destination;
/// accumulation visits rows in (channel, kernel-row, kernel-col) order and
/// columns ascending, a fixed order for reproducibility.
template <typename T>
void col2im_plane(const T* col, std::size_t col_pitch, std::size_t channels,
                  std::size_t h, std::size_t w, std::size_t x_pitch,
                  std::size_t kh, std::size_t kw, std::size_t pad,
                  std::size_t stride, std::size_t ho, std::size_t wo, T* x) {
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * x_pitch;
    for (std::size_t kr = 0; kr < kh; ++kr) {
      for (std::size_t kc = 0; kc < kw; ++kc) {
        const T* row = col + ((c * kh + kr) * kw + kc) * col_pitch;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + kr) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst_row = xc + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kc) -
                                static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst_row[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Unrolls convolution receptive fields into a (C·kh·kw) × (Ho·Wo) matrix so
/// convolution becomes one matmul.  Out-of-bounds taps read as zero.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw,
                 std::size_t pad, std::size_t stride) {
  if (x.rank() != 3) throw BadGeometry("im2col expects a C×H×W tensor");
  std::size_t channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  ConvGeometry g = conv_geometry(h, w, kh, kw, pad, stride);
  Tensor<T> col({channels * kh * kw, g.ho * g.wo});
  detail::im2col_plane(x.data(), channels, h, w, h * w, kh, kw, pad, stride,
                       g.ho, g.wo, col.data(), g.ho * g.wo);
  return col;
}

/// Inverse scatter-add of im2col; used to push gradients back to input pixels.
template <typename T>
Tensor<T> col2im(const Tensor<T>& col, std::size_t channels, std::size_t h,
                 std::size_t w, std::size_t kh, std::size_t kw, std::size_t pad,
                 std::size_t stride) {
  ConvGeometry g = conv_geometry(h, w, kh, kw, pad, stride);
  if (col.rank() != 2 || col.rows() != channels * kh * kw ||
      col.cols() != g.ho * g.wo) {
    throw BadGeometry("col2im input does not match the stated geometry");
  }
  Tensor<T> x({channels, h, w});
  detail::col2im_plane(col.data(), g.ho * g.wo, channels, h, w, h * w, kh, kw,
                       pad, stride, g.ho, g.wo, x.data());
  return x;
}

/// n uniform draws in [lo, hi), consumed in order from rng.
template <typename T>
Tensor<T> rng_uniform(Rng& rng, T lo, T hi, std::size_t n) {
  if (!(lo < hi)) throw BadRange("rng_uniform requires lo < hi");
  Tensor<T> t({n});
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<T>(static_cast<double>(lo) +
                          (static_cast<double>(hi) - static_cast<double>(lo)) *
                              rng.next_unit());
  }
  return t;
}

}  // namespace issp
