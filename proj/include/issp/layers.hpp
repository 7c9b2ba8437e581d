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
#include <string>
#include <utility>
#include <vector>

#include "issp/errors.hpp"
#include "issp/tensor.hpp"

namespace issp {

/// Weights, bias, their gradients, and Adam moments for one learnable layer.
/// Biases are optional in principle; every layer in this project has one.
template <typename T>
struct ParamTensor {
  Tensor<T> w;
  Tensor<T> b;
  Tensor<T> grad_w;
  Tensor<T> grad_b;
  Tensor<T> adam_m;    // first moment of w
  Tensor<T> adam_v;    // second moment of w
  Tensor<T> adam_m_b;  // first moment of b
  Tensor<T> adam_v_b;  // second moment of b
};

template <typename T>
ParamTensor<T> make_conv_param(std::size_t co, std::size_t ci, std::size_t kh,
                               std::size_t kw) {
  ParamTensor<T> p;
  p.w = Tensor<T>({co, ci, kh, kw});
  p.b = Tensor<T>({co});
  p.grad_w = Tensor<T>({co, ci, kh, kw});
  p.grad_b = Tensor<T>({co});
  p.adam_m = Tensor<T>({co, ci, kh, kw});
  p.adam_v = Tensor<T>({co, ci, kh, kw});
  p.adam_m_b = Tensor<T>({co});
  p.adam_v_b = Tensor<T>({co});
  return p;
}

template <typename T>
ParamTensor<T> make_linear_param(std::size_t n_out, std::size_t n_in) {
  ParamTensor<T> p;
  p.w = Tensor<T>({n_out, n_in});
  p.b = Tensor<T>({n_out});
  p.grad_w = Tensor<T>({n_out, n_in});
  p.grad_b = Tensor<T>({n_out});
  p.adam_m = Tensor<T>({n_out, n_in});
  p.adam_v = Tensor<T>({n_out, n_in});
  p.adam_m_b = Tensor<T>({n_out});
  p.adam_v_b = Tensor<T>({n_out});
  return p;
}

/// Reallocates only when the requested shape differs; the training loop
/// reuses its scratch tensors across iterations.
template <typename T>
void ensure_shape(Tensor<T>& t, const std::vector<std::size_t>& shape) {
  if (t.shape() != shape) t = Tensor<T>(shape);
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (!dst.same_shape(src)) throw ShapeMismatch("add_into shape mismatch");
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += s[i];
}

/// Spatial bookkeeping for the batched activation layout: a feature map batch
/// lives in a Tensor[C × (batch·h·w)] whose row c concatenates every sample's
/// plane c.  Convolutions then run as one matmul for the whole batch.
struct BatchGeom {
  std::size_t batch = 1;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t plane() const { return h * w; }
  std::size_t columns() const { return batch * h * w; }
};

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
void conv_forward_batched(const Tensor<T>& x, const BatchGeom& g,
                          const ParamTensor<T>& p, std::size_t pad,
                          std::size_t stride, Tensor<T>& col, Tensor<T>& y,
                          BatchGeom& gy) {
  std::size_t co = p.w.dim(0), ci = p.w.dim(1), kh = p.w.dim(2), kw = p.w.dim(3);
  if (x.rank() != 2 || x.dim(0) != ci) {
    throw ShapeMismatch("conv input channels do not match weight shape");
  }
  if (x.dim(1) != g.columns()) {
    throw ShapeMismatch("conv input does not match the stated batch geometry");
  }
  ConvGeometry cg = conv_geometry(g.h, g.w, kh, kw, pad, stride);
  gy = BatchGeom{g.batch, cg.ho, cg.wo};

  std::size_t kdim = ci * kh * kw;
  ensure_shape(col, {kdim, gy.columns()});
  for (std::size_t s = 0; s < g.batch; ++s) {
    detail::im2col_plane(x.data() + s * g.plane(), ci, g.h, g.w, g.columns(),
                         kh, kw, pad, stride, cg.ho, cg.wo,
                         col.data() + s * gy.plane(), gy.columns());
  }
  ensure_shape(y, {co, gy.columns()});
  detail::matmul_into(p.w.data(), col.data(), y.data(), co, kdim, gy.columns());
  for (std::size_t c = 0; c < co; ++c) {
    T bias = p.b[c];
    T* row = y.data() + c * gy.columns();
    for (std::size_t j = 0, n = gy.columns(); j < n; ++j) row[j] += bias;
  }
}

/// Fills p.grad_w / p.grad_b and dx from the upstream gradient dy, reusing
/// the im2col matrix cached by the forward pass.
template <typename T>
void conv_backward_batched(const Tensor<T>& dy, const BatchGeom& gy,
                           ParamTensor<T>& p, const Tensor<T>& col,
                           const BatchGeom& g, std::size_t pad,
                           std::size_t stride, Tensor<T>& dcol, Tensor<T>& dx,
                           bool compute_dx = true) {
  std::size_t co = p.w.dim(0), ci = p.w.dim(1), kh = p.w.dim(2), kw = p.w.dim(3);
  std::size_t kdim = ci * kh * kw;
  if (dy.rank() != 2 || dy.dim(0) != co || dy.dim(1) != gy.columns()) {
    throw ShapeMismatch("conv upstream gradient has unexpected shape");
  }

  detail::matmul_abt_into(dy.data(), col.data(), p.grad_w.data(), co,
                          gy.columns(), kdim);

  for (std::size_t c = 0; c < co; ++c) {
    T s{};
    const T* row = dy.data() + c * gy.columns();
    for (std::size_t j = 0, n = gy.columns(); j < n; ++j) s += row[j];
    p.grad_b[c] = s;
  }

  if (!compute_dx) return;
  Tensor<T> wt({kdim, co});
  for (std::size_t i = 0; i < co; ++i)
    for (std::size_t j = 0; j < kdim; ++j)
      wt[j * co + i] = p.w[i * kdim + j];
  ensure_shape(dcol, {kdim, gy.columns()});
  detail::matmul_into(wt.data(), dy.data(), dcol.data(), kdim, co, gy.columns());

  ensure_shape(dx, {ci, g.columns()});
  dx.fill(T{});
  for (std::size_t s = 0; s < g.batch; ++s) {
    detail::col2im_plane(dcol.data() + s * gy.plane(), gy.columns(), ci, g.h,
                         g.w, g.columns(), kh, kw, pad, stride, gy.h, gy.w,
                         dx.data() + s * g.plane());
  }
}

/// Single-image convolution forward, the reference entry point.  Runs the
/// same batched kernels with batch 1.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ParamTensor<T>& p,
                         std::size_t pad, std::size_t stride) {
  if (x.rank() != 3) throw ShapeMismatch("conv2d expects a Ci×H×W input");
  BatchGeom g{1, x.dim(1), x.dim(2)};
  Tensor<T> flat = x.reshaped({x.dim(0), g.columns()});
  Tensor<T> col, y;
  BatchGeom gy;
  conv_forward_batched(flat, g, p, pad, stride, col, y, gy);
  return y.reshaped({p.w.dim(0), gy.h, gy.w});
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, ParamTensor<T>& p,
                             std::size_t pad, std::size_t stride,
                             const Tensor<T>& dy) {
  if (x.rank() != 3 || dy.rank() != 3) {
    throw ShapeMismatch("conv2d_backward expects C×H×W tensors");
  }
  BatchGeom g{1, x.dim(1), x.dim(2)};
  Tensor<T> flat = x.reshaped({x.dim(0), g.columns()});
  Tensor<T> col, y;
  BatchGeom gy;
  conv_forward_batched(flat, g, p, pad, stride, col, y, gy);
  Tensor<T> dy_flat = dy.reshaped({dy.dim(0), gy.columns()});
  Tensor<T> dcol, dx;
  conv_backward_batched(dy_flat, gy, p, col, g, pad, stride, dcol, dx);
  ConvGrads<T> out;
  out.dx = dx.reshaped({x.dim(0), x.dim(1), x.dim(2)});
  out.dw = p.grad_w;
  out.db = p.grad_b;
  return out;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
void linear_forward_batched(const Tensor<T>& x, const ParamTensor<T>& p,
                            Tensor<T>& y) {
  std::size_t n_out = p.w.dim(0), n_in = p.w.dim(1);
  if (x.rank() != 2 || x.dim(0) != n_in) {
    throw ShapeMismatch("linear input width does not match weight shape");
  }
  std::size_t batch = x.dim(1);
  ensure_shape(y, {n_out, batch});
  detail::matmul_into(p.w.data(), x.data(), y.data(), n_out, n_in, batch);
  for (std::size_t i = 0; i < n_out; ++i) {
    T bias = p.b[i];
    T* row = y.data() + i * batch;
    for (std::size_t s = 0; s < batch; ++s) row[s] += bias;
  }
}

template <typename T>
void linear_backward_batched(const Tensor<T>& dy, ParamTensor<T>& p,
                             const Tensor<T>& x, Tensor<T>& dx,
                             bool compute_dx = true) {
  std::size_t n_out = p.w.dim(0), n_in = p.w.dim(1);
  std::size_t batch = x.dim(1);
  if (dy.rank() != 2 || dy.dim(0) != n_out || dy.dim(1) != batch) {
    throw ShapeMismatch("linear upstream gradient has unexpected shape");
  }
  detail::matmul_abt_into(dy.data(), x.data(), p.grad_w.data(), n_out, batch,
                          n_in);
  for (std::size_t i = 0; i < n_out; ++i) {
    T s{};
    const T* row = dy.data() + i * batch;
    for (std::size_t j = 0; j < batch; ++j) s += row[j];
    p.grad_b[i] = s;
  }
  if (!compute_dx) return;
  Tensor<T> wt({n_in, n_out});
  for (std::size_t i = 0; i < n_out; ++i)
    for (std::size_t j = 0; j < n_in; ++j) wt[j * n_out + i] = p.w[i * n_in + j];
  ensure_shape(dx, {n_in, batch});
  detail::matmul_into(wt.data(), dy.data(), dx.data(), n_in, n_out, batch);
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const ParamTensor<T>& p) {
  if (x.rank() != 1) throw ShapeMismatch("linear expects a rank-1 input");
  Tensor<T> xm = x.reshaped({x.dim(0), 1});
  Tensor<T> y;
  linear_forward_batched(xm, p, y);
  return y.reshaped({p.w.dim(0)});
}

template <typename T>
struct LinearGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, ParamTensor<T>& p,
                               const Tensor<T>& dy) {
  if (x.rank() != 1 || dy.rank() != 1) {
    throw ShapeMismatch("linear_backward expects rank-1 tensors");
  }
  Tensor<T> xm = x.reshaped({x.dim(0), 1});
  Tensor<T> dym = dy.reshaped({dy.dim(0), 1});
  Tensor<T> dx;
  linear_backward_batched(dym, p, xm, dx);
  LinearGrads<T> out;
  out.dx = dx.reshaped({x.dim(0)});
  out.dw = p.grad_w;
  out.db = p.grad_b;
  return out;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  T* d = y.data();
  for (std::size_t i = 0, n = y.numel(); i < n; ++i)
    if (d[i] < T{}) d[i] = T{};
  return y;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  if (!x.same_shape(dy)) throw ShapeMismatch("relu_backward shape mismatch");
  Tensor<T> dx = dy;
  const T* xi = x.data();
  T* d = dx.data();
  for (std::size_t i = 0, n = dx.numel(); i < n; ++i)
    if (!(xi[i] > T{})) d[i] = T{};
  return dx;
}

// ---------------------------------------------------------------------------
// Pixel shuffle (sub-pixel upsampling)

/// y[c][s·h+i][s·w+j] = x[c·s²+i·s+j][h][w] applied per sample of the batched
/// layout.  Pure permutation; backward is the inverse scatter.
template <typename T>
void pixel_shuffle_batched(const Tensor<T>& x, const BatchGeom& g,
                           std::size_t s, Tensor<T>& y, BatchGeom& gy) {
  if (x.rank() != 2 || x.dim(1) != g.columns()) {
    throw ShapeMismatch("pixel_shuffle input does not match batch geometry");
  }
  std::size_t s2 = s * s;
  if (x.dim(0) % s2 != 0) {
    throw ShapeMismatch("pixel_shuffle channel count not divisible by s^2");
  }
  std::size_t c_out = x.dim(0) / s2;
  gy = BatchGeom{g.batch, g.h * s, g.w * s};
  ensure_shape(y, {c_out, gy.columns()});
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        const T* xrow = x.data() + (c * s2 + i * s + j) * g.columns();
        T* yrow = y.data() + c * gy.columns();
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* xp = xrow + b * g.plane();
          T* yp = yrow + b * gy.plane();
          for (std::size_t h = 0; h < g.h; ++h) {
            for (std::size_t w = 0; w < g.w; ++w) {
              yp[(h * s + i) * gy.w + (w * s + j)] = xp[h * g.w + w];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void pixel_unshuffle_batched(const Tensor<T>& y, const BatchGeom& gy,
                             std::size_t s, Tensor<T>& x, BatchGeom& g) {
  if (y.rank() != 2 || y.dim(1) != gy.columns()) {
    throw ShapeMismatch("pixel_unshuffle input does not match batch geometry");
  }
  if (gy.h % s != 0 || gy.w % s != 0) {
    throw ShapeMismatch("pixel_unshuffle dims not divisible by s");
  }
  std::size_t c_out = y.dim(0);
  g = BatchGeom{gy.batch, gy.h / s, gy.w / s};
  ensure_shape(x, {c_out * s * s, g.columns()});
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        T* xrow = x.data() + (c * s * s + i * s + j) * g.columns();
        const T* yrow = y.data() + c * gy.columns();
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* xp = xrow + b * g.plane();
          const T* yp = yrow + b * gy.plane();
          for (std::size_t h = 0; h < g.h; ++h) {
            for (std::size_t w = 0; w < g.w; ++w) {
              xp[h * g.w + w] = yp[(h * s + i) * gy.w + (w * s + j)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t s) {
  if (x.rank() != 3) throw ShapeMismatch("pixel_shuffle expects C×H×W");
  BatchGeom g{1, x.dim(1), x.dim(2)};
  Tensor<T> flat = x.reshaped({x.dim(0), g.columns()});
  Tensor<T> y;
  BatchGeom gy;
  pixel_shuffle_batched(flat, g, s, y, gy);
  return y.reshaped({x.dim(0) / (s * s), gy.h, gy.w});
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& y, std::size_t s) {
  if (y.rank() != 3) throw ShapeMismatch("pixel_unshuffle expects C×H×W");
  BatchGeom gy{1, y.dim(1), y.dim(2)};
  Tensor<T> flat = y.reshaped({y.dim(0), gy.columns()});
  Tensor<T> x;
  BatchGeom g;
  pixel_unshuffle_batched(flat, gy, s, x, g);
  return x.reshaped({y.dim(0) * s * s, g.h, g.w});
}

// ---------------------------------------------------------------------------
// Loss

/// Mean squared error over all elements; the gradient therefore carries the
/// 1/N batch averaging.  Loss accumulates in double, ascending flat index.
template <typename T>
std::pair<double, Tensor<T>> mse_loss(const Tensor<T>& pred,
                                      const Tensor<T>& target) {
  if (!pred.same_shape(target)) throw ShapeMismatch("mse_loss shape mismatch");
  std::size_t n = pred.numel();
  Tensor<T> grad(pred.shape());
  const T* p = pred.data();
  const T* t = target.data();
  T* g = grad.data();
  double loss = 0.0;
  T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    T d = p[i] - t[i];
    loss += static_cast<double>(d) * static_cast<double>(d);
    g[i] = T{2} * d * inv_n;
  }
  return {loss / static_cast<double>(n), grad};
}

}  // namespace issp
