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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/layers.hpp"
#include "issp/model.hpp"
#include "issp/pruning.hpp"
#include "issp/serialize.hpp"
#include "issp/tensor.hpp"

namespace issp {

// ---------------------------------------------------------------------------
// CSR storage

struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> row_ptr;  // rows + 1 entries, row_ptr[0] == 0
  std::vector<std::uint32_t> col_idx;  // strictly ascending within a row
  std::vector<float> vals;

  std::size_t nnz() const { return vals.size(); }
};

inline void validate_csr(const CsrMatrix& m) {
  if (m.row_ptr.size() != m.rows + 1 || m.row_ptr.front() != 0) {
    throw ShapeMismatch("csr: row_ptr must hold rows+1 entries starting at 0");
  }
  if (m.row_ptr.back() != m.col_idx.size() || m.col_idx.size() != m.vals.size()) {
    throw ShapeMismatch("csr: row_ptr end must equal nnz");
  }
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (m.row_ptr[i] > m.row_ptr[i + 1]) {
      throw ShapeMismatch("csr: row_ptr must be non-decreasing");
    }
    for (std::uint32_t e = m.row_ptr[i]; e < m.row_ptr[i + 1]; ++e) {
      if (m.col_idx[e] >= m.cols) throw ShapeMismatch("csr: column out of range");
      if (e > m.row_ptr[i] && m.col_idx[e] <= m.col_idx[e - 1]) {
        throw ShapeMismatch("csr: columns must be strictly ascending per row");
      }
    }
  }
}

/// Compresses a frozen layer's weights to CSR.  Rows are the leading weight
/// dimension (output channels / units), columns the flattened rest, matching
/// the layer's im2col contraction.  Every kept position becomes an entry,
/// zero-valued or not, so nnz always equals the kept count; a nonzero weight
/// at a pruned position means mask and weights diverged and is an error.
template <typename T>
CsrMatrix to_csr(const Tensor<T>& w, const LayerMask& mask) {
  if (!mask.frozen) throw NotFrozen("to_csr requires a frozen mask");
  if (w.numel() != mask.n) throw ShapeMismatch("mask does not match weight count");
  CsrMatrix m;
  m.rows = w.dim(0);
  m.cols = w.numel() / w.dim(0);
  m.row_ptr.reserve(m.rows + 1);
  m.row_ptr.push_back(0);
  const T* wd = w.data();
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      std::size_t flat = i * m.cols + j;
      if (mask.designated[flat]) {
        if (wd[flat] != T{}) {
          throw MaskWeightDisagreement("nonzero weight at a pruned position in " +
                                       mask.layer_name);
        }
        continue;
      }
      m.col_idx.push_back(static_cast<std::uint32_t>(j));
      m.vals.push_back(static_cast<float>(wd[flat]));
    }
    m.row_ptr.push_back(static_cast<std::uint32_t>(m.col_idx.size()));
  }
  return m;
}

inline Tensor<float> to_dense(const CsrMatrix& m) {
  Tensor<float> d = Tensor<float>::zeros({m.rows, m.cols});
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::uint32_t e = m.row_ptr[i]; e < m.row_ptr[i + 1]; ++e) {
      d[i * m.cols + m.col_idx[e]] = m.vals[e];
    }
  }
  return d;
}

namespace detail {

/// out[rows × n] = A_csr · B, entries of each output element accumulated in
/// ascending column order.
inline void csr_matmul_into(const CsrMatrix& a, const float* b, std::size_t n,
                            float* out) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    float* orow = out + i * n;
    std::memset(orow, 0, sizeof(float) * n);
    for (std::uint32_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
      float v = a.vals[e];
      const float* brow = b + static_cast<std::size_t>(a.col_idx[e]) * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
}

}  // namespace detail

inline Tensor<float> csr_matmul(const CsrMatrix& a, const Tensor<float>& b) {
  if (b.rank() != 2 || b.dim(0) != a.cols) {
    throw DimensionMismatch("csr_matmul: inner dimensions disagree");
  }
  Tensor<float> out({a.rows, b.dim(1)});
  detail::csr_matmul_into(a, b.data(), b.dim(1), out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Sparse model

struct SparseLayer {
  std::string name;
  LayerKind kind = LayerKind::conv2d;
  CsrMatrix w;
  Tensor<float> b;
  std::size_t pad = 0;
  std::size_t stride = 1;
};

/// Inference-only counterpart of Model with CSR weights.  The forward graph
/// mirrors the dense one exactly; only the contraction kernel differs.
class SparseModel {
 public:
  explicit SparseModel(ModelConfig cfg) : cfg_(cfg) {}

  const ModelConfig& config() const { return cfg_; }
  std::vector<SparseLayer>& layers() { return layers_; }
  const std::vector<SparseLayer>& layers() const { return layers_; }

  double nnz_fraction() const {
    std::size_t nnz = 0, total = 0;
    for (const SparseLayer& l : layers_) {
      nnz += l.w.nnz();
      total += l.w.rows * l.w.cols;
    }
    return total == 0 ? 0.0 : static_cast<double>(nnz) / static_cast<double>(total);
  }

  Tensor<float> forward_image(const Tensor<float>& x) {
    if (x.rank() != 3 || x.dim(0) != 3) {
      throw ShapeMismatch("forward_image expects a 3×H×W tensor");
    }
    std::size_t h = x.dim(1), w = x.dim(2), s = cfg_.scale;
    if (cfg_.arch == Arch::mini_edsr) {
      forward_edsr(x.reshaped({3, h * w}), BatchGeom{1, h, w});
      return out_.reshaped({3, s * h, s * w});
    }
    std::size_t p = cfg_.mlp_patch;
    if (h % p != 0 || w % p != 0) {
      throw ShapeMismatch("mini_mlp evaluates images whose dims are multiples "
                          "of its patch size");
    }
    std::size_t ty = h / p, tx = w / p, tiles = ty * tx;
    Tensor<float> xin({3 * p * p, tiles});
    for (std::size_t t = 0; t < tiles; ++t) {
      std::size_t oy = (t / tx) * p, ox = (t % tx) * p;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            xin[((c * p + i) * p + j) * tiles + t] =
                x[(c * h + oy + i) * w + ox + j];
    }
    forward_mlp(xin);
    std::size_t sp = s * p;
    Tensor<float> y({3, s * h, s * w});
    for (std::size_t t = 0; t < tiles; ++t) {
      std::size_t oy = (t / tx) * sp, ox = (t % tx) * sp;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < sp; ++i)
          for (std::size_t j = 0; j < sp; ++j)
            y[(c * s * h + oy + i) * s * w + ox + j] =
                out_[((c * sp + i) * sp + j) * tiles + t];
    }
    return y;
  }

 private:
  void sparse_conv(const Tensor<float>& x, const BatchGeom& g,
                   const SparseLayer& l, Tensor<float>& y, BatchGeom& gy) {
    std::size_t ci = x.dim(0);
    std::size_t kdim = l.w.cols;
    if (kdim % ci != 0) throw DimensionMismatch("sparse conv input channels mismatch");
    std::size_t k = static_cast<std::size_t>(
        std::lround(std::sqrt(static_cast<double>(kdim / ci))));
    ConvGeometry cg = conv_geometry(g.h, g.w, k, k, l.pad, l.stride);
    gy = BatchGeom{g.batch, cg.ho, cg.wo};
    ensure_shape(col_, {kdim, gy.columns()});
    for (std::size_t smp = 0; smp < g.batch; ++smp) {
      detail::im2col_plane(x.data() + smp * g.plane(), ci, g.h, g.w,
                           g.columns(), k, k, l.pad, l.stride, cg.ho, cg.wo,
                           col_.data() + smp * gy.plane(), gy.columns());
    }
    ensure_shape(y, {l.w.rows, gy.columns()});
    detail::csr_matmul_into(l.w, col_.data(), gy.columns(), y.data());
    for (std::size_t c = 0; c < l.w.rows; ++c) {
      float bias = l.b[c];
      float* row = y.data() + c * gy.columns();
      for (std::size_t j = 0, n = gy.columns(); j < n; ++j) row[j] += bias;
    }
  }

  void sparse_linear(const Tensor<float>& x, const SparseLayer& l,
                     Tensor<float>& y) {
    if (x.dim(0) != l.w.cols) {
      throw DimensionMismatch("sparse linear input size mismatch");
    }
    ensure_shape(y, {l.w.rows, x.dim(1)});
    detail::csr_matmul_into(l.w, x.data(), x.dim(1), y.data());
    for (std::size_t c = 0; c < l.w.rows; ++c) {
      float bias = l.b[c];
      float* row = y.data() + c * x.dim(1);
      for (std::size_t j = 0, n = x.dim(1); j < n; ++j) row[j] += bias;
    }
  }

  void relu_into(const Tensor<float>& x, Tensor<float>& y) {
    ensure_shape(y, x.shape());
    const float* s = x.data();
    float* d = y.data();
    for (std::size_t i = 0, n = x.numel(); i < n; ++i)
      d[i] = s[i] > 0.0f ? s[i] : 0.0f;
  }

  void forward_edsr(const Tensor<float>& x, const BatchGeom& g) {
    std::size_t nb = cfg_.n_blocks;
    BatchGeom g1, gt;
    sparse_conv(x, g, layers_[0], a0_, g1);
    ensure_shape(h_, a0_.shape());
    std::memcpy(h_.data(), a0_.data(), sizeof(float) * a0_.numel());
    for (std::size_t i = 0; i < nb; ++i) {
      sparse_conv(h_, g1, layers_[1 + 2 * i], t0_, gt);
      relu_into(t0_, r_);
      sparse_conv(r_, g1, layers_[2 + 2 * i], t1_, gt);
      add_into(h_, t1_);
    }
    sparse_conv(h_, g1, layers_[1 + 2 * nb], bend_, gt);
    add_into(bend_, a0_);
    sparse_conv(bend_, g1, layers_[2 + 2 * nb], pre_shuffle_, gt);
    BatchGeom go;
    pixel_shuffle_batched(pre_shuffle_, gt, cfg_.scale, out_, go);
  }

  void forward_mlp(const Tensor<float>& x) {
    std::size_t nl = layers_.size();
    sparse_linear(x, layers_[0], t0_);
    for (std::size_t i = 1; i + 1 < nl; ++i) {
      relu_into(t0_, r_);
      sparse_linear(r_, layers_[i], t1_);
      std::swap(t0_, t1_);
    }
    relu_into(t0_, r_);
    sparse_linear(r_, layers_[nl - 1], out_);
  }

  ModelConfig cfg_;
  std::vector<SparseLayer> layers_;
  Tensor<float> col_, a0_, h_, r_, t0_, t1_, bend_, pre_shuffle_, out_;
};

/// Compresses a trained model under its frozen masks.
template <typename T>
SparseModel export_sparse(const Model<T>& model, const MaskState& masks) {
  if (!masks.frozen) throw NotFrozen("export requires frozen masks");
  SparseModel sm(model.config());
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    const ParamLayer<T>& l = model.param_layer(i);
    SparseLayer sl;
    sl.name = l.name;
    sl.kind = l.kind;
    sl.w = to_csr(l.p.w, masks.layers[i]);
    sl.b = Tensor<float>({l.p.b.numel()});
    for (std::size_t j = 0; j < l.p.b.numel(); ++j) {
      sl.b[j] = static_cast<float>(l.p.b[j]);
    }
    sl.pad = l.pad;
    sl.stride = l.stride;
    sm.layers().push_back(std::move(sl));
  }
  return sm;
}

/// Rebuilds a dense model (weights only; moments zero) from the CSR form.
inline Model<float> densified_model(const SparseModel& sm) {
  Model<float> m(sm.config());
  if (sm.layers().size() != m.num_param_layers()) {
    throw ShapeMismatch("sparse model layer count does not match architecture");
  }
  for (std::size_t i = 0; i < m.num_param_layers(); ++i) {
    ParamLayer<float>& l = m.param_layer(i);
    const SparseLayer& sl = sm.layers()[i];
    if (sl.w.rows != l.p.w.dim(0) ||
        sl.w.cols != l.p.w.numel() / l.p.w.dim(0) ||
        sl.b.numel() != l.p.b.numel()) {
      throw ShapeMismatch("sparse layer shape does not match architecture");
    }
    Tensor<float> dense = to_dense(sl.w);
    std::memcpy(l.p.w.data(), dense.data(), sizeof(float) * dense.numel());
    std::memcpy(l.p.b.data(), sl.b.data(), sizeof(float) * sl.b.numel());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sparse model file

inline constexpr char kSparseMagic[] = "ISSPs1";
inline constexpr std::size_t kSparseMagicLen = 6;

inline void save_sparse_model(const std::filesystem::path& path,
                              const SparseModel& sm) {
  atomic_write_file(path, [&](std::ostream& os) {
    BinaryWriter w(os);
    const ModelConfig& mc = sm.config();
    w.magic(kSparseMagic, kSparseMagicLen);
    w.u32(static_cast<std::uint32_t>(mc.arch));
    w.u32(static_cast<std::uint32_t>(mc.n_blocks));
    w.u32(static_cast<std::uint32_t>(mc.channels));
    w.u32(static_cast<std::uint32_t>(mc.scale));
    w.u32(static_cast<std::uint32_t>(mc.mlp_patch));
    w.u32(static_cast<std::uint32_t>(sm.layers().size()));
    for (const SparseLayer& l : sm.layers()) {
      w.u32(static_cast<std::uint32_t>(l.kind));
      w.u32(static_cast<std::uint32_t>(l.w.rows));
      w.u32(static_cast<std::uint32_t>(l.w.cols));
      w.u32(static_cast<std::uint32_t>(l.w.nnz()));
      w.u32(static_cast<std::uint32_t>(l.b.numel()));
      w.u32(static_cast<std::uint32_t>(l.pad));
      w.u32(static_cast<std::uint32_t>(l.stride));
    }
    for (const SparseLayer& l : sm.layers()) {
      for (std::uint32_t v : l.w.row_ptr) w.u32(v);
      for (std::uint32_t v : l.w.col_idx) w.u32(v);
      w.f32_span(l.w.vals.begin(), l.w.vals.end());
      w.f32_span(l.b.data(), l.b.data() + l.b.numel());
    }
  });
}

inline SparseModel load_sparse_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open sparse model " + path.string());
  BinaryReader r(is);
  r.expect_magic(kSparseMagic, kSparseMagicLen, "sparse model");

  ModelConfig mc;
  std::uint32_t arch = r.u32();
  if (arch > static_cast<std::uint32_t>(Arch::mini_mlp)) {
    throw ShapeMismatch("sparse model: architecture id out of range");
  }
  mc.arch = static_cast<Arch>(arch);
  mc.n_blocks = r.u32();
  mc.channels = r.u32();
  mc.scale = r.u32();
  mc.mlp_patch = r.u32();
  validate_model_config(mc);

  std::vector<LayerSpec> plan = build_plan(mc);
  std::vector<const LayerSpec*> params;
  for (const LayerSpec& s : plan) {
    if (s.kind == LayerKind::conv2d || s.kind == LayerKind::linear) {
      params.push_back(&s);
    }
  }

  SparseModel sm(mc);
  std::uint32_t n_layers = r.u32();
  if (n_layers != params.size()) {
    throw ShapeMismatch("sparse model: layer count does not match architecture");
  }
  for (std::size_t i = 0; i < n_layers; ++i) {
    SparseLayer l;
    l.name = params[i]->name;
    std::uint32_t kind = r.u32();
    if (kind != static_cast<std::uint32_t>(params[i]->kind)) {
      throw ShapeMismatch("sparse model: layer kind mismatch");
    }
    l.kind = params[i]->kind;
    l.w.rows = r.u32();
    l.w.cols = r.u32();
    std::uint32_t nnz = r.u32();
    std::uint32_t bias_len = r.u32();
    l.pad = r.u32();
    l.stride = r.u32();
    std::size_t want_rows = params[i]->out_ch;
    std::size_t want_cols = params[i]->kind == LayerKind::conv2d
                                ? params[i]->in_ch * params[i]->kernel * params[i]->kernel
                                : params[i]->in_ch;
    if (l.w.rows != want_rows || l.w.cols != want_cols || bias_len != want_rows) {
      throw ShapeMismatch("sparse model: layer shape does not match architecture");
    }
    l.w.row_ptr.resize(l.w.rows + 1);
    l.w.col_idx.resize(nnz);
    l.w.vals.resize(nnz);
    l.b = Tensor<float>({bias_len});
    sm.layers().push_back(std::move(l));
  }
  for (SparseLayer& l : sm.layers()) {
    for (std::uint32_t& v : l.w.row_ptr) v = r.u32();
    for (std::uint32_t& v : l.w.col_idx) v = r.u32();
    for (float& v : l.w.vals) v = r.f32();
    for (std::size_t j = 0; j < l.b.numel(); ++j) l.b[j] = r.f32();
    validate_csr(l.w);
  }
  if (!r.at_eof()) throw Truncated("sparse model: trailing bytes after record");
  return sm;
}

// ---------------------------------------------------------------------------
// Benchmarking

struct BenchReport {
  double dense_ns = 0.0;
  double sparse_ns = 0.0;
  double speedup = 0.0;
  double nnz_fraction = 0.0;
};

namespace detail {

template <typename F>
double median_ns(F&& fn, int reps) {
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace detail

/// Times dense vs sparse whole-image forwards on the same input and reports
/// the median over `reps` runs each.  Refuses to report at all if the two
/// outputs disagree beyond 1e-5 max abs.
inline BenchReport bench_compare(Model<float>& dense, SparseModel& sparse,
                                 const Tensor<float>& input, int reps = 9) {
  if (reps < 3) throw BadRange("bench reps must be >= 3");

  Tensor<float> yd = dense.forward_image(input);  // also warms both paths
  Tensor<float> ys = sparse.forward_image(input);
  if (!yd.same_shape(ys)) throw CorrectnessFailure("dense/sparse output shapes differ");
  double max_diff = 0.0;
  for (std::size_t i = 0; i < yd.numel(); ++i) {
    max_diff = std::max(max_diff,
                        std::abs(static_cast<double>(yd[i]) - static_cast<double>(ys[i])));
  }
  if (max_diff > 1e-5) {
    throw CorrectnessFailure("dense and sparse forwards disagree by " +
                             std::to_string(max_diff));
  }

  BenchReport rep;
  rep.dense_ns = detail::median_ns([&] { dense.forward_image(input); }, reps);
  rep.sparse_ns = detail::median_ns([&] { sparse.forward_image(input); }, reps);
  rep.speedup = rep.dense_ns / rep.sparse_ns;
  rep.nnz_fraction = sparse.nnz_fraction();
  return rep;
}

}  // namespace issp
