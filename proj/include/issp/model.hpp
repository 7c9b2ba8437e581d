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

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "issp/errors.hpp"
#include "issp/layers.hpp"
#include "issp/rng.hpp"
#include "issp/tensor.hpp"

namespace issp {

enum class Arch { mini_edsr, mini_mlp };

enum class LayerKind { conv2d, linear, relu, pixel_shuffle, residual_add };

inline const char* arch_name(Arch a) {
  return a == Arch::mini_edsr ? "mini_edsr" : "mini_mlp";
}

inline Arch parse_arch(const std::string& s) {
  if (s == "mini_edsr") return Arch::mini_edsr;
  if (s == "mini_mlp") return Arch::mini_mlp;
  throw ConfigError("unknown architecture: " + s);
}

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::pixel_shuffle: return "pixel_shuffle";
    case LayerKind::residual_add: return "residual_add";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  std::string name;
  bool prunable = false;
  std::size_t in_ch = 0;   // conv: Ci, linear: n_in
  std::size_t out_ch = 0;  // conv: Co, linear: n_out
  std::size_t kernel = 0;  // conv kernel edge
  std::size_t upscale = 0; // pixel_shuffle factor
};

struct ModelConfig {
  Arch arch = Arch::mini_edsr;
  std::size_t n_blocks = 2;
  std::size_t channels = 16;
  std::size_t scale = 2;
  // The MLP variant flattens fixed-size patches, so its layer widths depend
  // on the training patch edge; conv archs ignore this field.
  std::size_t mlp_patch = 16;

  std::size_t mlp_hidden() const { return channels * 8; }
};

inline void validate_model_config(const ModelConfig& cfg) {
  if (cfg.scale < 2 || cfg.scale > 4) {
    throw ConfigError("scale must be 2, 3, or 4");
  }
  if (cfg.channels < 1) throw ConfigError("channels must be >= 1");
  if (cfg.arch == Arch::mini_mlp && cfg.mlp_patch < 1) {
    throw ConfigError("mlp_patch must be >= 1");
  }
}

/// The layer sequence each architecture executes, in order.  mini_edsr is a
/// miniature residual CNN: head conv, n_blocks of conv-relu-conv with a block
/// skip, a body-end conv joined to the head output by a long skip, then a
/// conv to 3·scale² channels feeding a sub-pixel (pixel shuffle) upsampler.
inline std::vector<LayerSpec> build_plan(const ModelConfig& cfg) {
  validate_model_config(cfg);
  std::vector<LayerSpec> plan;
  if (cfg.arch == Arch::mini_edsr) {
    std::size_t c = cfg.channels;
    plan.push_back({LayerKind::conv2d, "head", true, 3, c, 3, 0});
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
      std::string base = "block" + std::to_string(i);
      plan.push_back({LayerKind::conv2d, base + "_conv0", true, c, c, 3, 0});
      plan.push_back({LayerKind::relu, base + "_relu", false, 0, 0, 0, 0});
      plan.push_back({LayerKind::conv2d, base + "_conv1", true, c, c, 3, 0});
      plan.push_back({LayerKind::residual_add, base + "_skip", false, 0, 0, 0, 0});
    }
    plan.push_back({LayerKind::conv2d, "body_end", true, c, c, 3, 0});
    plan.push_back({LayerKind::residual_add, "long_skip", false, 0, 0, 0, 0});
    std::size_t out_ch = 3 * cfg.scale * cfg.scale;
    plan.push_back({LayerKind::conv2d, "tail", true, c, out_ch, 3, 0});
    plan.push_back({LayerKind::pixel_shuffle, "upsample", false, 0, 0, 0, cfg.scale});
  } else {
    std::size_t p = cfg.mlp_patch;
    std::size_t n_in = 3 * p * p;
    std::size_t n_out = 3 * cfg.scale * cfg.scale * p * p;
    std::size_t hidden = cfg.mlp_hidden();
    plan.push_back({LayerKind::linear, "fc0", true, n_in, hidden, 0, 0});
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
      plan.push_back({LayerKind::relu, "relu" + std::to_string(i), false, 0, 0, 0, 0});
      plan.push_back({LayerKind::linear, "fc" + std::to_string(i + 1), true,
                      hidden, hidden, 0, 0});
    }
    plan.push_back({LayerKind::relu, "relu" + std::to_string(cfg.n_blocks),
                    false, 0, 0, 0, 0});
    plan.push_back({LayerKind::linear, "fc" + std::to_string(cfg.n_blocks + 1),
                    true, hidden, n_out, 0, 0});
  }
  return plan;
}

/// One learnable layer with its parameters.  `pad`/`stride` apply to convs.
template <typename T>
struct ParamLayer {
  std::string name;
  LayerKind kind = LayerKind::conv2d;
  ParamTensor<T> p;
  std::size_t pad = 1;
  std::size_t stride = 1;

  // Backward scratch owned per layer: convs cache the forward im2col matrix,
  // linears the forward input.
  Tensor<T> col;
  Tensor<T> lin_in;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg), plan_(build_plan(cfg)) {
    for (const LayerSpec& spec : plan_) {
      if (spec.kind == LayerKind::conv2d) {
        ParamLayer<T> l;
        l.name = spec.name;
        l.kind = LayerKind::conv2d;
        l.p = make_conv_param<T>(spec.out_ch, spec.in_ch, spec.kernel, spec.kernel);
        l.pad = spec.kernel / 2;
        layers_.push_back(std::move(l));
      } else if (spec.kind == LayerKind::linear) {
        ParamLayer<T> l;
        l.name = spec.name;
        l.kind = LayerKind::linear;
        l.p = make_linear_param<T>(spec.out_ch, spec.in_ch);
        layers_.push_back(std::move(l));
      }
    }
    relu_pre_.resize(cfg.arch == Arch::mini_edsr ? cfg.n_blocks
                                                 : cfg.n_blocks + 1);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& plan() const { return plan_; }

  std::size_t num_param_layers() const { return layers_.size(); }
  ParamLayer<T>& param_layer(std::size_t i) { return layers_[i]; }
  const ParamLayer<T>& param_layer(std::size_t i) const { return layers_[i]; }

  /// Input layout: mini_edsr takes Tensor[3 × (batch·h·w)] with geometry g;
  /// mini_mlp takes Tensor[3p² × batch] with g = {batch, p, p}.
  const Tensor<T>& forward(const Tensor<T>& x, const BatchGeom& g) {
    if (cfg_.arch == Arch::mini_edsr) {
      forward_edsr(x, g);
    } else {
      forward_mlp(x, g);
    }
    return out_;
  }

  const Tensor<T>& output() const { return out_; }
  const BatchGeom& output_geom() const { return out_geom_; }

  /// Backward from the loss gradient on the output; leaves per-layer
  /// gradients in param_layer(i).p.grad_w / grad_b.
  void backward(const Tensor<T>& dout) {
    if (!dout.same_shape(out_)) {
      throw ShapeMismatch("backward gradient does not match model output");
    }
    if (cfg_.arch == Arch::mini_edsr) {
      backward_edsr(dout);
    } else {
      backward_mlp(dout);
    }
  }

  /// Packs per-sample LR tensors (each 3×p×p in [0,1]) into the arch's
  /// batched input layout.
  Tensor<T> pack_lr(const std::vector<Tensor<T>>& samples, BatchGeom& g) const {
    return pack(samples, 3, g, /*lr=*/true);
  }

  /// Packs HR targets (each 3×(s·p)×(s·p)) into the layout the model's
  /// output uses, for loss computation.
  Tensor<T> pack_hr(const std::vector<Tensor<T>>& samples, BatchGeom& g) const {
    return pack(samples, 3, g, /*lr=*/false);
  }

  /// Whole-image super-resolution used by evaluation: x is 3×H×W in [0,1].
  /// The MLP variant tiles the image into its fixed patch size.
  Tensor<T> forward_image(const Tensor<T>& x) {
    if (x.rank() != 3 || x.dim(0) != 3) {
      throw ShapeMismatch("forward_image expects a 3×H×W tensor");
    }
    std::size_t h = x.dim(1), w = x.dim(2), s = cfg_.scale;
    if (cfg_.arch == Arch::mini_edsr) {
      BatchGeom g{1, h, w};
      forward(x.reshaped({3, h * w}), g);
      return out_.reshaped({3, s * h, s * w});
    }
    std::size_t p = cfg_.mlp_patch;
    if (h % p != 0 || w % p != 0) {
      throw ShapeMismatch("mini_mlp evaluates images whose dims are multiples "
                          "of its patch size");
    }
    std::size_t ty = h / p, tx = w / p, tiles = ty * tx;
    Tensor<T> xin({3 * p * p, tiles});
    for (std::size_t t = 0; t < tiles; ++t) {
      std::size_t oy = (t / tx) * p, ox = (t % tx) * p;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            xin[((c * p + i) * p + j) * tiles + t] =
                x[(c * h + oy + i) * w + ox + j];
    }
    forward(xin, BatchGeom{tiles, p, p});
    std::size_t sp = s * p;
    Tensor<T> y({3, s * h, s * w});
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
  Tensor<T> pack(const std::vector<Tensor<T>>& samples, std::size_t channels,
                 BatchGeom& g, bool lr) const {
    if (samples.empty()) throw ShapeMismatch("empty batch");
    std::size_t h = samples[0].dim(1), w = samples[0].dim(2);
    std::size_t b = samples.size();
    for (const Tensor<T>& s : samples) {
      if (s.rank() != 3 || s.dim(0) != channels || s.dim(1) != h || s.dim(2) != w) {
        throw ShapeMismatch("batch samples disagree in shape");
      }
    }
    g = BatchGeom{b, h, w};
    if (cfg_.arch == Arch::mini_edsr) {
      Tensor<T> x({channels, b * h * w});
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < b; ++i)
          std::memcpy(x.data() + c * b * h * w + i * h * w,
                      samples[i].data() + c * h * w, sizeof(T) * h * w);
      return x;
    }
    std::size_t n = channels * h * w;
    (void)lr;
    Tensor<T> x({n, b});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < n; ++j) x[j * b + i] = samples[i][j];
    return x;
  }

  void relu_into(const Tensor<T>& x, Tensor<T>& y) {
    ensure_shape(y, x.shape());
    const T* s = x.data();
    T* d = y.data();
    for (std::size_t i = 0, n = x.numel(); i < n; ++i)
      d[i] = s[i] > T{} ? s[i] : T{};
  }

  void relu_grad_into(const Tensor<T>& pre, const Tensor<T>& dy, Tensor<T>& dx) {
    ensure_shape(dx, dy.shape());
    const T* p = pre.data();
    const T* g = dy.data();
    T* d = dx.data();
    for (std::size_t i = 0, n = dy.numel(); i < n; ++i)
      d[i] = p[i] > T{} ? g[i] : T{};
  }

  void forward_edsr(const Tensor<T>& x, const BatchGeom& g) {
    std::size_t nb = cfg_.n_blocks;
    ParamLayer<T>& head = layers_[0];
    ParamLayer<T>& body_end = layers_[1 + 2 * nb];
    ParamLayer<T>& tail = layers_[2 + 2 * nb];

    conv_forward_batched(x, g, head.p, head.pad, head.stride, head.col, a0_, g1_);
    ensure_shape(h_, a0_.shape());
    std::memcpy(h_.data(), a0_.data(), sizeof(T) * a0_.numel());

    for (std::size_t i = 0; i < nb; ++i) {
      ParamLayer<T>& c0 = layers_[1 + 2 * i];
      ParamLayer<T>& c1 = layers_[2 + 2 * i];
      BatchGeom gt;
      conv_forward_batched(h_, g1_, c0.p, c0.pad, c0.stride, c0.col,
                           relu_pre_[i], gt);
      relu_into(relu_pre_[i], r_);
      conv_forward_batched(r_, g1_, c1.p, c1.pad, c1.stride, c1.col, t1_, gt);
      add_into(h_, t1_);
    }

    BatchGeom gt;
    conv_forward_batched(h_, g1_, body_end.p, body_end.pad, body_end.stride,
                         body_end.col, bend_, gt);
    add_into(bend_, a0_);
    conv_forward_batched(bend_, g1_, tail.p, tail.pad, tail.stride, tail.col,
                         pre_shuffle_, gt);
    pixel_shuffle_batched(pre_shuffle_, gt, cfg_.scale, out_, out_geom_);
    in_geom_ = g;
  }

  void backward_edsr(const Tensor<T>& dout) {
    std::size_t nb = cfg_.n_blocks;
    ParamLayer<T>& head = layers_[0];
    ParamLayer<T>& body_end = layers_[1 + 2 * nb];
    ParamLayer<T>& tail = layers_[2 + 2 * nb];

    BatchGeom gt;
    pixel_unshuffle_batched(dout, out_geom_, cfg_.scale, d_pre_shuffle_, gt);
    conv_backward_batched(d_pre_shuffle_, gt, tail.p, tail.col, g1_, tail.pad,
                          tail.stride, dcol_, d_bend_);
    // bend = body_end(h) + a0: the skip branch keeps d_bend_ alive below.
    conv_backward_batched(d_bend_, g1_, body_end.p, body_end.col, g1_,
                          body_end.pad, body_end.stride, dcol_, d_h_);

    for (std::size_t i = nb; i-- > 0;) {
      ParamLayer<T>& c0 = layers_[1 + 2 * i];
      ParamLayer<T>& c1 = layers_[2 + 2 * i];
      conv_backward_batched(d_h_, g1_, c1.p, c1.col, g1_, c1.pad, c1.stride,
                            dcol_, d_r_);
      relu_grad_into(relu_pre_[i], d_r_, d_t0_);
      conv_backward_batched(d_t0_, g1_, c0.p, c0.col, g1_, c0.pad, c0.stride,
                            dcol_, d_tmp_);
      add_into(d_h_, d_tmp_);
    }

    add_into(d_h_, d_bend_);
    conv_backward_batched(d_h_, g1_, head.p, head.col, in_geom_, head.pad,
                          head.stride, dcol_, d_tmp_, /*compute_dx=*/false);
  }

  void forward_mlp(const Tensor<T>& x, const BatchGeom& g) {
    std::size_t nl = layers_.size();
    layers_[0].lin_in = x;
    linear_forward_batched(x, layers_[0].p, relu_pre_[0]);
    for (std::size_t i = 1; i + 1 < nl; ++i) {
      relu_into(relu_pre_[i - 1], layers_[i].lin_in);
      linear_forward_batched(layers_[i].lin_in, layers_[i].p, relu_pre_[i]);
    }
    relu_into(relu_pre_[nl - 2], layers_[nl - 1].lin_in);
    linear_forward_batched(layers_[nl - 1].lin_in, layers_[nl - 1].p, out_);
    out_geom_ = BatchGeom{g.batch, g.h * cfg_.scale, g.w * cfg_.scale};
    in_geom_ = g;
  }

  void backward_mlp(const Tensor<T>& dout) {
    std::size_t nl = layers_.size();
    linear_backward_batched(dout, layers_[nl - 1].p, layers_[nl - 1].lin_in, d_r_);
    for (std::size_t i = nl - 1; i-- > 0;) {
      relu_grad_into(relu_pre_[i], d_r_, d_t0_);
      linear_backward_batched(d_t0_, layers_[i].p, layers_[i].lin_in, d_r_,
                              /*compute_dx=*/i > 0);
    }
  }

  ModelConfig cfg_;
  std::vector<LayerSpec> plan_;
  std::vector<ParamLayer<T>> layers_;

  // Forward activations and backward scratch, reused across iterations.
  std::vector<Tensor<T>> relu_pre_;
  Tensor<T> a0_, h_, r_, t1_, bend_, pre_shuffle_, out_;
  Tensor<T> d_pre_shuffle_, d_bend_, d_h_, d_r_, d_t0_, d_tmp_, dcol_;
  BatchGeom g1_, out_geom_, in_geom_;
};

/// Kaiming-uniform fan-in initialization (±sqrt(6/fan_in)), biases and Adam
/// moments zero.  Draw order is layer order then row-major within a layer,
/// so a fixed seed reproduces the exact parameter vector.
template <typename T>
void init_params(Model<T>& model, Rng& rng) {
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    ParamLayer<T>& l = model.param_layer(i);
    std::size_t fan_in;
    if (l.kind == LayerKind::conv2d) {
      fan_in = l.p.w.dim(1) * l.p.w.dim(2) * l.p.w.dim(3);
    } else {
      fan_in = l.p.w.dim(1);
    }
    T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    Tensor<T> draws = rng_uniform<T>(rng, -bound, bound, l.p.w.numel());
    std::memcpy(l.p.w.data(), draws.data(), sizeof(T) * draws.numel());
    l.p.b.fill(T{});
    l.p.adam_m.fill(T{});
    l.p.adam_v.fill(T{});
    l.p.adam_m_b.fill(T{});
    l.p.adam_v_b.fill(T{});
  }
}

/// Runs one batch end to end: packs the samples, forward, MSE, backward.
/// Returns the loss; gradients (averaged over the batch via the MSE 1/N) are
/// left on the model's layers.
template <typename T>
double model_forward_backward(Model<T>& model,
                              const std::vector<Tensor<T>>& lr,
                              const std::vector<Tensor<T>>& hr) {
  if (lr.empty() || lr.size() != hr.size()) {
    throw ShapeMismatch("batch LR/HR lists must be non-empty and equal length");
  }
  std::size_t s = model.config().scale;
  for (std::size_t i = 0; i < lr.size(); ++i) {
    if (hr[i].dim(1) != lr[i].dim(1) * s || hr[i].dim(2) != lr[i].dim(2) * s) {
      throw ShapeMismatch("HR dims must be scale × LR dims");
    }
  }
  BatchGeom g, gh;
  Tensor<T> x = model.pack_lr(lr, g);
  Tensor<T> t = model.pack_hr(hr, gh);
  const Tensor<T>& y = model.forward(x, g);
  auto [loss, grad] = mse_loss(y, t);
  model.backward(grad);
  return loss;
}

}  // namespace issp
