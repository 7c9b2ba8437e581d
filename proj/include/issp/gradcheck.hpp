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
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "issp/model.hpp"
#include "issp/rng.hpp"

namespace issp {

struct GradCheckLayer {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates rejected by the smoothness filter
};

struct GradCheckReport {
  std::vector<GradCheckLayer> layers;
  double end_to_end_rel_err = 0.0;
  double layer_tol = 1e-4;
  double end_to_end_tol = 1e-3;

  bool pass() const {
    for (const GradCheckLayer& l : layers) {
      if (!(l.max_rel_err < layer_tol)) return false;
      if (l.checked == 0) return false;
    }
    return end_to_end_rel_err < end_to_end_tol;
  }

  const GradCheckLayer* worst() const {
    const GradCheckLayer* w = nullptr;
    for (const GradCheckLayer& l : layers) {
      if (!w || l.max_rel_err > w->max_rel_err) w = &l;
    }
    return w;
  }
};

struct GradCheckOptions {
  std::uint64_t seed = 7;
  std::size_t coords_per_layer = 40;
  double h = 1e-5;
  double layer_tol = 1e-4;
  double end_to_end_tol = 1e-3;
  std::size_t batch = 2;
  std::size_t patch = 8;  // LR edge; mini_mlp substitutes its own patch
  // When set to conv2d or linear, the analytic gradients of every layer of
  // that kind are corrupted before comparison, so a healthy checker must
  // report failure.
  std::string inject_fault;
};

namespace detail {

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

}  // namespace detail

/// Central-difference verification of the analytic gradients in 64-bit
/// arithmetic.  Each sampled coordinate is measured at step h and h/2; the
/// two estimates agreeing is the smoothness certificate (a ReLU kink inside
/// the step interval breaks it, a wrong backward does not), and only then is
/// the finer estimate compared against the analytic value.
inline GradCheckReport run_gradcheck(const ModelConfig& cfg,
                                     const GradCheckOptions& opt = {}) {
  Model<double> model(cfg);
  Rng rng(Rng::mix(opt.seed, rng_salt::kInit));
  init_params(model, rng);

  std::size_t p = cfg.arch == Arch::mini_mlp ? cfg.mlp_patch : opt.patch;
  std::size_t sp = p * cfg.scale;
  Rng data_rng(Rng::mix(opt.seed, rng_salt::kData));
  std::vector<Tensor<double>> lr, hr;
  for (std::size_t i = 0; i < opt.batch; ++i) {
    lr.push_back(rng_uniform<double>(data_rng, 0.0, 1.0, 3 * p * p)
                     .reshaped({3, p, p}));
    hr.push_back(rng_uniform<double>(data_rng, 0.0, 1.0, 3 * sp * sp)
                     .reshaped({3, sp, sp}));
  }

  BatchGeom g, gh;
  Tensor<double> x = model.pack_lr(lr, g);
  Tensor<double> t = model.pack_hr(hr, gh);
  auto loss_at = [&]() {
    const Tensor<double>& y = model.forward(x, g);
    return mse_loss(y, t).first;
  };

  // Analytic gradients once, copied out before the probing mutates weights.
  {
    const Tensor<double>& y = model.forward(x, g);
    auto [loss, grad] = mse_loss(y, t);
    (void)loss;
    model.backward(grad);
  }
  std::size_t nl = model.num_param_layers();
  std::vector<Tensor<double>> gw(nl), gb(nl);
  for (std::size_t i = 0; i < nl; ++i) {
    gw[i] = model.param_layer(i).p.grad_w;
    gb[i] = model.param_layer(i).p.grad_b;
    if (!opt.inject_fault.empty() &&
        layer_kind_name(model.param_layer(i).kind) == opt.inject_fault) {
      for (std::size_t j = 0; j < gw[i].numel(); ++j) gw[i][j] *= 1.01;
    }
  }

  GradCheckReport report;
  report.layer_tol = opt.layer_tol;
  report.end_to_end_tol = opt.end_to_end_tol;

  Rng coord_rng(Rng::mix(opt.seed, rng_salt::kMask));
  double h = opt.h;
  auto probe = [&](double& w) {
    double keep = w;
    w = keep + h;
    double jp = loss_at();
    w = keep - h;
    double jm = loss_at();
    w = keep + h / 2;
    double jp2 = loss_at();
    w = keep - h / 2;
    double jm2 = loss_at();
    w = keep;
    double fd1 = (jp - jm) / (2 * h);
    double fd2 = (jp2 - jm2) / h;
    return std::pair<double, bool>(fd2, detail::rel_err(fd1, fd2) < 1e-6);
  };

  for (std::size_t i = 0; i < nl; ++i) {
    ParamLayer<double>& layer = model.param_layer(i);
    GradCheckLayer res;
    res.name = layer.name;

    std::set<std::size_t> coords;
    std::size_t n = layer.p.w.numel();
    std::size_t want = std::min(opt.coords_per_layer, n);
    while (coords.size() < want) {
      coords.insert(static_cast<std::size_t>(coord_rng.next_below(n)));
    }
    for (std::size_t c : coords) {
      auto [fd, smooth] = probe(layer.p.w[c]);
      if (!smooth) {
        ++res.skipped;
        continue;
      }
      res.max_rel_err = std::max(res.max_rel_err, detail::rel_err(fd, gw[i][c]));
      ++res.checked;
    }
    std::size_t nb = layer.p.b.numel();
    for (std::size_t c = 0; c < std::min<std::size_t>(4, nb); ++c) {
      auto [fd, smooth] = probe(layer.p.b[c]);
      if (!smooth) {
        ++res.skipped;
        continue;
      }
      res.max_rel_err = std::max(res.max_rel_err, detail::rel_err(fd, gb[i][c]));
      ++res.checked;
    }
    report.layers.push_back(res);
  }

  // End to end: directional derivative along one random unit direction over
  // all parameters at once.
  std::vector<Tensor<double>> dir_w(nl), dir_b(nl);
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < nl; ++i) {
    dir_w[i] = rng_uniform<double>(coord_rng, -1.0, 1.0,
                                   model.param_layer(i).p.w.numel());
    dir_b[i] = rng_uniform<double>(coord_rng, -1.0, 1.0,
                                   model.param_layer(i).p.b.numel());
    for (std::size_t j = 0; j < dir_w[i].numel(); ++j)
      norm_sq += dir_w[i][j] * dir_w[i][j];
    for (std::size_t j = 0; j < dir_b[i].numel(); ++j)
      norm_sq += dir_b[i][j] * dir_b[i][j];
  }
  double inv_norm = 1.0 / std::sqrt(norm_sq);
  auto shift = [&](double step) {
    for (std::size_t i = 0; i < nl; ++i) {
      ParamTensor<double>& pt = model.param_layer(i).p;
      for (std::size_t j = 0; j < pt.w.numel(); ++j)
        pt.w[j] += step * inv_norm * dir_w[i][j];
      for (std::size_t j = 0; j < pt.b.numel(); ++j)
        pt.b[j] += step * inv_norm * dir_b[i][j];
    }
  };
  shift(h);
  double jp = loss_at();
  shift(-2 * h);
  double jm = loss_at();
  shift(h);  // restore
  double fd = (jp - jm) / (2 * h);
  double analytic = 0.0;
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t j = 0; j < gw[i].numel(); ++j)
      analytic += gw[i][j] * inv_norm * dir_w[i][j];
    for (std::size_t j = 0; j < gb[i].numel(); ++j)
      analytic += gb[i][j] * inv_norm * dir_b[i][j];
  }
  report.end_to_end_rel_err = detail::rel_err(fd, analytic);
  return report;
}

}  // namespace issp
