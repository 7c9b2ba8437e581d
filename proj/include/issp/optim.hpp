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

#include "issp/errors.hpp"
#include "issp/layers.hpp"
#include "issp/model.hpp"

namespace issp {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;  // completed steps
  double lr = 2e-4;     // current learning rate
};

inline void validate_adam(const AdamState& s) {
  if (!(s.beta1 > 0.0 && s.beta1 < 1.0) || !(s.beta2 > 0.0 && s.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0,1)");
  }
  if (!(s.eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

namespace detail {

/// Bias-corrected Adam update of one tensor given its gradient and moments,
/// with the step counter already advanced to `t`.
template <typename T>
void adam_apply(Tensor<T>& w, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                const AdamState& s) {
  T beta1 = static_cast<T>(s.beta1);
  T beta2 = static_cast<T>(s.beta2);
  T one_m_b1 = static_cast<T>(1.0 - s.beta1);
  T one_m_b2 = static_cast<T>(1.0 - s.beta2);
  T c1 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta1, static_cast<double>(s.t))));
  T c2 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta2, static_cast<double>(s.t))));
  T lr = static_cast<T>(s.lr);
  T eps = static_cast<T>(s.eps);
  T* wd = w.data();
  const T* gd = grad.data();
  T* md = m.data();
  T* vd = v.data();
  for (std::size_t i = 0, n = w.numel(); i < n; ++i) {
    T g = gd[i];
    md[i] = beta1 * md[i] + one_m_b1 * g;
    vd[i] = beta2 * vd[i] + one_m_b2 * g * g;
    T m_hat = md[i] * c1;
    T v_hat = vd[i] * c2;
    wd[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace detail

/// One optimizer step for a single parameter set (weights and bias).
/// Increments s.t, then applies the standard bias-corrected update.
template <typename T>
void adam_step(ParamTensor<T>& p, AdamState& s) {
  ++s.t;
  detail::adam_apply(p.w, p.grad_w, p.adam_m, p.adam_v, s);
  detail::adam_apply(p.b, p.grad_b, p.adam_m_b, p.adam_v_b, s);
}

/// One optimizer step for every learnable layer of a model.  The step
/// counter advances once per batch, not once per layer.
template <typename T>
void adam_step_model(Model<T>& model, AdamState& s) {
  ++s.t;
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    ParamTensor<T>& p = model.param_layer(i).p;
    detail::adam_apply(p.w, p.grad_w, p.adam_m, p.adam_v, s);
    detail::adam_apply(p.b, p.grad_b, p.adam_m_b, p.adam_v_b, s);
  }
}

/// Step-decay learning rate: lr0 halved after every `half_every` iterations.
/// Uses ldexp so the halving is exact in floating point.
inline double lr_schedule(std::uint64_t k, double lr0, std::uint64_t half_every) {
  if (half_every < 1) throw ConfigError("half_every must be >= 1");
  return std::ldexp(lr0, -static_cast<int>(k / half_every));
}

}  // namespace issp
