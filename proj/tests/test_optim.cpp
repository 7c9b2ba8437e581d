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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "issp/model.hpp"
#include "issp/optim.hpp"

namespace issp {

TEST_CASE("adam first step closed form", "[optim]") {
  // With one scalar weight, gradient 1, fresh moments: m̂ = v̂ = 1, so the
  // update is −lr/(1+eps), within eps·lr of −lr.
  ParamTensor<double> p = make_linear_param<double>(1, 1);
  p.w[0] = 0.25;
  p.grad_w[0] = 1.0;
  AdamState s;
  s.lr = 2e-4;
  adam_step(p, s);
  REQUIRE(s.t == 1);
  double delta = p.w[0] - 0.25;
  REQUIRE(std::abs(delta + 2e-4) < 1e-7);

  // Constant gradient keeps the bias-corrected step at ≈ −lr.
  for (int i = 0; i < 3; ++i) {
    double before = p.w[0];
    p.grad_w[0] = 1.0;
    adam_step(p, s);
    REQUIRE(std::abs((p.w[0] - before) + 2e-4) < 1e-7);
  }
  REQUIRE(s.t == 4);
}

TEST_CASE("adam zero gradient at t=0 leaves weights unchanged", "[optim]") {
  ParamTensor<float> p = make_linear_param<float>(2, 3);
  for (std::size_t i = 0; i < p.w.numel(); ++i) p.w[i] = static_cast<float>(i) * 0.5f;
  AdamState s;
  adam_step(p, s);
  for (std::size_t i = 0; i < p.w.numel(); ++i) {
    REQUIRE(p.w[i] == static_cast<float>(i) * 0.5f);
  }
  for (std::size_t i = 0; i < p.b.numel(); ++i) REQUIRE(p.b[i] == 0.0f);
}

TEST_CASE("adam updates bias moments too", "[optim]") {
  ParamTensor<double> p = make_linear_param<double>(2, 2);
  p.grad_b[0] = 1.0;
  p.grad_b[1] = -2.0;
  AdamState s;
  adam_step(p, s);
  REQUIRE(p.adam_m_b[0] != 0.0);
  REQUIRE(p.adam_v_b[1] != 0.0);
  REQUIRE(p.b[0] < 0.0);
  REQUIRE(p.b[1] > 0.0);
}

TEST_CASE("adam is bit-reproducible", "[optim]") {
  auto run = [&]() {
    ParamTensor<float> p = make_linear_param<float>(3, 4);
    Rng rng(55);
    for (std::size_t i = 0; i < p.w.numel(); ++i)
      p.w[i] = static_cast<float>(rng.next_unit() - 0.5);
    AdamState s;
    for (int step = 0; step < 5; ++step) {
      for (std::size_t i = 0; i < p.grad_w.numel(); ++i)
        p.grad_w[i] = static_cast<float>(rng.next_unit() - 0.5);
      adam_step(p, s);
    }
    return std::pair<ParamTensor<float>, AdamState>(std::move(p), s);
  };
  auto [p1, s1] = run();
  auto [p2, s2] = run();
  REQUIRE(s1.t == s2.t);
  for (std::size_t i = 0; i < p1.w.numel(); ++i) {
    REQUIRE(p1.w[i] == p2.w[i]);
    REQUIRE(p1.adam_m[i] == p2.adam_m[i]);
    REQUIRE(p1.adam_v[i] == p2.adam_v[i]);
  }
}

TEST_CASE("adam_step_model advances t once per batch", "[optim]") {
  ModelConfig cfg;
  cfg.channels = 4;
  Model<float> m(cfg);
  Rng rng(Rng::mix(9, rng_salt::kInit));
  init_params(m, rng);
  REQUIRE(m.num_param_layers() == 7);

  for (std::size_t l = 0; l < m.num_param_layers(); ++l) {
    Tensor<float>& g = m.param_layer(l).p.grad_w;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = 0.01f;
  }
  AdamState s;
  adam_step_model(m, s);
  REQUIRE(s.t == 1);
  adam_step_model(m, s);
  REQUIRE(s.t == 2);
}

TEST_CASE("adam_step_model matches per-layer application at shared t", "[optim]") {
  ModelConfig cfg;
  cfg.arch = Arch::mini_mlp;
  cfg.channels = 2;
  cfg.mlp_patch = 4;
  Model<double> m(cfg);
  Rng rng(Rng::mix(14, rng_salt::kInit));
  init_params(m, rng);

  // Reference: copies of every layer stepped by hand with the same state.
  std::vector<ParamTensor<double>> ref;
  Rng grng(77);
  for (std::size_t l = 0; l < m.num_param_layers(); ++l) {
    ParamTensor<double>& p = m.param_layer(l).p;
    for (std::size_t i = 0; i < p.grad_w.numel(); ++i)
      p.grad_w[i] = grng.next_unit() - 0.5;
    for (std::size_t i = 0; i < p.grad_b.numel(); ++i)
      p.grad_b[i] = grng.next_unit() - 0.5;
    ref.push_back(p);
  }

  AdamState s;
  adam_step_model(m, s);

  AdamState sr;
  sr.t = 1;  // adam_apply expects the already-advanced counter
  for (std::size_t l = 0; l < m.num_param_layers(); ++l) {
    detail::adam_apply(ref[l].w, ref[l].grad_w, ref[l].adam_m, ref[l].adam_v, sr);
    detail::adam_apply(ref[l].b, ref[l].grad_b, ref[l].adam_m_b, ref[l].adam_v_b, sr);
    const ParamTensor<double>& got = m.param_layer(l).p;
    for (std::size_t i = 0; i < got.w.numel(); ++i) REQUIRE(got.w[i] == ref[l].w[i]);
    for (std::size_t i = 0; i < got.b.numel(); ++i) REQUIRE(got.b[i] == ref[l].b[i]);
  }
}

TEST_CASE("learning rate schedule", "[optim]") {
  REQUIRE(lr_schedule(0, 2e-4, 250000) == 2e-4);
  REQUIRE(lr_schedule(249999, 2e-4, 250000) == 2e-4);
  REQUIRE(lr_schedule(250000, 2e-4, 250000) == 1e-4);
  REQUIRE(lr_schedule(499999, 2e-4, 250000) == 1e-4);
  REQUIRE(lr_schedule(500000, 2e-4, 250000) == 5e-5);
  REQUIRE(lr_schedule(1, 1.0, 1) == 0.5);
  REQUIRE_THROWS_AS(lr_schedule(1, 1.0, 0), ConfigError);
}

TEST_CASE("adam state validation", "[optim]") {
  AdamState s;
  validate_adam(s);
  s.beta1 = 1.0;
  REQUIRE_THROWS_AS(validate_adam(s), ConfigError);
  s.beta1 = 0.9;
  s.beta2 = 0.0;
  REQUIRE_THROWS_AS(validate_adam(s), ConfigError);
  s.beta2 = 0.999;
  s.eps = 0.0;
  REQUIRE_THROWS_AS(validate_adam(s), ConfigError);
}

}  // namespace issp
