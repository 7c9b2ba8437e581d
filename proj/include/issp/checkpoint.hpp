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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/model.hpp"
#include "issp/pruning.hpp"
#include "issp/serialize.hpp"
#include "issp/train.hpp"

namespace issp {

inline constexpr char kCheckpointMagic[] = "ISSPv1";
inline constexpr std::size_t kMagicLen = 6;

/// A training run frozen to disk: architecture, weights with optimizer
/// moments, mask state, and the loop scalars.  Round-trips bit-exactly.
struct Checkpoint {
  ModelConfig model_cfg;
  PruneConfig prune;
  Model<float> model;
  TrainState state;

  explicit Checkpoint(ModelConfig cfg) : model_cfg(cfg), model(cfg) {}
};

namespace detail {

inline void write_f32_tensor(BinaryWriter& w, const Tensor<float>& t) {
  w.f32_span(t.data(), t.data() + t.numel());
}

inline void read_f32_tensor(BinaryReader& r, Tensor<float>& t) {
  float* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) p[i] = r.f32();
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ck) {
  atomic_write_file(path, [&](std::ostream& os) {
    BinaryWriter w(os);
    const ModelConfig& mc = ck.model_cfg;
    w.magic(kCheckpointMagic, kMagicLen);
    w.u32(static_cast<std::uint32_t>(mc.arch));
    w.u32(static_cast<std::uint32_t>(mc.n_blocks));
    w.u32(static_cast<std::uint32_t>(mc.channels));
    w.u32(static_cast<std::uint32_t>(mc.scale));
    w.u32(static_cast<std::uint32_t>(mc.mlp_patch));

    const Model<float>& m = ck.model;
    w.u32(static_cast<std::uint32_t>(m.num_param_layers()));
    for (std::size_t i = 0; i < m.num_param_layers(); ++i) {
      const ParamLayer<float>& l = m.param_layer(i);
      w.u32(static_cast<std::uint32_t>(l.kind));
      w.u32(static_cast<std::uint32_t>(l.p.w.rank()));
      for (std::size_t d = 0; d < l.p.w.rank(); ++d) {
        w.u32(static_cast<std::uint32_t>(l.p.w.dim(d)));
      }
      w.u32(static_cast<std::uint32_t>(l.p.b.numel()));
    }
    for (std::size_t i = 0; i < m.num_param_layers(); ++i) {
      const ParamTensor<float>& p = m.param_layer(i).p;
      detail::write_f32_tensor(w, p.w);
      detail::write_f32_tensor(w, p.b);
      detail::write_f32_tensor(w, p.adam_m);
      detail::write_f32_tensor(w, p.adam_m_b);
      detail::write_f32_tensor(w, p.adam_v);
      detail::write_f32_tensor(w, p.adam_v_b);
    }

    for (const LayerMask& mask : ck.state.masks.layers) {
      w.u32(static_cast<std::uint32_t>(mask.pruned_idx.size()));
      for (std::uint32_t idx : mask.pruned_idx) w.u32(idx);
      w.u8(mask.frozen ? 1 : 0);
      w.f32(static_cast<float>(mask.tau));
    }

    const TrainState& st = ck.state;
    w.u64(st.k);
    w.f64(st.adam.beta1);
    w.f64(st.adam.beta2);
    w.f64(st.adam.eps);
    w.f64(st.adam.lr);
    w.u64(st.adam.t);
    w.u64(st.seed);
    w.u32(static_cast<std::uint32_t>(ck.prune.method));
    w.u8(ck.prune.eta_additive ? 1 : 0);
    w.f64(ck.prune.r);
    w.f64(ck.prune.alpha);
    w.f64(ck.prune.eta0);
    w.f64(ck.prune.delta);
    w.f64(st.eta);
    w.u64(ck.prune.k_eta);
    w.u64(ck.prune.k_p);
    w.u64(ck.prune.k_ft);
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  BinaryReader r(is);
  r.expect_magic(kCheckpointMagic, kMagicLen, "checkpoint");

  ModelConfig mc;
  std::uint32_t arch = r.u32();
  if (arch > static_cast<std::uint32_t>(Arch::mini_mlp)) {
    throw ShapeMismatch("checkpoint: architecture id out of range");
  }
  mc.arch = static_cast<Arch>(arch);
  mc.n_blocks = r.u32();
  mc.channels = r.u32();
  mc.scale = r.u32();
  mc.mlp_patch = r.u32();
  validate_model_config(mc);

  Checkpoint ck(mc);
  Model<float>& m = ck.model;
  std::uint32_t n_layers = r.u32();
  if (n_layers != m.num_param_layers()) {
    throw ShapeMismatch("checkpoint: layer count does not match architecture");
  }
  for (std::size_t i = 0; i < m.num_param_layers(); ++i) {
    const ParamLayer<float>& l = m.param_layer(i);
    if (r.u32() != static_cast<std::uint32_t>(l.kind)) {
      throw ShapeMismatch("checkpoint: layer kind mismatch");
    }
    std::uint32_t rank = r.u32();
    if (rank != l.p.w.rank()) {
      throw ShapeMismatch("checkpoint: weight rank mismatch");
    }
    for (std::size_t d = 0; d < rank; ++d) {
      if (r.u32() != l.p.w.dim(d)) {
        throw ShapeMismatch("checkpoint: weight shape mismatch");
      }
    }
    if (r.u32() != l.p.b.numel()) {
      throw ShapeMismatch("checkpoint: bias length mismatch");
    }
  }
  for (std::size_t i = 0; i < m.num_param_layers(); ++i) {
    ParamTensor<float>& p = m.param_layer(i).p;
    detail::read_f32_tensor(r, p.w);
    detail::read_f32_tensor(r, p.b);
    detail::read_f32_tensor(r, p.adam_m);
    detail::read_f32_tensor(r, p.adam_m_b);
    detail::read_f32_tensor(r, p.adam_v);
    detail::read_f32_tensor(r, p.adam_v_b);
  }

  ck.state.masks = make_mask_state(m);
  bool all_frozen = true;
  for (LayerMask& mask : ck.state.masks.layers) {
    std::uint32_t count = r.u32();
    if (count > mask.n) throw ShapeMismatch("checkpoint: pruned count exceeds layer size");
    mask.pruned_idx.resize(count);
    std::uint32_t prev = 0;
    for (std::uint32_t j = 0; j < count; ++j) {
      std::uint32_t idx = r.u32();
      if (idx >= mask.n || (j > 0 && idx <= prev)) {
        throw ShapeMismatch("checkpoint: pruned indices not ascending in range");
      }
      mask.pruned_idx[j] = idx;
      prev = idx;
    }
    std::fill(mask.designated.begin(), mask.designated.end(), std::uint8_t{0});
    for (std::uint32_t idx : mask.pruned_idx) mask.designated[idx] = 1;
    mask.frozen = r.u8() != 0;
    mask.tau = r.f32();
    all_frozen = all_frozen && mask.frozen;
  }
  ck.state.masks.frozen = all_frozen && !ck.state.masks.layers.empty();

  TrainState& st = ck.state;
  st.k = r.u64();
  st.adam.beta1 = r.f64();
  st.adam.beta2 = r.f64();
  st.adam.eps = r.f64();
  st.adam.lr = r.f64();
  st.adam.t = r.u64();
  st.seed = r.u64();
  std::uint32_t method = r.u32();
  if (method > static_cast<std::uint32_t>(PruneMethod::issp)) {
    throw ShapeMismatch("checkpoint: method id out of range");
  }
  ck.prune.method = static_cast<PruneMethod>(method);
  ck.prune.eta_additive = r.u8() != 0;
  ck.prune.r = r.f64();
  ck.prune.alpha = r.f64();
  ck.prune.eta0 = r.f64();
  ck.prune.delta = r.f64();
  st.eta = r.f64();
  ck.prune.k_eta = r.u64();
  ck.prune.k_p = r.u64();
  ck.prune.k_ft = r.u64();
  if (!r.at_eof()) throw Truncated("checkpoint: trailing bytes after record");
  return ck;
}

}  // namespace issp
