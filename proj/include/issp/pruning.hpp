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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/model.hpp"
#include "issp/rng.hpp"
#include "issp/tensor.hpp"

namespace issp {

enum class PruneMethod : std::uint32_t {
  scratch = 0,
  l1_oneshot = 1,
  iht = 2,
  issr = 3,
  issp = 4,
};

inline const char* prune_method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::scratch: return "scratch";
    case PruneMethod::l1_oneshot: return "l1_oneshot";
    case PruneMethod::iht: return "iht";
    case PruneMethod::issr: return "issr";
    case PruneMethod::issp: return "issp";
  }
  return "?";
}

inline PruneMethod parse_prune_method(const std::string& s) {
  if (s == "scratch") return PruneMethod::scratch;
  if (s == "l1_oneshot") return PruneMethod::l1_oneshot;
  if (s == "iht") return PruneMethod::iht;
  if (s == "issr") return PruneMethod::issr;
  if (s == "issp") return PruneMethod::issp;
  throw ConfigError("unknown pruning method: " + s);
}

/// Schedule hyperparameters.  Total training length is k_p + k_ft: a pruning
/// stage where the sparsity pattern may still move, then a fine-tune stage
/// under the frozen pattern.
struct PruneConfig {
  PruneMethod method = PruneMethod::issp;
  double r = 0.95;       // pruning ratio
  double alpha = 0.95;   // magnitude attenuation per pruning iteration
  double eta0 = 1e-4;    // initial regularization strength (issr)
  double delta = 0.1;    // eta growth ratio (issr)
  std::uint64_t k_eta = 100;   // eta growth interval (issr)
  std::uint64_t k_p = 2000;    // pruning-stage iterations
  std::uint64_t k_ft = 4000;   // fine-tune iterations
  // The growth rule "eta increases by delta·eta every k_eta iterations" has
  // a multiplicative reading (default) and an additive one (eta += delta).
  bool eta_additive = false;
  std::uint64_t seed = 0;  // substream for the random baseline mask

  std::uint64_t total_iterations() const { return k_p + k_ft; }
};

inline void validate_prune_config(const PruneConfig& c) {
  if (!(c.r >= 0.0 && c.r <= 1.0)) throw ConfigError("pruning ratio r must be in [0,1]");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) {
    throw ConfigError("alpha must be in (0,1)");
  }
  if (!(c.eta0 >= 0.0)) throw ConfigError("eta0 must be >= 0");
  if (!(c.delta > 0.0)) throw ConfigError("delta must be > 0");
  if (c.k_eta < 1) throw ConfigError("k_eta must be >= 1");
}

/// Number of weights designated unimportant in a layer of n weights.  The
/// tiny nudge keeps decimal ratios honest: 0.99·100 must count as 99 even
/// though the product rounds below it in binary floating point.
inline std::size_t pruned_count_for(double r, std::size_t n) {
  return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
}

struct RankSelection {
  std::vector<std::uint32_t> pruned;  // ascending indices
  double tau = 0.0;                   // smallest kept magnitude; +inf if none kept
};

/// Designates the floor(r·n) smallest-magnitude weights unimportant.  Ties
/// break by ascending index so the selection is a pure function of the
/// weight values.
template <typename T>
RankSelection rank_select(const T* w, std::size_t n, double r) {
  if (n == 0) throw EmptyLayer("rank_select on an empty layer");
  if (!(r >= 0.0 && r <= 1.0)) throw BadRange("pruning ratio must be in [0,1]");
  std::size_t cnt = pruned_count_for(r, n);
  RankSelection sel;
  if (cnt == 0) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, static_cast<double>(std::abs(static_cast<double>(w[i]))));
    }
    sel.tau = lo;
    return sel;
  }
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  auto less = [w](std::uint32_t a, std::uint32_t b) {
    double ma = std::abs(static_cast<double>(w[a]));
    double mb = std::abs(static_cast<double>(w[b]));
    if (ma != mb) return ma < mb;
    return a < b;
  };
  if (cnt < n) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cnt),
                     idx.end(), less);
    // idx[cnt] is the minimal kept element under the (|w|, index) order, so
    // its magnitude is the smallest kept magnitude.
    sel.tau = std::abs(static_cast<double>(w[idx[cnt]]));
  } else {
    sel.tau = std::numeric_limits<double>::infinity();
  }
  sel.pruned.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cnt));
  std::sort(sel.pruned.begin(), sel.pruned.end());
  return sel;
}

template <typename T>
RankSelection rank_select(const Tensor<T>& w, double r) {
  return rank_select(w.data(), w.numel(), r);
}

/// Per-layer important/unimportant record.  `designated` is the current
/// partition bitmap; the sorted index list mirrors it for serialization and
/// for applying the frozen pattern.
struct LayerMask {
  std::string layer_name;
  std::size_t n = 0;
  std::vector<std::uint32_t> pruned_idx;
  std::vector<std::uint8_t> designated;  // 1 = unimportant
  double tau = std::numeric_limits<double>::infinity();
  bool frozen = false;

  std::size_t pruned_count() const { return pruned_idx.size(); }

  void set_selection(const RankSelection& sel) {
    pruned_idx = sel.pruned;
    tau = sel.tau;
    std::fill(designated.begin(), designated.end(), std::uint8_t{0});
    for (std::uint32_t i : pruned_idx) designated[i] = 1;
  }

  /// Mask value at a position: 1 for kept weights; during the pruning stage
  /// unimportant entries carry the attenuation, after freeze they are 0.
  double value_at(std::size_t i, double alpha) const {
    if (!designated[i]) return 1.0;
    return frozen ? 0.0 : alpha;
  }
};

struct MaskState {
  std::vector<LayerMask> layers;
  bool frozen = false;
};

template <typename T>
MaskState make_mask_state(const Model<T>& model) {
  MaskState ms;
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    const ParamLayer<T>& l = model.param_layer(i);
    LayerMask m;
    m.layer_name = l.name;
    m.n = l.p.w.numel();
    m.designated.assign(m.n, 0);
    ms.layers.push_back(std::move(m));
  }
  return ms;
}

/// Hard thresholding: re-selects and zeroes the unimportant weights in
/// place.  Applying it twice without an intervening gradient step is a
/// no-op the second time.
template <typename T>
void iht_step(Tensor<T>& w, LayerMask& mask, double r) {
  if (mask.frozen) throw AlreadyFrozen("iht_step after freeze");
  RankSelection sel = rank_select(w, r);
  for (std::uint32_t i : sel.pruned) w[i] = T{};
  mask.set_selection(sel);
}

/// Soft shrinkage: re-selects and persistently attenuates the unimportant
/// weights by alpha.  alpha = 0 degenerates to hard thresholding.
template <typename T>
void issp_step(Tensor<T>& w, LayerMask& mask, double r, double alpha) {
  if (mask.frozen) throw AlreadyFrozen("issp_step after freeze");
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw BadRange("issp_step attenuation must be in [0,1)");
  }
  RankSelection sel = rank_select(w, r);
  T a = static_cast<T>(alpha);
  for (std::uint32_t i : sel.pruned) w[i] *= a;
  mask.set_selection(sel);
}

/// Records this iteration's selection without touching the weights; the
/// regularization variant shrinks through the update term instead.
template <typename T>
void issr_select(const Tensor<T>& w, LayerMask& mask, double r) {
  if (mask.frozen) throw AlreadyFrozen("issr_select after freeze");
  mask.set_selection(rank_select(w, r));
}

/// The growing-regularization update term: each unimportant weight receives
/// an extra −2·eta·θ on top of the optimizer's step, with θ taken at the
/// start of the iteration and the term deliberately not scaled by the
/// learning rate.  `w_pre` is the pre-update copy of the weights.
template <typename T>
void issr_penalty(Tensor<T>& w, const LayerMask& mask, const Tensor<T>& w_pre,
                  double eta) {
  if (!w.same_shape(w_pre)) throw ShapeMismatch("issr_penalty weight copies disagree");
  T two_eta = static_cast<T>(2.0 * eta);
  for (std::uint32_t i : mask.pruned_idx) w[i] -= two_eta * w_pre[i];
}

/// eta grows every k_eta iterations; multiplicative by default, additive as
/// the alternative reading.
inline double eta_growth(double eta, double delta, std::uint64_t k,
                         std::uint64_t k_eta, bool additive = false) {
  if (k_eta < 1) throw ConfigError("k_eta must be >= 1");
  if (k == 0 || k % k_eta != 0) return eta;
  return additive ? eta + delta : eta * (1.0 + delta);
}

/// Freezes the sparsity pattern: one final selection on the current weights,
/// unimportant positions zeroed, mask becomes binary and permanent.
template <typename T>
void freeze_masks(Model<T>& model, MaskState& ms, double r) {
  if (ms.frozen) throw AlreadyFrozen("masks are already frozen");
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    Tensor<T>& w = model.param_layer(i).p.w;
    LayerMask& m = ms.layers[i];
    RankSelection sel = rank_select(w, r);
    for (std::uint32_t j : sel.pruned) w[j] = T{};
    m.set_selection(sel);
    m.frozen = true;
  }
  ms.frozen = true;
}

/// Re-applies the frozen binary mask: pruned positions return to exactly 0
/// no matter what the optimizer did to them.
template <typename T>
void apply_frozen_masks(Model<T>& model, const MaskState& ms) {
  if (!ms.frozen) throw NotFrozen("apply_frozen_masks before freeze");
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    Tensor<T>& w = model.param_layer(i).p.w;
    for (std::uint32_t j : ms.layers[i].pruned_idx) w[j] = T{};
  }
}

/// Baseline sparse structures fixed at initialization: `scratch` draws a
/// uniformly random pattern, `l1_oneshot` rank-selects the initial weights.
/// Both zero the selected weights and freeze immediately.
template <typename T>
void baseline_mask(PruneMethod method, Model<T>& model, MaskState& ms,
                   double r, Rng& rng) {
  if (ms.frozen) throw AlreadyFrozen("baseline mask on frozen state");
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    Tensor<T>& w = model.param_layer(i).p.w;
    LayerMask& m = ms.layers[i];
    std::size_t n = w.numel();
    RankSelection sel;
    if (method == PruneMethod::l1_oneshot) {
      sel = rank_select(w, r);
    } else if (method == PruneMethod::scratch) {
      std::size_t cnt = pruned_count_for(r, n);
      std::vector<std::uint32_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t j = 0; j < cnt; ++j) {
        std::size_t pick = j + static_cast<std::size_t>(rng.next_below(n - j));
        std::swap(idx[j], idx[pick]);
      }
      sel.pruned.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cnt));
      std::sort(sel.pruned.begin(), sel.pruned.end());
      std::vector<std::uint8_t> chosen(n, 0);
      for (std::uint32_t j : sel.pruned) chosen[j] = 1;
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!chosen[j]) lo = std::min(lo, std::abs(static_cast<double>(w[j])));
      }
      sel.tau = lo;
    } else {
      throw ConfigError("baseline_mask accepts scratch or l1_oneshot only");
    }
    for (std::uint32_t j : sel.pruned) w[j] = T{};
    m.set_selection(sel);
    m.frozen = true;
  }
  ms.frozen = true;
}

}  // namespace issp
