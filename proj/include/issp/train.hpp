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

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "issp/data.hpp"
#include "issp/errors.hpp"
#include "issp/metrics.hpp"
#include "issp/model.hpp"
#include "issp/optim.hpp"
#include "issp/pruning.hpp"
#include "issp/rng.hpp"

namespace issp {

struct TrainParams {
  std::size_t batch = 16;
  std::size_t patch = 16;  // LR patch edge; HR patches are scale× larger
  double lr0 = 2e-4;
  std::uint64_t half_every = 2500;
  std::uint64_t seed = 42;
};

inline void validate_train_params(const TrainParams& p) {
  if (p.batch < 1) throw ConfigError("batch must be >= 1");
  if (p.patch < 1) throw ConfigError("patch must be >= 1");
  if (!(p.lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (p.half_every < 1) throw ConfigError("half_every must be >= 1");
}

/// Everything the loop mutates per iteration; the unit of checkpointing
/// together with the model parameters.
struct TrainState {
  std::uint64_t k = 0;
  AdamState adam;
  MaskState masks;
  double eta = 0.0;
  std::uint64_t seed = 0;  // run seed; every stream derives from (seed, k)
};

struct TrainResult {
  Model<float> model;
  TrainState state;
  MetricLog log;

  TrainResult(ModelConfig cfg) : model(cfg) {}
};

/// Observer invoked at the end of every iteration, after the optimizer step
/// and (when frozen) the mask re-application.  Tests use it to audit
/// invariants mid-run without reaching into the loop.
using IterationHook = std::function<void(std::uint64_t k, const Model<float>& m,
                                         const MaskState& masks, double loss)>;

/// Trains a model under one of the five schedules.
///
/// Per pruning-stage iteration, in order: each prunable layer re-selects its
/// unimportant set and applies the method's shrink (hard zeroing, soft
/// attenuation, or selection only for the regularized variant); the batch
/// runs forward and backward on the shrunk weights; Adam updates the stored
/// weights; the regularized variant then adds its −2ηθ term and grows η on
/// schedule.  At k == k_p the pattern freezes: one final selection, pruned
/// weights zeroed, and every later iteration re-applies the binary mask
/// after the update so pruned positions stay exactly zero.  The baselines
/// (scratch, l1_oneshot) freeze their pattern at k = 0 and train all
/// k_p + k_ft iterations under it.
inline TrainResult run_training(const ModelConfig& model_cfg,
                                const PruneConfig& prune_cfg,
                                const Dataset& dataset,
                                const TrainParams& params,
                                const IterationHook& hook = {}) {
  validate_model_config(model_cfg);
  validate_prune_config(prune_cfg);
  validate_train_params(params);
  if (dataset.train.empty()) throw DataError("training set is empty");
  if (model_cfg.arch == Arch::mini_mlp && model_cfg.mlp_patch != params.patch) {
    throw ConfigError("mini_mlp requires patch == mlp_patch");
  }

  TrainResult result(model_cfg);
  Model<float>& model = result.model;
  TrainState& st = result.state;
  st.seed = params.seed;
  st.adam.lr = params.lr0;
  validate_adam(st.adam);

  Rng init_rng(Rng::mix(params.seed, rng_salt::kInit));
  init_params(model, init_rng);

  st.masks = make_mask_state(model);
  std::size_t n_layers = model.num_param_layers();

  bool is_baseline = prune_cfg.method == PruneMethod::scratch ||
                     prune_cfg.method == PruneMethod::l1_oneshot;
  if (is_baseline) {
    std::uint64_t mask_seed = prune_cfg.seed != 0 ? prune_cfg.seed : params.seed;
    Rng mask_rng(Rng::mix(mask_seed, rng_salt::kMask));
    baseline_mask(prune_cfg.method, model, st.masks, prune_cfg.r, mask_rng);
  } else if (prune_cfg.k_p == 0) {
    // A zero-length pruning stage degenerates to one-shot selection on the
    // initial weights.
    freeze_masks(model, st.masks, prune_cfg.r);
  }

  st.eta = prune_cfg.eta0;
  std::uint64_t patch_seed = Rng::mix(params.seed, rng_salt::kPatches);
  std::uint64_t total = prune_cfg.total_iterations();

  std::vector<std::vector<std::uint8_t>> prev_designation(n_layers);
  std::vector<double> flips(n_layers, 0.0);
  std::vector<double> zf(n_layers, 0.0);
  std::vector<Tensor<float>> w_pre(n_layers);
  std::vector<Tensor<float>> lr_batch, hr_batch;

  for (std::uint64_t k = 1; k <= total; ++k) {
    st.adam.lr = lr_schedule(k, params.lr0, params.half_every);

    if (!st.masks.frozen) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        Tensor<float>& w = model.param_layer(l).p.w;
        LayerMask& mask = st.masks.layers[l];
        switch (prune_cfg.method) {
          case PruneMethod::iht:
            iht_step(w, mask, prune_cfg.r);
            break;
          case PruneMethod::issp:
            issp_step(w, mask, prune_cfg.r, prune_cfg.alpha);
            break;
          case PruneMethod::issr:
            issr_select(w, mask, prune_cfg.r);
            break;
          default:
            break;
        }
        flips[l] = prev_designation[l].empty()
                       ? 0.0
                       : flip_permille(prev_designation[l], mask.designated);
        prev_designation[l] = mask.designated;
      }
    } else {
      for (std::size_t l = 0; l < n_layers; ++l) flips[l] = 0.0;
    }
    // The zero fraction reported for iteration k is the state the forward
    // pass sees.
    for (std::size_t l = 0; l < n_layers; ++l) {
      zf[l] = zero_fraction(model.param_layer(l).p.w);
    }

    Rng iter_rng(Rng::mix(patch_seed, k));
    std::vector<SamplePair> batch =
        sample_patches(dataset.train, dataset.train_ids, model_cfg.scale,
                       params.patch, params.batch, iter_rng);
    lr_batch.clear();
    hr_batch.clear();
    for (SamplePair& pair : batch) {
      SamplePair aug = augment(pair, iter_rng);
      lr_batch.push_back(std::move(aug.lr));
      hr_batch.push_back(std::move(aug.hr));
    }

    double loss = model_forward_backward(model, lr_batch, hr_batch);

    bool issr_active = prune_cfg.method == PruneMethod::issr && !st.masks.frozen;
    if (issr_active) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        w_pre[l] = model.param_layer(l).p.w;
      }
    }

    adam_step_model(model, st.adam);

    if (issr_active) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        issr_penalty(model.param_layer(l).p.w, st.masks.layers[l], w_pre[l],
                     st.eta);
      }
      st.eta = eta_growth(st.eta, prune_cfg.delta, k, prune_cfg.k_eta,
                          prune_cfg.eta_additive);
    }

    if (st.masks.frozen) {
      apply_frozen_masks(model, st.masks);
    } else if (k == prune_cfg.k_p) {
      freeze_masks(model, st.masks, prune_cfg.r);
    }

    for (std::size_t l = 0; l < n_layers; ++l) {
      const ParamLayer<float>& layer = model.param_layer(l);
      GradStats gs = grad_stats(layer.p.grad_w);
      MetricRow row;
      row.k = k;
      row.loss = loss;
      row.lr = st.adam.lr;
      row.layer = layer.name;
      row.flips_permille = flips[l];
      row.grad_l2 = gs.l2;
      row.grad_var = gs.var;
      row.zero_fraction = zf[l];
      result.log.append(row);
    }

    st.k = k;
    if (hook) hook(k, model, st.masks, loss);
  }

  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim_val = 0.0;
};

/// Super-resolves each HR image's bicubic LR counterpart and scores the
/// result on the luma channel.  HR images are cropped to a multiple of the
/// scale first; PSNR shaves `scale` border pixels per side.
inline std::vector<EvalRow> evaluate_model(Model<float>& model,
                                           const std::vector<ImageU8>& images,
                                           const std::vector<std::string>& ids) {
  std::size_t s = model.config().scale;
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageU8& hr_full = images[i];
    std::size_t hc = hr_full.h - hr_full.h % s;
    std::size_t wc = hr_full.w - hr_full.w % s;
    if (hc < s || wc < s) throw ImageTooSmall("evaluation image too small");
    ImageU8 hr(hc, wc);
    for (std::size_t y = 0; y < hc; ++y)
      for (std::size_t x = 0; x < wc; ++x)
        for (std::size_t c = 0; c < 3; ++c) hr.at(y, x, c) = hr_full.at(y, x, c);

    ImageU8 lr = bicubic_resize(hr, hc / s, wc / s);
    Tensor<float> pred = model.forward_image(tensor_from_image<float>(lr));
    ImageU8 pred_img = image_from_tensor(pred);

    Tensor<double> ya = rgb_to_y(pred_img);
    Tensor<double> yb = rgb_to_y(hr);
    EvalRow row;
    row.id = i < ids.size() ? ids[i] : std::to_string(i);
    row.psnr_db = psnr(ya, yb, 255.0, s);
    row.ssim_val = ssim(ya, yb);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double mean_psnr(const std::vector<EvalRow>& rows) {
  double sum = 0.0;
  for (const EvalRow& r : rows) sum += r.psnr_db;
  return rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
}

}  // namespace issp
