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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "issp/issp.hpp"

namespace {

// Exit codes: 0 ok, 1 check/bench failure, 2 config or usage, 3 data,
// 4 corrupt checkpoint or sparse model, 5 mask not frozen.
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCorrupt = 4;
constexpr int kExitNotFrozen = 5;

int fail(int code, const std::string& what) {
  std::fprintf(stderr, "error: %s\n", what.c_str());
  return code;
}

bool is_data_error(const issp::Error& e) {
  return dynamic_cast<const issp::DataError*>(&e) ||
         dynamic_cast<const issp::BadMaxval*>(&e) ||
         dynamic_cast<const issp::BadChannels*>(&e) ||
         dynamic_cast<const issp::ImageTooSmall*>(&e) ||
         dynamic_cast<const issp::TooSmall*>(&e) ||
         dynamic_cast<const issp::NonSquare*>(&e) ||
         dynamic_cast<const issp::CropTooLarge*>(&e);
}

bool is_corrupt_file_error(const issp::Error& e) {
  return dynamic_cast<const issp::BadMagic*>(&e) ||
         dynamic_cast<const issp::Truncated*>(&e) ||
         dynamic_cast<const issp::ShapeMismatch*>(&e);
}

std::uint64_t parse_env_seed(const char* text) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(text, &end, 10);
  if (end == text || *end != '\0') {
    throw issp::ConfigError("ISSP_SEED must be an unsigned integer");
  }
  return v;
}

struct TrainCli {
  std::string config_path;
  std::string preset = "desk";
  std::string outdir;
  std::string arch;
  std::string method;
  std::string manifest;
  double r = 0, alpha = 0, eta0 = 0, delta = 0, lr0 = 0;
  std::uint64_t k_eta = 0, k_p = 0, k_ft = 0, half_every = 0;
  std::uint64_t seed = 0, mask_seed = 0;
  std::size_t batch = 0, patch = 0, n_blocks = 0, channels = 0, scale = 0,
              mlp_patch = 0, synth_count = 0, synth_size = 0;
  bool eta_additive = false;
};

struct EvalCli {
  std::string checkpoint;
  std::string manifest;
  std::string out_csv;
  std::string split = "val";
  std::uint64_t seed = 0;
  std::size_t synth_count = 24, synth_size = 96;
  bool seed_given = false;
};

void print_eval_rows(const std::vector<issp::EvalRow>& rows, double mean_p,
                     double mean_s, const std::string& out_csv) {
  for (const issp::EvalRow& r : rows) {
    std::printf("%-12s  psnr %.9g dB  ssim %.9g\n", r.id.c_str(), r.psnr_db,
                r.ssim_val);
  }
  std::printf("%-12s  psnr %.9g dB  ssim %.9g\n", "mean", mean_p, mean_s);
  if (!out_csv.empty()) {
    std::string text = "id,psnr_db,ssim\n";
    char buf[128];
    for (const issp::EvalRow& r : rows) {
      std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", r.psnr_db, r.ssim_val);
      text += r.id + buf;
    }
    issp::atomic_write_file(out_csv, [&](std::ostream& os) {
      os.write(text.data(), static_cast<std::streamsize>(text.size()));
    });
  }
}

int cmd_train(const TrainCli& cli, const CLI::App* sub) {
  issp::RunConfig cfg;
  try {
    cfg = cli.config_path.empty() ? issp::preset_config(cli.preset)
                                  : issp::load_run_config(cli.config_path);

    auto given = [&](const char* name) { return sub->count(name) > 0; };
    if (given("--arch")) cfg.model.arch = issp::parse_arch(cli.arch);
    if (given("--n-blocks")) cfg.model.n_blocks = cli.n_blocks;
    if (given("--channels")) cfg.model.channels = cli.channels;
    if (given("--scale")) cfg.model.scale = cli.scale;
    if (given("--mlp-patch")) cfg.model.mlp_patch = cli.mlp_patch;
    if (given("--method")) cfg.prune.method = issp::parse_prune_method(cli.method);
    if (given("--r")) cfg.prune.r = cli.r;
    if (given("--alpha")) cfg.prune.alpha = cli.alpha;
    if (given("--eta0")) cfg.prune.eta0 = cli.eta0;
    if (given("--delta")) cfg.prune.delta = cli.delta;
    if (given("--k-eta")) cfg.prune.k_eta = cli.k_eta;
    if (given("--eta-additive")) cfg.prune.eta_additive = cli.eta_additive;
    if (given("--k-p")) cfg.prune.k_p = cli.k_p;
    if (given("--k-ft")) cfg.prune.k_ft = cli.k_ft;
    if (given("--mask-seed")) cfg.prune.seed = cli.mask_seed;
    if (given("--batch")) cfg.train.batch = cli.batch;
    if (given("--patch")) cfg.train.patch = cli.patch;
    if (given("--lr0")) cfg.train.lr0 = cli.lr0;
    if (given("--half-every")) cfg.train.half_every = cli.half_every;
    if (given("--manifest")) cfg.data.manifest = cli.manifest;
    if (given("--synth-count")) cfg.data.synth_count = cli.synth_count;
    if (given("--synth-size")) cfg.data.synth_size = cli.synth_size;
    if (given("--out")) cfg.outdir = cli.outdir;

    if (given("--seed")) {
      cfg.train.seed = cli.seed;
    } else if (const char* env = std::getenv("ISSP_SEED")) {
      cfg.train.seed = parse_env_seed(env);
    }

    issp::validate_run_config(cfg);
  } catch (const issp::Error& e) {
    return fail(kExitConfig, e.what());
  }

  issp::Dataset dataset;
  try {
    dataset = issp::load_dataset(cfg);
    if (dataset.train.empty()) throw issp::DataError("training split is empty");
  } catch (const issp::Error& e) {
    return fail(kExitData, e.what());
  }

  std::printf("training %s  method=%s  r=%g  k=%llu (%llu prune + %llu tune)  seed=%llu\n",
              issp::arch_name(cfg.model.arch),
              issp::prune_method_name(cfg.prune.method), cfg.prune.r,
              static_cast<unsigned long long>(cfg.prune.total_iterations()),
              static_cast<unsigned long long>(cfg.prune.k_p),
              static_cast<unsigned long long>(cfg.prune.k_ft),
              static_cast<unsigned long long>(cfg.train.seed));
  std::fflush(stdout);

  issp::TrainResult result =
      issp::run_training(cfg.model, cfg.prune, dataset, cfg.train);

  std::filesystem::create_directories(cfg.outdir);
  issp::save_run_config(cfg.outdir + "/config.resolved", cfg);
  result.log.save(cfg.outdir + "/metrics.csv");

  issp::Checkpoint ck(cfg.model);
  ck.prune = cfg.prune;
  ck.model = std::move(result.model);
  ck.state = result.state;
  issp::save_checkpoint(cfg.outdir + "/final.ckpt", ck);

  const issp::MetricRow& last = result.log.rows().back();
  std::printf("final loss %.9g\n", last.loss);
  if (!dataset.val.empty()) {
    std::vector<issp::EvalRow> rows =
        issp::evaluate_model(ck.model, dataset.val, dataset.val_ids);
    double mp = issp::mean_psnr(rows);
    double ms = 0;
    for (const issp::EvalRow& r : rows) ms += r.ssim_val;
    ms /= static_cast<double>(rows.size());
    std::printf("val mean  psnr %.9g dB  ssim %.9g  (%zu images)\n", mp, ms,
                rows.size());
  }
  std::printf("wrote %s/final.ckpt, metrics.csv, config.resolved\n",
              cfg.outdir.c_str());
  return 0;
}

int cmd_eval(const EvalCli& cli) {
  issp::Checkpoint ck(issp::ModelConfig{});
  try {
    ck = issp::load_checkpoint(cli.checkpoint);
  } catch (const issp::Error& e) {
    return fail(is_corrupt_file_error(e) ? kExitCorrupt : kExitData, e.what());
  }

  issp::Dataset ds;
  try {
    if (!cli.manifest.empty()) {
      ds = issp::load_manifest(cli.manifest);
    } else {
      std::uint64_t seed = cli.seed_given ? cli.seed : ck.state.seed;
      ds = issp::synth_dataset(cli.synth_count, cli.synth_size,
                               issp::Rng::mix(seed, issp::rng_salt::kData));
    }
  } catch (const issp::Error& e) {
    return fail(kExitData, e.what());
  }

  std::vector<issp::ImageU8>* images = &ds.val;
  std::vector<std::string>* ids = &ds.val_ids;
  if (cli.split == "train") {
    images = &ds.train;
    ids = &ds.train_ids;
  } else if (cli.split == "all") {
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
      ds.val.push_back(ds.train[i]);
      ds.val_ids.push_back(ds.train_ids[i]);
    }
  } else if (cli.split != "val") {
    return fail(kExitConfig, "split must be one of train, val, all");
  }
  if (images->empty()) return fail(kExitData, "evaluation split is empty");

  try {
    std::vector<issp::EvalRow> rows = issp::evaluate_model(ck.model, *images, *ids);
    double mp = issp::mean_psnr(rows);
    double ms = 0;
    for (const issp::EvalRow& r : rows) ms += r.ssim_val;
    ms /= static_cast<double>(rows.size());
    print_eval_rows(rows, mp, ms, cli.out_csv);
  } catch (const issp::Error& e) {
    return fail(kExitData, e.what());
  }
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  issp::Checkpoint ck(issp::ModelConfig{});
  try {
    ck = issp::load_checkpoint(checkpoint);
  } catch (const issp::Error& e) {
    return fail(is_corrupt_file_error(e) ? kExitCorrupt : kExitData, e.what());
  }
  try {
    issp::SparseModel sm = issp::export_sparse(ck.model, ck.state.masks);
    issp::save_sparse_model(out, sm);
    std::printf("wrote %s  nnz_fraction %.9g\n", out.c_str(), sm.nnz_fraction());
  } catch (const issp::NotFrozen& e) {
    return fail(kExitNotFrozen, e.what());
  } catch (const issp::MaskWeightDisagreement& e) {
    return fail(kExitCorrupt, e.what());
  }
  return 0;
}

int cmd_bench(const std::string& sparse_path, std::size_t size, int reps,
              std::uint64_t seed, const std::string& out) {
  issp::SparseModel sm(issp::ModelConfig{});
  try {
    sm = issp::load_sparse_model(sparse_path);
  } catch (const issp::Error& e) {
    return fail(is_corrupt_file_error(e) ? kExitCorrupt : kExitData, e.what());
  }

  try {
    issp::Model<float> dense = issp::densified_model(sm);
    issp::Rng rng(issp::Rng::mix(seed, issp::rng_salt::kData));
    if (sm.config().arch == issp::Arch::mini_mlp &&
        size % sm.config().mlp_patch != 0) {
      return fail(kExitConfig, "bench size must be a multiple of mlp_patch");
    }
    issp::ImageU8 img = issp::synth_texture(rng, size, size);
    issp::Tensor<float> input = issp::tensor_from_image<float>(img);

    issp::BenchReport rep = issp::bench_compare(dense, sm, input, reps);
    nlohmann::json j;
    j["dense_ns"] = rep.dense_ns;
    j["sparse_ns"] = rep.sparse_ns;
    j["speedup"] = rep.speedup;
    j["nnz_fraction"] = rep.nnz_fraction;
    std::string text = j.dump(2) + "\n";
    std::fputs(text.c_str(), stdout);
    if (!out.empty()) {
      issp::atomic_write_file(out, [&](std::ostream& os) {
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
      });
    }
  } catch (const issp::BadRange& e) {
    return fail(kExitConfig, e.what());
  } catch (const issp::CorrectnessFailure& e) {
    return fail(kExitFailure, e.what());
  } catch (const issp::Error& e) {
    return fail(kExitData, e.what());
  }
  return 0;
}

int cmd_gradcheck(const std::string& arch, std::uint64_t seed,
                  std::size_t coords, const std::string& inject) {
  if (!inject.empty() && inject != "conv2d" && inject != "linear") {
    return fail(kExitConfig, "--inject-fault accepts conv2d or linear");
  }
  std::vector<issp::ModelConfig> cfgs;
  if (arch == "both" || arch == "mini_edsr") cfgs.push_back(issp::ModelConfig{});
  if (arch == "both" || arch == "mini_mlp") {
    issp::ModelConfig c;
    c.arch = issp::Arch::mini_mlp;
    cfgs.push_back(c);
  }
  if (cfgs.empty()) return fail(kExitConfig, "arch must be mini_edsr, mini_mlp, or both");

  bool all_pass = true;
  for (const issp::ModelConfig& cfg : cfgs) {
    issp::GradCheckOptions opt;
    opt.seed = seed;
    opt.coords_per_layer = coords;
    opt.inject_fault = inject;
    issp::GradCheckReport rep = issp::run_gradcheck(cfg, opt);
    for (const issp::GradCheckLayer& l : rep.layers) {
      std::printf("%s %-12s max_rel_err %.3e  (%zu coords, %zu skipped)\n",
                  issp::arch_name(cfg.arch), l.name.c_str(), l.max_rel_err,
                  l.checked, l.skipped);
    }
    std::printf("%s end_to_end  rel_err %.3e\n", issp::arch_name(cfg.arch),
                rep.end_to_end_rel_err);
    if (!rep.pass()) {
      all_pass = false;
      const issp::GradCheckLayer* w = rep.worst();
      std::printf("%s FAIL  worst layer %s rel_err %.3e (tol %.0e)\n",
                  issp::arch_name(cfg.arch), w ? w->name.c_str() : "?",
                  w ? w->max_rel_err : 0.0, rep.layer_tol);
    }
  }
  std::printf("gradcheck %s\n", all_pass ? "PASS" : "FAIL");
  return all_pass ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse super-resolution training and inference"};
  app.require_subcommand(1);

  TrainCli tc;
  CLI::App* train = app.add_subcommand("train", "train a model under a pruning schedule");
  train->add_option("--config", tc.config_path, "JSON run config (a config.resolved replays a run)");
  train->add_option("--preset", tc.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--arch", tc.arch, "mini_edsr or mini_mlp");
  train->add_option("--n-blocks", tc.n_blocks, "residual blocks");
  train->add_option("--channels", tc.channels, "feature channels");
  train->add_option("--scale", tc.scale, "upscale factor (2, 3, 4)");
  train->add_option("--mlp-patch", tc.mlp_patch, "mini_mlp input patch edge");
  train->add_option("--method", tc.method, "scratch, l1_oneshot, iht, issr, issp");
  train->add_option("--r", tc.r, "pruning ratio in [0,1]");
  train->add_option("--alpha", tc.alpha, "soft shrink factor in (0,1)");
  train->add_option("--eta0", tc.eta0, "initial regularization strength");
  train->add_option("--delta", tc.delta, "eta growth ratio");
  train->add_option("--k-eta", tc.k_eta, "eta growth interval");
  train->add_flag("--eta-additive", tc.eta_additive, "grow eta additively instead");
  train->add_option("--k-p", tc.k_p, "pruning-stage iterations");
  train->add_option("--k-ft", tc.k_ft, "fine-tune iterations");
  train->add_option("--mask-seed", tc.mask_seed, "override seed for the random baseline mask");
  train->add_option("--batch", tc.batch, "batch size");
  train->add_option("--patch", tc.patch, "LR patch edge");
  train->add_option("--lr0", tc.lr0, "initial learning rate");
  train->add_option("--half-every", tc.half_every, "halve the learning rate every this many iterations");
  train->add_option("--seed", tc.seed, "run seed (overrides ISSP_SEED and the config)");
  train->add_option("--manifest", tc.manifest, "PPM image list; omit for synthetic data");
  train->add_option("--synth-count", tc.synth_count, "synthetic corpus size");
  train->add_option("--synth-size", tc.synth_size, "synthetic image edge");
  train->add_option("--out", tc.outdir, "output directory");

  EvalCli ec;
  CLI::App* evalc = app.add_subcommand("eval", "score a checkpoint on held-out images");
  evalc->add_option("--checkpoint", ec.checkpoint, "trained checkpoint")->required();
  evalc->add_option("--manifest", ec.manifest, "PPM image list; omit for synthetic data");
  evalc->add_option("--split", ec.split, "train, val, or all");
  evalc->add_option("--synth-count", ec.synth_count, "synthetic corpus size");
  evalc->add_option("--synth-size", ec.synth_size, "synthetic image edge");
  CLI::Option* eval_seed = evalc->add_option("--seed", ec.seed, "synthetic data seed (default: the checkpoint's)");
  evalc->add_option("--out", ec.out_csv, "also write per-image scores as CSV");

  std::string xp_ckpt, xp_out;
  CLI::App* expo = app.add_subcommand("export-sparse", "compress a frozen checkpoint to CSR");
  expo->add_option("--checkpoint", xp_ckpt, "trained checkpoint")->required();
  expo->add_option("--out", xp_out, "sparse model path")->required();

  std::string b_sparse, b_out;
  std::size_t b_size = 256;
  int b_reps = 9;
  std::uint64_t b_seed = 1;
  CLI::App* bench = app.add_subcommand("bench", "time dense vs sparse inference");
  bench->add_option("--sparse", b_sparse, "sparse model file")->required();
  bench->add_option("--size", b_size, "input image edge");
  bench->add_option("--reps", b_reps, "timing repetitions (>= 3)");
  bench->add_option("--seed", b_seed, "input texture seed");
  bench->add_option("--out", b_out, "also write the report as JSON");

  std::string g_arch = "both", g_inject;
  std::uint64_t g_seed = 7;
  std::size_t g_coords = 40;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference audit of the backward pass");
  gc->add_option("--arch", g_arch, "mini_edsr, mini_mlp, or both");
  gc->add_option("--seed", g_seed, "probe seed");
  gc->add_option("--coords", g_coords, "weight coordinates sampled per layer");
  gc->add_option("--inject-fault", g_inject, "corrupt gradients of a layer kind (checker must fail)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(tc, train);
    if (*evalc) {
      ec.seed_given = eval_seed->count() > 0;
      return cmd_eval(ec);
    }
    if (*expo) return cmd_export(xp_ckpt, xp_out);
    if (*bench) return cmd_bench(b_sparse, b_size, b_reps, b_seed, b_out);
    if (*gc) return cmd_gradcheck(g_arch, g_seed, g_coords, g_inject);
  } catch (const issp::ConfigError& e) {
    return fail(kExitConfig, e.what());
  } catch (const issp::Error& e) {
    return fail(is_data_error(e) ? kExitData : kExitFailure, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
  return kExitConfig;
}
