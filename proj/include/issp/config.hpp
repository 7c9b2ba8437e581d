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

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"

#include "issp/data.hpp"
#include "issp/errors.hpp"
#include "issp/model.hpp"
#include "issp/pruning.hpp"
#include "issp/serialize.hpp"
#include "issp/train.hpp"

namespace issp {

struct DataConfig {
  std::string manifest;          // one image path per line; empty → synthetic
  std::size_t synth_count = 24;  // synthetic corpus size
  std::size_t synth_size = 96;   // synthetic image edge
};

/// Everything one training run needs.  A saved resolved config reproduces
/// the run bit for bit.
struct RunConfig {
  ModelConfig model;
  PruneConfig prune;
  TrainParams train;
  DataConfig data;
  std::string outdir = "run";
};

inline void validate_run_config(const RunConfig& c) {
  validate_model_config(c.model);
  validate_prune_config(c.prune);
  validate_train_params(c.train);
  if (c.model.arch == Arch::mini_mlp && c.train.patch != c.model.mlp_patch) {
    throw ConfigError("mini_mlp requires patch == mlp_patch");
  }
  if (c.data.manifest.empty()) {
    if (c.data.synth_count < 1) throw ConfigError("synth_count must be >= 1");
    if (c.data.synth_size < c.model.scale * c.train.patch) {
      throw ConfigError("synth_size must cover one HR patch");
    }
    if (c.data.synth_size % c.model.scale != 0) {
      throw ConfigError("synth_size must be a multiple of scale");
    }
  }
}

/// `desk` is small enough to iterate on interactively; `paper` is the full
/// half-million-iteration schedule.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    return c;
  }
  if (name == "paper") {
    c.prune.k_p = 100000;
    c.prune.k_ft = 400000;
    c.train.batch = 32;
    c.train.patch = 64;
    c.train.half_every = 250000;
    c.model.mlp_patch = 64;
    c.data.synth_size = 192;
    return c;
  }
  throw ConfigError("unknown preset: " + name);
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["arch"] = arch_name(c.model.arch);
  j["n_blocks"] = c.model.n_blocks;
  j["channels"] = c.model.channels;
  j["scale"] = c.model.scale;
  j["mlp_patch"] = c.model.mlp_patch;
  j["method"] = prune_method_name(c.prune.method);
  j["r"] = c.prune.r;
  j["alpha"] = c.prune.alpha;
  j["eta0"] = c.prune.eta0;
  j["delta"] = c.prune.delta;
  j["k_eta"] = c.prune.k_eta;
  j["eta_additive"] = c.prune.eta_additive;
  j["k_p"] = c.prune.k_p;
  j["k_ft"] = c.prune.k_ft;
  j["k_total"] = c.prune.total_iterations();
  j["mask_seed"] = c.prune.seed;
  j["batch"] = c.train.batch;
  j["patch"] = c.train.patch;
  j["lr0"] = c.train.lr0;
  j["half_every"] = c.train.half_every;
  j["seed"] = c.train.seed;
  j["manifest"] = c.data.manifest;
  j["synth_count"] = c.data.synth_count;
  j["synth_size"] = c.data.synth_size;
  j["outdir"] = c.outdir;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "arch",      "n_blocks",  "channels",    "scale",       "mlp_patch",
      "method",    "r",         "alpha",       "eta0",        "delta",
      "k_eta",     "eta_additive", "k_p",      "k_ft",        "k_total",
      "mask_seed", "batch",     "patch",       "lr0",         "half_every",
      "seed",      "manifest",  "synth_count", "synth_size",  "outdir"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw ConfigError("unknown config key: " + it.key());
    }
  }
  RunConfig c;
  try {
    if (j.contains("arch")) c.model.arch = parse_arch(j.at("arch").get<std::string>());
    if (j.contains("n_blocks")) c.model.n_blocks = j.at("n_blocks").get<std::size_t>();
    if (j.contains("channels")) c.model.channels = j.at("channels").get<std::size_t>();
    if (j.contains("scale")) c.model.scale = j.at("scale").get<std::size_t>();
    if (j.contains("mlp_patch")) c.model.mlp_patch = j.at("mlp_patch").get<std::size_t>();
    if (j.contains("method")) {
      c.prune.method = parse_prune_method(j.at("method").get<std::string>());
    }
    if (j.contains("r")) c.prune.r = j.at("r").get<double>();
    if (j.contains("alpha")) c.prune.alpha = j.at("alpha").get<double>();
    if (j.contains("eta0")) c.prune.eta0 = j.at("eta0").get<double>();
    if (j.contains("delta")) c.prune.delta = j.at("delta").get<double>();
    if (j.contains("k_eta")) c.prune.k_eta = j.at("k_eta").get<std::uint64_t>();
    if (j.contains("eta_additive")) {
      c.prune.eta_additive = j.at("eta_additive").get<bool>();
    }
    if (j.contains("k_p")) c.prune.k_p = j.at("k_p").get<std::uint64_t>();
    if (j.contains("k_ft")) c.prune.k_ft = j.at("k_ft").get<std::uint64_t>();
    if (j.contains("mask_seed")) c.prune.seed = j.at("mask_seed").get<std::uint64_t>();
    if (j.contains("batch")) c.train.batch = j.at("batch").get<std::size_t>();
    if (j.contains("patch")) c.train.patch = j.at("patch").get<std::size_t>();
    if (j.contains("lr0")) c.train.lr0 = j.at("lr0").get<double>();
    if (j.contains("half_every")) {
      c.train.half_every = j.at("half_every").get<std::uint64_t>();
    }
    if (j.contains("seed")) c.train.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("manifest")) c.data.manifest = j.at("manifest").get<std::string>();
    if (j.contains("synth_count")) {
      c.data.synth_count = j.at("synth_count").get<std::size_t>();
    }
    if (j.contains("synth_size")) {
      c.data.synth_size = j.at("synth_size").get<std::size_t>();
    }
    if (j.contains("outdir")) c.outdir = j.at("outdir").get<std::string>();
    if (j.contains("k_total")) {
      std::uint64_t k = j.at("k_total").get<std::uint64_t>();
      if (k != c.prune.total_iterations()) {
        throw ConfigError("k_total must equal k_p + k_ft");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return run_config_from_json(j);
}

/// Writes the fully materialized config (every key explicit) so the run can
/// be replayed from it alone.
inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::string text = run_config_to_json(c).dump(2) + "\n";
  atomic_write_file(path, [&](std::ostream& os) {
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
  });
}

/// Materializes the run's training corpus.
inline Dataset load_dataset(const RunConfig& c) {
  if (!c.data.manifest.empty()) return load_manifest(c.data.manifest);
  std::uint64_t data_seed = Rng::mix(c.train.seed, rng_salt::kData);
  return synth_dataset(c.data.synth_count, c.data.synth_size, data_seed);
}

}  // namespace issp
