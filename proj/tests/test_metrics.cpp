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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "issp/metrics.hpp"
#include "issp/model.hpp"
#include "issp/pruning.hpp"
#include "issp/rng.hpp"

namespace issp {
namespace {

ImageU8 solid(std::size_t h, std::size_t w, std::uint8_t r, std::uint8_t g,
              std::uint8_t b) {
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.data.resize(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    img.data[3 * i + 0] = r;
    img.data[3 * i + 1] = g;
    img.data[3 * i + 2] = b;
  }
  return img;
}

Tensor<double> random_plane(Rng& rng, std::size_t h, std::size_t w, double lo,
                            double hi) {
  Tensor<double> t({h, w});
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = lo + (hi - lo) * rng.next_unit();
  }
  return t;
}

// Independent SSIM reference: same Gaussian window, but every per-window
// moment computed the two-pass way, as the textbook definition writes it.
double ssim_reference(const Tensor<double>& a, const Tensor<double>& b) {
  const int kEdge = 11;
  std::vector<double> win(kEdge * kEdge);
  double wsum = 0.0;
  for (int i = 0; i < kEdge; ++i) {
    for (int j = 0; j < kEdge; ++j) {
      double dy = i - 5, dx = j - 5;
      win[i * kEdge + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      wsum += win[i * kEdge + j];
    }
  }
  for (double& v : win) v /= wsum;

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  std::size_t h = a.dim(0), w = a.dim(1);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t oy = 0; oy + kEdge <= h; ++oy) {
    for (std::size_t ox = 0; ox + kEdge <= w; ++ox) {
      double ma = 0.0, mb = 0.0;
      for (int i = 0; i < kEdge; ++i) {
        for (int j = 0; j < kEdge; ++j) {
          double wv = win[i * kEdge + j];
          ma += wv * a[(oy + i) * w + ox + j];
          mb += wv * b[(oy + i) * w + ox + j];
        }
      }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int i = 0; i < kEdge; ++i) {
        for (int j = 0; j < kEdge; ++j) {
          double wv = win[i * kEdge + j];
          double da = a[(oy + i) * w + ox + j] - ma;
          double db = b[(oy + i) * w + ox + j] - mb;
          va += wv * da * da;
          vb += wv * db * db;
          cov += wv * da * db;
        }
      }
      double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("rgb_to_y endpoints and ordering", "[metrics]") {
  Tensor<double> black = rgb_to_y(solid(3, 4, 0, 0, 0));
  Tensor<double> white = rgb_to_y(solid(3, 4, 255, 255, 255));
  Tensor<double> red = rgb_to_y(solid(3, 4, 255, 0, 0));
  Tensor<double> green = rgb_to_y(solid(3, 4, 0, 255, 0));
  REQUIRE(black.dim(0) == 3);
  REQUIRE(black.dim(1) == 4);
  for (std::size_t i = 0; i < black.numel(); ++i) {
    REQUIRE(black[i] == Catch::Approx(16.0).margin(1e-6));
    REQUIRE(white[i] == Catch::Approx(235.0).margin(1e-6));
  }
  REQUIRE(green[0] > red[0]);
}

TEST_CASE("psnr sentinel, offset value, and invariances", "[metrics]") {
  Rng rng(101);
  Tensor<double> a = random_plane(rng, 12, 9, 0.0, 255.0);

  SECTION("identical inputs return +inf") {
    REQUIRE(std::isinf(psnr(a, a)));
    REQUIRE(psnr(a, a) > 0.0);
  }

  SECTION("constant offset of 16 lands at 24.05 dB") {
    Tensor<double> b = a;
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] += 16.0;
    REQUIRE(psnr(a, b) == Catch::Approx(24.05).margin(0.01));
    // Closed form for comparison: 10·log10(255²/16²).
    REQUIRE(psnr(a, b) ==
            Catch::Approx(10.0 * std::log10(65025.0 / 256.0)).margin(1e-12));
  }

  SECTION("permuting both images together changes nothing") {
    Tensor<double> b = random_plane(rng, 12, 9, 0.0, 255.0);
    std::vector<std::size_t> perm(a.numel());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.next_below(i)]);
    }
    Tensor<double> ap({12, 9}), bp({12, 9});
    for (std::size_t i = 0; i < perm.size(); ++i) {
      ap[i] = a[perm[i]];
      bp[i] = b[perm[i]];
    }
    REQUIRE(psnr(ap, bp) == Catch::Approx(psnr(a, b)).epsilon(1e-12));
  }

  SECTION("symmetry") {
    Tensor<double> b = random_plane(rng, 12, 9, 0.0, 255.0);
    REQUIRE(psnr(a, b) == psnr(b, a));
  }

  SECTION("border crop restricts the comparison region") {
    // Corrupt only the border; a 1-pixel crop must ignore it entirely.
    Tensor<double> b = a;
    for (std::size_t j = 0; j < 9; ++j) b[j] += 40.0;
    REQUIRE(psnr(a, b, 255.0, 1) == std::numeric_limits<double>::infinity());
    REQUIRE(psnr(a, b) < 40.0);
  }

  SECTION("contract violations") {
    Tensor<double> small({4, 4});
    REQUIRE_THROWS_AS(psnr(a, small), ShapeMismatch);
    REQUIRE_THROWS_AS(psnr(small, small, 255.0, 2), CropTooLarge);
    Tensor<double> flat({12 * 9});
    REQUIRE_THROWS_AS(psnr(flat, flat), ShapeMismatch);
  }
}

TEST_CASE("ssim fixed points and bounds", "[metrics]") {
  Rng rng(202);
  Tensor<double> a = random_plane(rng, 16, 16, 0.0, 255.0);

  SECTION("self similarity is exactly one") {
    REQUIRE(ssim(a, a) == Catch::Approx(1.0).margin(1e-9));
  }

  SECTION("constant offset gives a value strictly inside (0,1)") {
    Tensor<double> shifted = random_plane(rng, 16, 16, 0.0, 200.0);
    Tensor<double> b = shifted;
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] += 16.0;
    double v = ssim(shifted, b);
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }

  SECTION("minimum size is 11") {
    Tensor<double> tiny({10, 30});
    REQUIRE_THROWS_AS(ssim(tiny, tiny), TooSmall);
    Tensor<double> eleven = random_plane(rng, 11, 11, 0.0, 255.0);
    REQUIRE(std::isfinite(ssim(eleven, eleven)));
  }

  SECTION("shape mismatch") {
    Tensor<double> other({16, 17});
    REQUIRE_THROWS_AS(ssim(a, other), ShapeMismatch);
  }
}

TEST_CASE("ssim agrees with the two-pass per-window reference", "[metrics]") {
  Rng rng(303);
  for (int trial = 0; trial < 6; ++trial) {
    Tensor<double> a = random_plane(rng, 16, 16, 0.0, 255.0);
    Tensor<double> b = random_plane(rng, 16, 16, 0.0, 255.0);
    CAPTURE(trial);
    REQUIRE(ssim(a, b) == Catch::Approx(ssim_reference(a, b)).margin(1e-8));
    // Correlated pair: closer to 1, still matching the reference.
    Tensor<double> c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) {
      c[i] = std::clamp(c[i] + 8.0 * (rng.next_unit() - 0.5), 0.0, 255.0);
    }
    REQUIRE(ssim(a, c) == Catch::Approx(ssim_reference(a, c)).margin(1e-8));
    REQUIRE(ssim(a, c) > ssim(a, b));
  }
}

TEST_CASE("flip permille counts partition changes", "[metrics]") {
  std::vector<std::uint8_t> keep = {0, 0, 1, 1};
  REQUIRE(flip_permille(keep, keep) == 0.0);
  std::vector<std::uint8_t> half = {0, 1, 0, 1};
  REQUIRE(flip_permille(keep, half) == 500.0);
  std::vector<std::uint8_t> inverted = {1, 1, 0, 0};
  REQUIRE(flip_permille(keep, inverted) == 1000.0);

  std::vector<std::uint8_t> shorter = {0, 1};
  REQUIRE_THROWS_AS(flip_permille(keep, shorter), ShapeMismatch);
  std::vector<std::uint8_t> empty;
  REQUIRE_THROWS_AS(flip_permille(empty, empty), ShapeMismatch);

  LayerMask ma, mb;
  ma.n = mb.n = 4;
  ma.designated = keep;
  mb.designated = half;
  REQUIRE(flip_permille(ma, mb) == 500.0);
}

TEST_CASE("grad stats identity", "[metrics]") {
  SECTION("hand example") {
    Tensor<float> g = Tensor<float>::from({2}, {3.0f, 4.0f});
    GradStats s = grad_stats(g);
    REQUIRE(s.l2 == Catch::Approx(5.0).epsilon(1e-12));
    REQUIRE(s.var == Catch::Approx(0.25).epsilon(1e-12));
  }

  SECTION("constant gradient has zero variance") {
    Tensor<double> g = Tensor<double>::full({17}, 2.5);
    GradStats s = grad_stats(g);
    REQUIRE(s.var == 0.0);
    REQUIRE(s.l2 == Catch::Approx(2.5 * std::sqrt(17.0)).epsilon(1e-12));
  }

  SECTION("l2 squared equals n·(var + mean²)") {
    Rng rng(404);
    for (std::size_t n : {3, 64, 1000}) {
      Tensor<double> g({n});
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = rng.next_unit() * 2.0 - 0.7;
        sum += g[i];
      }
      double mean = sum / static_cast<double>(n);
      GradStats s = grad_stats(g);
      double lhs = s.l2 * s.l2;
      double rhs = static_cast<double>(n) * (s.var + mean * mean);
      CAPTURE(n);
      REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-9));
    }
  }
}

TEST_CASE("zero fraction and sparsity audit", "[metrics]") {
  Tensor<float> w = Tensor<float>::from({4}, {0.0f, 1.0f, 0.0f, -2.0f});
  REQUIRE(zero_fraction(w) == 0.5);
  REQUIRE(zero_fraction(Tensor<float>::zeros({3})) == 1.0);

  ModelConfig cfg;
  cfg.channels = 4;
  Model<float> model(cfg);
  Rng rng(Rng::mix(9, rng_salt::kInit));
  init_params(model, rng);
  MaskState ms = make_mask_state(model);
  REQUIRE_THROWS_AS(sparsity_audit(model, ms), NotFrozen);

  double r = 0.9;
  freeze_masks(model, ms, r);
  std::vector<double> audit = sparsity_audit(model, ms);
  REQUIRE(audit.size() == model.num_param_layers());
  for (std::size_t l = 0; l < audit.size(); ++l) {
    std::size_t n = model.param_layer(l).p.w.numel();
    double expect = static_cast<double>(pruned_count_for(r, n)) /
                    static_cast<double>(n);
    REQUIRE(audit[l] >= expect);
    REQUIRE(audit[l] == Catch::Approx(expect).margin(1e-3));
  }
}

TEST_CASE("metric log CSV rendering", "[metrics]") {
  MetricLog log;
  MetricRow row;
  row.k = 12;
  row.loss = 0.123456789123;
  row.lr = 2e-4;
  row.layer = "head";
  row.flips_permille = 500.0;
  row.grad_l2 = 1.5;
  row.grad_var = 0.0625;
  row.zero_fraction = 0.95;
  log.append(row);
  row.k = 13;
  row.layer = "tail";
  row.loss = 3.0;
  log.append(row);

  REQUIRE(std::string(MetricLog::csv_header()) ==
          "k,loss,lr,layer,flips_permille,grad_l2,grad_var,zero_fraction");

  std::string csv = log.to_csv();
  REQUIRE(csv.find('\r') == std::string::npos);
  REQUIRE(csv.back() == '\n');

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    lines.push_back(csv.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 3);
  REQUIRE(lines[0] == MetricLog::csv_header());
  REQUIRE(lines[1] == "12,0.123456789,0.0002,head,500,1.5,0.0625,0.95");
  REQUIRE(lines[2] == "13,3,0.0002,tail,500,1.5,0.0625,0.95");

  SECTION("save is atomic and byte-identical to to_csv") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "issp_metrics_test";
    fs::create_directories(dir);
    fs::path file = dir / "metrics.csv";
    log.save(file);
    REQUIRE(fs::exists(file));
    std::ifstream in(file, std::ios::binary);
    std::string disk((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    REQUIRE(disk == csv);
    bool leftover = false;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".tmp") leftover = true;
    }
    REQUIRE_FALSE(leftover);
    fs::remove_all(dir);
  }
}

}  // namespace issp
