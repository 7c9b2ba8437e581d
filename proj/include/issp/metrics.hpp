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
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/image.hpp"
#include "issp/model.hpp"
#include "issp/pruning.hpp"
#include "issp/serialize.hpp"
#include "issp/tensor.hpp"

namespace issp {

/// Luma under the BT.601 studio-swing convention used by the standard SR
/// benchmark scripts: Y = 16 + 65.481·R + 128.553·G + 24.966·B with RGB in
/// [0,1], landing in [16, 235].
inline Tensor<double> rgb_to_y(const ImageU8& img) {
  Tensor<double> y({img.h, img.w});
  for (std::size_t i = 0; i < img.h; ++i) {
    for (std::size_t j = 0; j < img.w; ++j) {
      double r = img.at(i, j, 0) / 255.0;
      double g = img.at(i, j, 1) / 255.0;
      double b = img.at(i, j, 2) / 255.0;
      y[i * img.w + j] = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b;
    }
  }
  return y;
}

/// Peak signal-to-noise ratio in dB after cropping `border_crop` pixels per
/// side.  Identical inputs return the +inf sentinel rather than overflowing.
inline double psnr(const Tensor<double>& a, const Tensor<double>& b,
                   double peak = 255.0, std::size_t border_crop = 0) {
  if (!a.same_shape(b)) throw ShapeMismatch("psnr inputs differ in shape");
  if (a.rank() != 2) throw ShapeMismatch("psnr expects H×W tensors");
  std::size_t h = a.dim(0), w = a.dim(1);
  std::size_t half = std::min(h, w) / 2;
  if (border_crop >= half && border_crop > 0) {
    throw CropTooLarge("border crop must be below half the smaller dimension");
  }
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = border_crop; i < h - border_crop; ++i) {
    for (std::size_t j = border_crop; j < w - border_crop; ++j) {
      double d = a[i * w + j] - b[i * w + j];
      se += d * d;
      ++n;
    }
  }
  double mse = se / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> win = [] {
    constexpr int kEdge = 11;
    constexpr double kSigma = 1.5;
    std::vector<double> w(kEdge * kEdge);
    double sum = 0.0;
    for (int i = 0; i < kEdge; ++i) {
      for (int j = 0; j < kEdge; ++j) {
        double dy = i - 5, dx = j - 5;
        double v = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
        w[i * kEdge + j] = v;
        sum += v;
      }
    }
    for (double& v : w) v /= sum;
    return w;
  }();
  return win;
}

}  // namespace detail

/// Mean structural similarity over all valid 11×11 windows (Gaussian
/// weights, σ=1.5), on the 0–255 scale: C1=(0.01·255)², C2=(0.03·255)².
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim inputs differ in shape");
  if (a.rank() != 2) throw ShapeMismatch("ssim expects H×W tensors");
  constexpr std::size_t kEdge = 11;
  std::size_t h = a.dim(0), w = a.dim(1);
  if (h < kEdge || w < kEdge) {
    throw TooSmall("ssim requires dims of at least 11");
  }
  const std::vector<double>& win = detail::ssim_window();
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t oy = 0; oy + kEdge <= h; ++oy) {
    for (std::size_t ox = 0; ox + kEdge <= w; ++ox) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t i = 0; i < kEdge; ++i) {
        for (std::size_t j = 0; j < kEdge; ++j) {
          double wv = win[i * kEdge + j];
          double av = a[(oy + i) * w + ox + j];
          double bv = b[(oy + i) * w + ox + j];
          ma += wv * av;
          mb += wv * bv;
          saa += wv * av * av;
          sbb += wv * bv * bv;
          sab += wv * av * bv;
        }
      }
      double va = saa - ma * ma;
      double vb = sbb - mb * mb;
      double cov = sab - ma * mb;
      double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

/// Permille of positions whose important/unimportant designation changed
/// between two selections of the same layer.  The comparison is on the
/// partition, not on attenuated mask values: a twice-shrunk weight that
/// stayed unimportant has not flipped.
inline double flip_permille(const std::vector<std::uint8_t>& prev,
                            const std::vector<std::uint8_t>& curr) {
  if (prev.size() != curr.size() || prev.empty()) {
    throw ShapeMismatch("flip_permille masks differ in length");
  }
  std::size_t changed = 0;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    changed += (prev[i] != curr[i]) ? 1u : 0u;
  }
  return 1000.0 * static_cast<double>(changed) / static_cast<double>(prev.size());
}

inline double flip_permille(const LayerMask& prev, const LayerMask& curr) {
  return flip_permille(prev.designated, curr.designated);
}

struct GradStats {
  double l2 = 0.0;
  double var = 0.0;
};

/// Gradient L2 norm and population variance, the two trainability traces.
/// Two-pass variance in double keeps the l2² = n·(var + mean²) identity
/// tight enough to re-derive one from the other.
template <typename T>
GradStats grad_stats(const Tensor<T>& grad) {
  std::size_t n = grad.numel();
  const T* g = grad.data();
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = static_cast<double>(g[i]);
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(g[i]) - mean;
    acc += d * d;
  }
  GradStats s;
  s.l2 = std::sqrt(sumsq);
  s.var = acc / static_cast<double>(n);
  return s;
}

/// Fraction of exactly-zero weights per prunable layer under a frozen mask.
template <typename T>
std::vector<double> sparsity_audit(const Model<T>& model, const MaskState& ms) {
  if (!ms.frozen) throw NotFrozen("sparsity_audit requires frozen masks");
  std::vector<double> out;
  for (std::size_t i = 0; i < model.num_param_layers(); ++i) {
    const Tensor<T>& w = model.param_layer(i).p.w;
    std::size_t zeros = 0;
    for (std::size_t j = 0; j < w.numel(); ++j) {
      if (w[j] == T{}) ++zeros;
    }
    out.push_back(static_cast<double>(zeros) / static_cast<double>(w.numel()));
  }
  return out;
}

/// Current fraction of exactly-zero weights, regardless of freeze state;
/// what the per-iteration metric rows report.
template <typename T>
double zero_fraction(const Tensor<T>& w) {
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < w.numel(); ++j) {
    if (w[j] == T{}) ++zeros;
  }
  return static_cast<double>(zeros) / static_cast<double>(w.numel());
}

struct MetricRow {
  std::uint64_t k = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::string layer;
  double flips_permille = 0.0;
  double grad_l2 = 0.0;
  double grad_var = 0.0;
  double zero_fraction = 0.0;
};

/// In-memory metric log with a fixed CSV rendering: 9 significant digits,
/// LF endings, one row per (iteration, layer).  The file lands on disk in
/// one atomic write.
class MetricLog {
 public:
  void append(const MetricRow& row) { rows_.push_back(row); }

  const std::vector<MetricRow>& rows() const { return rows_; }

  static const char* csv_header() {
    return "k,loss,lr,layer,flips_permille,grad_l2,grad_var,zero_fraction";
  }

  std::string to_csv() const {
    std::string out(csv_header());
    out.push_back('\n');
    char buf[256];
    for (const MetricRow& r : rows_) {
      std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,",
                    static_cast<unsigned long long>(r.k), r.loss, r.lr);
      out += buf;
      out += r.layer;
      std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%.9g\n",
                    r.flips_permille, r.grad_l2, r.grad_var, r.zero_fraction);
      out += buf;
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::string csv = to_csv();
    atomic_write_file(path, [&](std::ostream& os) {
      os.write(csv.data(), static_cast<std::streamsize>(csv.size()));
    });
  }

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace issp
