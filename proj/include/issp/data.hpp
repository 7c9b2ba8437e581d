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
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/image.hpp"
#include "issp/rng.hpp"
#include "issp/tensor.hpp"

namespace issp {

// ---------------------------------------------------------------------------
// Synthetic textures

/// Deterministic texture with multi-octave value noise, per-channel linear
/// gradients, and a few hard step edges, so downscaling destroys structure a
/// super-resolver can plausibly recover.  Identical rng state → identical
/// image.
inline ImageU8 synth_texture(Rng& rng, std::size_t h, std::size_t w) {
  if (h < 16 || w < 16) throw TooSmall("synth_texture needs dims >= 16");
  std::vector<double> lum(h * w, 0.0);

  // Value-noise octaves: random lattice values, smoothstep-bilinear blend.
  const std::size_t cells[] = {32, 16, 8, 4};
  const double amps[] = {44.0, 26.0, 14.0, 7.0};
  for (int o = 0; o < 4; ++o) {
    std::size_t cell = cells[o];
    std::size_t ny = h / cell + 2, nx = w / cell + 2;
    std::vector<double> lattice(ny * nx);
    for (double& v : lattice) v = rng.next_unit() * 2.0 - 1.0;
    for (std::size_t y = 0; y < h; ++y) {
      std::size_t gy = y / cell;
      double fy = static_cast<double>(y % cell) / static_cast<double>(cell);
      double sy = fy * fy * (3.0 - 2.0 * fy);
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t gx = x / cell;
        double fx = static_cast<double>(x % cell) / static_cast<double>(cell);
        double sx = fx * fx * (3.0 - 2.0 * fx);
        double v00 = lattice[gy * nx + gx];
        double v01 = lattice[gy * nx + gx + 1];
        double v10 = lattice[(gy + 1) * nx + gx];
        double v11 = lattice[(gy + 1) * nx + gx + 1];
        double v = (v00 * (1 - sx) + v01 * sx) * (1 - sy) +
                   (v10 * (1 - sx) + v11 * sx) * sy;
        lum[y * w + x] += amps[o] * v;
      }
    }
  }

  // Step edges: straight lines with a hard brightness jump across them.
  for (int e = 0; e < 3; ++e) {
    double theta = rng.next_unit() * 2.0 * std::numbers::pi;
    double nxv = std::cos(theta), nyv = std::sin(theta);
    double diag = std::sqrt(static_cast<double>(h * h + w * w));
    double c0 = (rng.next_unit() - 0.5) * diag * 0.8;
    double amp = 18.0 + rng.next_unit() * 30.0;
    if (rng.next_unit() < 0.5) amp = -amp;
    for (std::size_t y = 0; y < h; ++y) {
      double cy = static_cast<double>(y) - static_cast<double>(h) / 2.0;
      for (std::size_t x = 0; x < w; ++x) {
        double cx = static_cast<double>(x) - static_cast<double>(w) / 2.0;
        lum[y * w + x] += (nxv * cx + nyv * cy > c0) ? amp : 0.0;
      }
    }
  }

  // Per-channel linear gradients tint the texture.
  ImageU8 img(h, w);
  for (std::size_t c = 0; c < 3; ++c) {
    double gx = (rng.next_unit() - 0.5) * 90.0 / static_cast<double>(w);
    double gy = (rng.next_unit() - 0.5) * 90.0 / static_cast<double>(h);
    double bias = 110.0 + rng.next_unit() * 40.0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double v = bias + lum[y * w + x] + gx * static_cast<double>(x) +
                   gy * static_cast<double>(y);
        v = std::clamp(v, 0.0, 255.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Bicubic resampling

namespace detail {

/// Keys cubic kernel, a = −0.5 (the convention behind the usual SR
/// benchmark downscaler).
inline double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct ResampleTap {
  std::ptrdiff_t first = 0;
  std::vector<double> weights;
};

/// Per-output-position filter taps along one axis.  When shrinking, the
/// kernel support is widened by the scale factor (anti-aliasing) unless
/// disabled.  Weights are normalized; indices are clamped at apply time,
/// which realizes edge replication.
inline std::vector<ResampleTap> resample_taps(std::size_t in, std::size_t out,
                                              bool antialias) {
  double ratio = static_cast<double>(in) / static_cast<double>(out);
  double scale = (antialias && ratio > 1.0) ? ratio : 1.0;
  double support = 2.0 * scale;
  std::vector<ResampleTap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    double u = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    std::ptrdiff_t first = static_cast<std::ptrdiff_t>(std::ceil(u - support));
    std::ptrdiff_t last = static_cast<std::ptrdiff_t>(std::floor(u + support));
    ResampleTap t;
    t.first = first;
    double sum = 0.0;
    for (std::ptrdiff_t j = first; j <= last; ++j) {
      double wv = keys_cubic((u - static_cast<double>(j)) / scale);
      t.weights.push_back(wv);
      sum += wv;
    }
    for (double& wv : t.weights) wv /= sum;
    taps[i] = std::move(t);
  }
  return taps;
}

}  // namespace detail

/// Bicubic resample to double precision, separably: vertical pass then
/// horizontal pass.  Returned values are on the 0–255 scale, not yet
/// clipped or quantized.
inline Tensor<double> bicubic_resize_double(const ImageU8& img,
                                            std::size_t out_h,
                                            std::size_t out_w,
                                            bool antialias = true) {
  if (out_h < 1 || out_w < 1) throw BadRange("resize target must be >= 1");
  std::size_t h = img.h, w = img.w;
  auto vtaps = detail::resample_taps(h, out_h, antialias);
  auto htaps = detail::resample_taps(w, out_w, antialias);

  Tensor<double> mid({3, out_h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const detail::ResampleTap& t = vtaps[oy];
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          std::ptrdiff_t iy = t.first + static_cast<std::ptrdiff_t>(k);
          iy = std::clamp<std::ptrdiff_t>(iy, 0, static_cast<std::ptrdiff_t>(h) - 1);
          acc += t.weights[k] *
                 static_cast<double>(img.at(static_cast<std::size_t>(iy), x, c));
        }
        mid[(c * out_h + oy) * w + x] = acc;
      }
    }
  }

  Tensor<double> out({3, out_h, out_w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* row = mid.data() + (c * out_h + oy) * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const detail::ResampleTap& t = htaps[ox];
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          std::ptrdiff_t ix = t.first + static_cast<std::ptrdiff_t>(k);
          ix = std::clamp<std::ptrdiff_t>(ix, 0, static_cast<std::ptrdiff_t>(w) - 1);
          acc += t.weights[k] * row[ix];
        }
        out[(c * out_h + oy) * out_w + ox] = acc;
      }
    }
  }
  return out;
}

/// Image-to-image bicubic resize: double internals, clipped to [0,255] and
/// rounded on the way out.
inline ImageU8 bicubic_resize(const ImageU8& img, std::size_t out_h,
                              std::size_t out_w, bool antialias = true) {
  Tensor<double> d = bicubic_resize_double(img, out_h, out_w, antialias);
  ImageU8 out(out_h, out_w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double v = std::clamp(d[(c * out_h + y) * out_w + x], 0.0, 255.0);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Sample pairs, augmentation, patch sampling

struct SamplePair {
  Tensor<float> lr;  // 3×p×p in [0,1]
  Tensor<float> hr;  // 3×(s·p)×(s·p) in [0,1]
  std::string source_id;
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
  std::uint32_t aug_code = 0;
};

namespace detail {

/// The 8 dihedral variants: bit 0 = horizontal flip (applied first),
/// bits 1–2 = number of clockwise quarter turns.
template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, std::uint32_t code) {
  if (x.rank() != 3 || x.dim(1) != x.dim(2)) {
    throw NonSquare("augmentation requires square patches");
  }
  std::size_t c_n = x.dim(0), n = x.dim(1);
  Tensor<T> cur = x;
  if (code & 1u) {
    Tensor<T> f({c_n, n, n});
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          f[(c * n + i) * n + j] = cur[(c * n + i) * n + (n - 1 - j)];
    cur = std::move(f);
  }
  for (std::uint32_t r = 0; r < ((code >> 1) & 3u); ++r) {
    Tensor<T> t({c_n, n, n});
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          t[(c * n + i) * n + j] = cur[(c * n + (n - 1 - j)) * n + i];
    cur = std::move(t);
  }
  return cur;
}

}  // namespace detail

/// Applies one of the 8 flip/rotation variants to both halves of the pair.
inline SamplePair augment_with_code(const SamplePair& pair, std::uint32_t code) {
  SamplePair out = pair;
  out.lr = detail::dihedral(pair.lr, code);
  out.hr = detail::dihedral(pair.hr, code);
  out.aug_code = code;
  return out;
}

/// Uniformly random variant of {0°,90°,180°,270°} × {flip, no-flip}.
inline SamplePair augment(const SamplePair& pair, Rng& rng) {
  return augment_with_code(pair, static_cast<std::uint32_t>(rng.next_below(8)));
}

/// Uniform aligned HR crops with bicubic LR synthesis.  Sample i draws from
/// its own substream of (one draw off `rng`, i), so parallel and serial
/// sampling yield the same batch.
inline std::vector<SamplePair> sample_patches(
    const std::vector<ImageU8>& hr_images, const std::vector<std::string>& ids,
    std::size_t scale, std::size_t p, std::size_t count, Rng& rng) {
  if (hr_images.empty()) throw DataError("sample_patches: no images");
  std::size_t sp = scale * p;
  for (const ImageU8& im : hr_images) {
    if (im.h < sp || im.w < sp) {
      throw ImageTooSmall("image smaller than the HR patch size");
    }
  }
  std::uint64_t base = rng.next_u64();
  std::vector<SamplePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng ri(Rng::mix(base, i));
    std::size_t img_idx = static_cast<std::size_t>(ri.next_below(hr_images.size()));
    const ImageU8& im = hr_images[img_idx];
    std::size_t ay = (im.h - sp) / scale + 1;
    std::size_t ax = (im.w - sp) / scale + 1;
    std::size_t y0 = scale * static_cast<std::size_t>(ri.next_below(ay));
    std::size_t x0 = scale * static_cast<std::size_t>(ri.next_below(ax));

    ImageU8 crop(sp, sp);
    for (std::size_t y = 0; y < sp; ++y)
      for (std::size_t x = 0; x < sp; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          crop.at(y, x, c) = im.at(y0 + y, x0 + x, c);

    SamplePair pair;
    pair.hr = tensor_from_image<float>(crop);
    pair.lr = tensor_from_image<float>(bicubic_resize(crop, p, p));
    pair.source_id = ids.empty() ? std::to_string(img_idx) : ids[img_idx];
    pair.crop_y = y0;
    pair.crop_x = x0;
    out.push_back(std::move(pair));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::vector<ImageU8> train;
  std::vector<std::string> train_ids;
  std::vector<ImageU8> val;
  std::vector<std::string> val_ids;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// Train/val membership from the image id alone, so the split is stable
/// across runs, seeds, and manifest order: roughly one image in eight
/// validates.
inline bool is_validation_id(const std::string& id) {
  // Salt chosen so the default synthetic corpus lands a few images on the
  // validation side rather than an unlucky zero or one.
  constexpr std::uint64_t kSplitSalt = 0x56414c53504c496aull;
  return Rng::mix(detail::fnv1a(id), kSplitSalt) % 8 == 0;
}

inline void dataset_insert(Dataset& ds, ImageU8 img, std::string id) {
  if (is_validation_id(id)) {
    ds.val.push_back(std::move(img));
    ds.val_ids.push_back(std::move(id));
  } else {
    ds.train.push_back(std::move(img));
    ds.train_ids.push_back(std::move(id));
  }
}

/// `count` synthetic HR images named synth0, synth1, …; each image has its
/// own substream of the data seed, so the set is stable under reordering.
inline Dataset synth_dataset(std::size_t count, std::size_t hr_size,
                             std::uint64_t data_seed) {
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    Rng r(Rng::mix(data_seed, 0x53594e54ull + i));  // "SYNT" + index
    dataset_insert(ds, synth_texture(r, hr_size, hr_size),
                   "synth" + std::to_string(i));
  }
  return ds;
}

/// Manifest: a plain text file with one PPM path per line (relative paths
/// resolve against the manifest's directory).
inline Dataset load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest " + manifest_path.string());
  Dataset ds;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = manifest_path.parent_path() / p;
    dataset_insert(ds, load_ppm(p), line);
  }
  if (ds.train.empty() && ds.val.empty()) {
    throw DataError("manifest " + manifest_path.string() + " lists no images");
  }
  return ds;
}

}  // namespace issp
