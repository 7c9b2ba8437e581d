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
#include <filesystem>
#include <string>
#include <vector>

#include "issp/errors.hpp"
#include "issp/serialize.hpp"
#include "issp/tensor.hpp"

namespace issp {

/// 8-bit interleaved RGB image, row-major.
struct ImageU8 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;  // h*w*3 bytes, RGB RGB ...

  ImageU8() = default;
  ImageU8(std::size_t h_, std::size_t w_) : h(h_), w(w_), data(h_ * w_ * 3, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * w + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * w + x) * 3 + c];
  }
};

namespace detail {

/// PPM header token reader: skips whitespace and '#' comment lines.
inline std::size_t ppm_next_uint(const std::string& s, std::size_t& pos,
                                 const char* what) {
  while (pos < s.size()) {
    char c = s[pos];
    if (c == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= s.size() || s[pos] < '0' || s[pos] > '9') {
    throw Truncated(std::string("PPM header ends before ") + what);
  }
  std::size_t v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace detail

/// Binary PPM ("P6", maxval 255) loader; the one mandatory image format.
inline ImageU8 load_ppm(const std::filesystem::path& path) {
  std::string s = read_file(path);
  if (s.size() < 2 || s[0] != 'P' || s[1] != '6') {
    throw BadMagic(path.string() + ": not a binary PPM (P6) file");
  }
  std::size_t pos = 2;
  std::size_t w = detail::ppm_next_uint(s, pos, "width");
  std::size_t h = detail::ppm_next_uint(s, pos, "height");
  std::size_t maxval = detail::ppm_next_uint(s, pos, "maxval");
  if (maxval != 255) {
    throw BadMaxval(path.string() + ": maxval " + std::to_string(maxval) +
                    " unsupported, expected 255");
  }
  if (pos >= s.size()) throw Truncated(path.string() + ": no pixel data");
  ++pos;  // single whitespace byte separates the header from pixel data
  if (h == 0 || w == 0) throw DataError(path.string() + ": zero image dims");
  std::size_t need = h * w * 3;
  if (s.size() - pos < need) {
    throw Truncated(path.string() + ": pixel data ends early");
  }
  ImageU8 img(h, w);
  std::memcpy(img.data.data(), s.data() + pos, need);
  return img;
}

inline void save_ppm(const ImageU8& img, const std::filesystem::path& path) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
  });
}

/// Image → 3×H×W tensor with values in [0,1].
template <typename T>
Tensor<T> tensor_from_image(const ImageU8& img) {
  Tensor<T> t({3, img.h, img.w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x)
        t[(c * img.h + y) * img.w + x] =
            static_cast<T>(img.at(y, x, c)) / static_cast<T>(255);
  return t;
}

/// [0,1] tensor → image: clip, scale to 255, round half away from zero.
template <typename T>
ImageU8 image_from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeMismatch("image_from_tensor expects a 3×H×W tensor");
  }
  ImageU8 img(t.dim(1), t.dim(2));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) {
        double v = static_cast<double>(t[(c * img.h + y) * img.w + x]) * 255.0;
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
  return img;
}

}  // namespace issp
