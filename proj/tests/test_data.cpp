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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "issp/data.hpp"
#include "issp/image.hpp"
#include "issp/rng.hpp"

namespace fs = std::filesystem;

namespace issp {
namespace {

fs::path scratch_dir(const char* leaf) {
  fs::path dir = fs::temp_directory_path() / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool images_equal(const ImageU8& a, const ImageU8& b) {
  return a.h == b.h && a.w == b.w && a.data == b.data;
}

}  // namespace

TEST_CASE("ppm round-trip and header format", "[data]") {
  fs::path dir = scratch_dir("issp_ppm_test");
  Rng rng(11);
  ImageU8 img = synth_texture(rng, 20, 17);
  fs::path file = dir / "img.ppm";
  save_ppm(img, file);

  ImageU8 back = load_ppm(file);
  REQUIRE(images_equal(img, back));

  std::ifstream in(file, std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  REQUIRE(raw.substr(0, 13) == "P6\n17 20\n255\n");
  REQUIRE(raw.size() == 13 + 20 * 17 * 3);

  bool leftover = false;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".tmp") leftover = true;
  }
  REQUIRE_FALSE(leftover);
  fs::remove_all(dir);
}

TEST_CASE("ppm loader tolerates header comments", "[data]") {
  fs::path dir = scratch_dir("issp_ppm_comments");
  std::string body(2 * 3 * 3, '\0');
  for (std::size_t i = 0; i < body.size(); ++i) {
    body[i] = static_cast<char>(i + 1);
  }
  write_bytes(dir / "c.ppm",
              "P6\n# made by hand\n3 # width first\n2\n# almost there\n255\n" +
                  body);
  ImageU8 img = load_ppm(dir / "c.ppm");
  REQUIRE(img.w == 3);
  REQUIRE(img.h == 2);
  REQUIRE(img.at(0, 0, 0) == 1);
  REQUIRE(img.at(1, 2, 2) == 18);
  fs::remove_all(dir);
}

TEST_CASE("ppm loader error taxonomy", "[data]") {
  fs::path dir = scratch_dir("issp_ppm_errors");
  std::string pixels(4 * 4 * 3, '\x7f');

  write_bytes(dir / "p5.ppm", "P5\n4 4\n255\n" + pixels);
  REQUIRE_THROWS_AS(load_ppm(dir / "p5.ppm"), BadMagic);

  write_bytes(dir / "deep.ppm", "P6\n4 4\n65535\n" + pixels);
  REQUIRE_THROWS_AS(load_ppm(dir / "deep.ppm"), BadMaxval);

  write_bytes(dir / "short.ppm", "P6\n4 4\n255\n" + pixels.substr(0, 10));
  REQUIRE_THROWS_AS(load_ppm(dir / "short.ppm"), Truncated);

  write_bytes(dir / "header.ppm", "P6\n4");
  REQUIRE_THROWS_AS(load_ppm(dir / "header.ppm"), Truncated);

  REQUIRE_THROWS_AS(load_ppm(dir / "absent.ppm"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("image/tensor conversions", "[data]") {
  ImageU8 img(2, 2);
  img.at(0, 0, 0) = 255;
  img.at(0, 1, 1) = 128;
  img.at(1, 0, 2) = 51;

  Tensor<float> t = tensor_from_image<float>(img);
  REQUIRE(t.shape() == std::vector<std::size_t>{3, 2, 2});
  REQUIRE(t[(0 * 2 + 0) * 2 + 0] == 1.0f);
  REQUIRE(t[(1 * 2 + 0) * 2 + 1] == 128.0f / 255.0f);
  REQUIRE(t[(2 * 2 + 1) * 2 + 0] == 51.0f / 255.0f);
  REQUIRE(t[(0 * 2 + 1) * 2 + 1] == 0.0f);

  ImageU8 back = image_from_tensor(t);
  REQUIRE(images_equal(img, back));

  SECTION("out-of-range values clip") {
    Tensor<float> wild({3, 1, 1});
    wild[0] = -0.5f;
    wild[1] = 2.0f;
    wild[2] = 0.5f;
    ImageU8 clipped = image_from_tensor(wild);
    REQUIRE(clipped.at(0, 0, 0) == 0);
    REQUIRE(clipped.at(0, 0, 1) == 255);
    REQUIRE(clipped.at(0, 0, 2) == 128);  // 127.5 rounds half away from zero
  }

  SECTION("wrong channel count") {
    Tensor<float> gray({1, 4, 4});
    REQUIRE_THROWS_AS(image_from_tensor(gray), ShapeMismatch);
  }
}

TEST_CASE("synthetic textures are a pure function of the rng", "[data]") {
  Rng a(77), b(77), c(78);
  ImageU8 ia = synth_texture(a, 32, 24);
  ImageU8 ib = synth_texture(b, 32, 24);
  ImageU8 ic = synth_texture(c, 32, 24);
  REQUIRE(ia.h == 32);
  REQUIRE(ia.w == 24);
  REQUIRE(images_equal(ia, ib));
  REQUIRE_FALSE(images_equal(ia, ic));

  // Not degenerate: some spread in values.
  std::set<std::uint8_t> distinct(ia.data.begin(), ia.data.end());
  REQUIRE(distinct.size() > 16);

  Rng tiny(1);
  REQUIRE_THROWS_AS(synth_texture(tiny, 15, 32), TooSmall);
  REQUIRE_THROWS_AS(synth_texture(tiny, 32, 15), TooSmall);
}

TEST_CASE("bicubic resampling fixed points", "[data]") {
  SECTION("constant image stays constant at any size") {
    ImageU8 img(16, 16);
    for (auto& v : img.data) v = 99;
    const std::vector<std::pair<std::size_t, std::size_t>> sizes = {
        {8, 8}, {16, 16}, {23, 31}, {32, 32}};
    for (auto [oh, ow] : sizes) {
      Tensor<double> out = bicubic_resize_double(img, oh, ow);
      for (std::size_t i = 0; i < out.numel(); ++i) {
        REQUIRE(out[i] == Catch::Approx(99.0).margin(1e-9));
      }
    }
  }

  SECTION("identity size reproduces the pixels exactly") {
    Rng rng(5);
    ImageU8 img = synth_texture(rng, 17, 19);
    Tensor<double> out = bicubic_resize_double(img, 17, 19);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 17; ++y)
        for (std::size_t x = 0; x < 19; ++x) {
          REQUIRE(out[(c * 17 + y) * 19 + x] ==
                  Catch::Approx(static_cast<double>(img.at(y, x, c)))
                      .margin(1e-9));
        }
  }

  SECTION("upscaling a linear ramp reproduces the ramp in the interior") {
    ImageU8 img(8, 32);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.at(y, x, c) = static_cast<std::uint8_t>(3 * x + 10);
    Tensor<double> up = bicubic_resize_double(img, 8, 64);
    double ratio = 0.5;
    for (std::size_t ox = 8; ox < 56; ++ox) {
      double u = (static_cast<double>(ox) + 0.5) * ratio - 0.5;
      double expect = 3.0 * u + 10.0;
      REQUIRE(up[ox] == Catch::Approx(expect).margin(1e-9));
    }
  }

  SECTION("anti-aliasing changes a downscale but not an upscale") {
    Rng rng(9);
    ImageU8 img = synth_texture(rng, 32, 32);
    Tensor<double> down_aa = bicubic_resize_double(img, 16, 16, true);
    Tensor<double> down_raw = bicubic_resize_double(img, 16, 16, false);
    bool differ = false;
    for (std::size_t i = 0; i < down_aa.numel(); ++i) {
      if (down_aa[i] != down_raw[i]) differ = true;
    }
    REQUIRE(differ);

    Tensor<double> up_aa = bicubic_resize_double(img, 64, 64, true);
    Tensor<double> up_raw = bicubic_resize_double(img, 64, 64, false);
    for (std::size_t i = 0; i < up_aa.numel(); ++i) {
      REQUIRE(up_aa[i] == up_raw[i]);
    }
  }

  SECTION("u8 resize is the clipped rounding of the double resize") {
    Rng rng(13);
    ImageU8 img = synth_texture(rng, 24, 24);
    Tensor<double> d = bicubic_resize_double(img, 12, 12);
    ImageU8 u = bicubic_resize(img, 12, 12);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x) {
          double v = std::clamp(d[(c * 12 + y) * 12 + x], 0.0, 255.0);
          REQUIRE(u.at(y, x, c) == static_cast<std::uint8_t>(std::lround(v)));
        }
  }

  SECTION("degenerate target") {
    ImageU8 img(16, 16);
    REQUIRE_THROWS_AS(bicubic_resize_double(img, 0, 8), BadRange);
  }
}

TEST_CASE("dihedral augmentation variants", "[data]") {
  Tensor<float> x = Tensor<float>::from({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});

  auto flat = [](const Tensor<float>& t) {
    return std::vector<float>(t.data(), t.data() + t.numel());
  };

  REQUIRE(flat(detail::dihedral(x, 0)) == std::vector<float>{1, 2, 3, 4});
  REQUIRE(flat(detail::dihedral(x, 1)) == std::vector<float>{2, 1, 4, 3});
  REQUIRE(flat(detail::dihedral(x, 2)) == std::vector<float>{3, 1, 4, 2});
  REQUIRE(flat(detail::dihedral(x, 4)) == std::vector<float>{4, 3, 2, 1});
  REQUIRE(flat(detail::dihedral(x, 6)) == std::vector<float>{2, 4, 1, 3});

  SECTION("the 8 codes are distinct on an asymmetric patch") {
    Tensor<float> p = Tensor<float>::from(
        {1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::set<std::vector<float>> seen;
    for (std::uint32_t code = 0; code < 8; ++code) {
      seen.insert(flat(detail::dihedral(p, code)));
    }
    REQUIRE(seen.size() == 8);
  }

  SECTION("flip twice and rotate four times are identities") {
    Tensor<float> once = detail::dihedral(x, 1);
    REQUIRE(flat(detail::dihedral(once, 1)) == flat(x));
    Tensor<float> turned = x;
    for (int i = 0; i < 4; ++i) turned = detail::dihedral(turned, 2);
    REQUIRE(flat(turned) == flat(x));
  }

  SECTION("multi-channel moves channels together") {
    Tensor<float> two = Tensor<float>::from(
        {2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor<float> f = detail::dihedral(two, 1);
    REQUIRE(flat(f) == std::vector<float>{2, 1, 4, 3, 20, 10, 40, 30});
  }

  SECTION("rectangular patches are rejected") {
    Tensor<float> rect({1, 2, 3});
    REQUIRE_THROWS_AS(detail::dihedral(rect, 2), NonSquare);
  }

  SECTION("augment_with_code transforms both halves coherently") {
    SamplePair pair;
    pair.lr = x;
    pair.hr = Tensor<float>::from(
        {1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    pair.source_id = "p";
    SamplePair out = augment_with_code(pair, 3);
    REQUIRE(out.aug_code == 3);
    REQUIRE(flat(out.lr) == flat(detail::dihedral(x, 3)));
    REQUIRE(flat(out.hr) == flat(detail::dihedral(pair.hr, 3)));
    REQUIRE(out.source_id == "p");

    Rng r1(3), r2(3);
    SamplePair a = augment(pair, r1);
    SamplePair b = augment(pair, r2);
    REQUIRE(a.aug_code == b.aug_code);
    REQUIRE(a.aug_code < 8);
    REQUIRE(flat(a.hr) == flat(b.hr));
  }
}

TEST_CASE("patch sampling alignment and determinism", "[data]") {
  Rng tex(21);
  std::vector<ImageU8> imgs;
  imgs.push_back(synth_texture(tex, 48, 40));
  imgs.push_back(synth_texture(tex, 52, 48));
  std::vector<std::string> ids = {"a", "b"};
  const std::size_t scale = 2, p = 8, sp = scale * p;

  Rng r1(33), r2(33);
  std::vector<SamplePair> batch = sample_patches(imgs, ids, scale, p, 6, r1);
  std::vector<SamplePair> again = sample_patches(imgs, ids, scale, p, 6, r2);
  REQUIRE(batch.size() == 6);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SamplePair& s = batch[i];
    CAPTURE(i);
    REQUIRE(s.crop_y % scale == 0);
    REQUIRE(s.crop_x % scale == 0);
    REQUIRE((s.source_id == "a" || s.source_id == "b"));
    const ImageU8& src = s.source_id == "a" ? imgs[0] : imgs[1];
    REQUIRE(s.crop_y + sp <= src.h);
    REQUIRE(s.crop_x + sp <= src.w);
    REQUIRE(s.hr.shape() == std::vector<std::size_t>{3, sp, sp});
    REQUIRE(s.lr.shape() == std::vector<std::size_t>{3, p, p});

    // HR is the exact crop; LR is the bicubic shrink of that crop.
    ImageU8 crop(sp, sp);
    for (std::size_t y = 0; y < sp; ++y)
      for (std::size_t x = 0; x < sp; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          crop.at(y, x, c) = src.at(s.crop_y + y, s.crop_x + x, c);
    Tensor<float> hr_ref = tensor_from_image<float>(crop);
    Tensor<float> lr_ref = tensor_from_image<float>(bicubic_resize(crop, p, p));
    for (std::size_t j = 0; j < hr_ref.numel(); ++j) REQUIRE(s.hr[j] == hr_ref[j]);
    for (std::size_t j = 0; j < lr_ref.numel(); ++j) REQUIRE(s.lr[j] == lr_ref[j]);

    REQUIRE(again[i].crop_y == s.crop_y);
    REQUIRE(again[i].crop_x == s.crop_x);
    REQUIRE(again[i].source_id == s.source_id);
  }

  SECTION("both images get sampled eventually") {
    Rng r(1);
    std::set<std::string> seen;
    for (const SamplePair& s : sample_patches(imgs, ids, scale, p, 64, r)) {
      seen.insert(s.source_id);
    }
    REQUIRE(seen.size() == 2);
  }

  SECTION("error paths") {
    Rng r(2);
    std::vector<ImageU8> none;
    REQUIRE_THROWS_AS(sample_patches(none, {}, scale, p, 1, r), DataError);
    std::vector<ImageU8> small = {ImageU8(15, 48)};
    REQUIRE_THROWS_AS(sample_patches(small, {"s"}, scale, p, 1, r),
                      ImageTooSmall);
  }
}

TEST_CASE("validation split is stable and id-driven", "[data]") {
  // Membership is a pure function of the id string.
  for (int i = 0; i < 3; ++i) {
    REQUIRE(is_validation_id("synth1"));
    REQUIRE(is_validation_id("synth3"));
    REQUIRE(is_validation_id("synth12"));
    REQUIRE_FALSE(is_validation_id("synth0"));
  }
  std::size_t val_count = 0;
  for (int i = 0; i < 24; ++i) {
    if (is_validation_id("synth" + std::to_string(i))) ++val_count;
  }
  REQUIRE(val_count == 3);
}

TEST_CASE("synthetic dataset assembly", "[data]") {
  Dataset ds = synth_dataset(24, 96, 7);
  REQUIRE(ds.train.size() == 21);
  REQUIRE(ds.val.size() == 3);
  REQUIRE(ds.train_ids.size() == 21);
  REQUIRE(ds.val_ids == std::vector<std::string>{"synth1", "synth3", "synth12"});
  REQUIRE(ds.train_ids.front() == "synth0");
  for (const ImageU8& im : ds.train) {
    REQUIRE(im.h == 96);
    REQUIRE(im.w == 96);
  }

  Dataset ds2 = synth_dataset(24, 96, 7);
  REQUIRE(images_equal(ds.train[0], ds2.train[0]));
  REQUIRE(images_equal(ds.val[2], ds2.val[2]));

  Dataset other = synth_dataset(24, 96, 8);
  REQUIRE_FALSE(images_equal(ds.train[0], other.train[0]));

  // Image i does not depend on how many images precede it.
  Dataset prefix = synth_dataset(3, 96, 7);
  REQUIRE(images_equal(prefix.train[0], ds.train[0]));
  REQUIRE(images_equal(prefix.val[0], ds.val[0]));
}

TEST_CASE("manifest loading", "[data]") {
  fs::path dir = scratch_dir("issp_manifest_test");
  Rng rng(31);
  ImageU8 a = synth_texture(rng, 32, 32);
  ImageU8 b = synth_texture(rng, 40, 32);
  ImageU8 c = synth_texture(rng, 32, 40);
  save_ppm(a, dir / "a.ppm");
  save_ppm(b, dir / "b.ppm");
  fs::create_directories(dir / "sub");
  save_ppm(c, dir / "sub" / "c.ppm");

  write_bytes(dir / "list.txt",
              "a.ppm\r\n"
              "\n"
              "b.ppm \n"
              "sub/c.ppm\n");
  Dataset ds = load_manifest(dir / "list.txt");
  REQUIRE(ds.train.size() + ds.val.size() == 3);

  // Split membership keys on the manifest line text.
  std::vector<std::string> all_ids = ds.train_ids;
  all_ids.insert(all_ids.end(), ds.val_ids.begin(), ds.val_ids.end());
  for (const std::string& id : all_ids) {
    REQUIRE((id == "a.ppm" || id == "b.ppm" || id == "sub/c.ppm"));
    REQUIRE(is_validation_id(id) ==
            (std::find(ds.val_ids.begin(), ds.val_ids.end(), id) !=
             ds.val_ids.end()));
  }

  SECTION("absolute paths work too") {
    fs::path abs_manifest = dir / "abs.txt";
    write_bytes(abs_manifest, (dir / "a.ppm").string() + "\n");
    Dataset one = load_manifest(abs_manifest);
    REQUIRE(one.train.size() + one.val.size() == 1);
  }

  SECTION("errors") {
    REQUIRE_THROWS_AS(load_manifest(dir / "missing.txt"), DataError);
    write_bytes(dir / "empty.txt", "\n\n");
    REQUIRE_THROWS_AS(load_manifest(dir / "empty.txt"), DataError);
    write_bytes(dir / "dangling.txt", "nope.ppm\n");
    REQUIRE_THROWS_AS(load_manifest(dir / "dangling.txt"), DataError);
  }
  fs::remove_all(dir);
}

}  // namespace issp
