// Copyright 2026 The oatp Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "oatp/features.hpp"
#include "oatp/random.hpp"
#include "test_util.hpp"

using namespace oatp;
using namespace oatp::feat;

namespace {

Mask disk_mask(int w, int h, double cx, double cy, double r) {
  Mask m(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m(x, y) = std::hypot(x - cx, y - cy) <= r ? 1 : 0;
  return m;
}

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
  return img;
}

FeatureCube random_cube(int n, int k, int f, std::uint64_t seed) {
  FeatureCube c;
  c.n = n, c.k = k, c.f = f;
  c.backend = "classical";
  c.well_id = "W" + std::to_string(seed);
  for (int i = 0; i < n; ++i) c.cavity_ids.push_back(3 * i + 1);
  Rng rng(seed);
  c.values.resize(static_cast<std::size_t>(n) * k * f);
  for (auto& v : c.values) v = static_cast<float>(rng.normal(0.0, 2.0));
  return c;
}

// Independent co-occurrence count: walk every ordered pair in both directions.
double brute_glcm_contrast(const std::vector<std::vector<int>>& levels, int dx, int dy) {
  const int h = static_cast<int>(levels.size()), w = static_cast<int>(levels[0].size());
  double num = 0.0, pairs = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int s : {1, -1}) {
        const int u = x + s * dx, v = y + s * dy;
        if (u < 0 || v < 0 || u >= w || v >= h) continue;
        const int d = levels[y][x] - levels[v][u];
        num += d * d;
        pairs += 1.0;
      }
  return num / pairs;
}

}  // namespace

TEST_CASE("masked_crop: full-frame mask with pad 0 reproduces the frame") {
  const Image frame = noise_image(9, 9, 1);
  const MaskedCrop c = masked_crop(frame, Mask(9, 9, 1), 0);
  CHECK_FALSE(c.flagged);
  REQUIRE(c.image.width() == 9);
  REQUIRE(c.image.height() == 9);
  CHECK(c.image == frame);
}

TEST_CASE("masked_crop: disk mask zeroes everything outside") {
  const Image frame(40, 30, 200.0f);
  const Mask m = disk_mask(40, 30, 20, 14, 6);
  const MaskedCrop c = masked_crop(frame, m, 2);
  CHECK(c.image.width() == 13 + 4);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < c.image.size(); ++i) {
    if (c.mask.data()[i]) {
      CHECK(c.image.data()[i] == 200.0f);
      ++inside;
    } else {
      CHECK(c.image.data()[i] == 0.0f);
    }
  }
  std::size_t area = 0;
  for (auto v : m.values()) area += v;
  CHECK(inside == area);
}

TEST_CASE("masked_crop: empty mask gives a flagged zero crop") {
  const MaskedCrop c = masked_crop(Image(20, 20, 5.0f), Mask(20, 20, 0), 2, 12);
  CHECK(c.flagged);
  CHECK(c.image.width() == 12);
  for (float v : c.image.values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(masked_crop(Image(20, 20), Mask(10, 20, 0), 0), ValidationError);
}

TEST_CASE("classical: constant disk has zero spread and unit GLCM energy") {
  const Mask m = disk_mask(31, 31, 15, 15, 10);
  const Image img(31, 31, 100.0f);
  const FeatureVector fv = extract_classical(img, m);
  REQUIRE(fv.values.size() == kClassicalDim);
  CHECK(fv.values[0] == doctest::Approx(100.0));
  CHECK(fv.values[1] == 0.0);
  CHECK(fv.values[10] == 0.0);  // entropy
  for (int o = 0; o < 4; ++o) CHECK(fv.values[16 + 4 * o + 2] == doctest::Approx(1.0));
  CHECK(fv.values[34] == doctest::Approx(1.0));
  // Skewness, kurtosis and GLCM correlation are undefined here.
  CHECK(fv.sanitized);
  CHECK(fv.values[2] == 0.0);
  for (double v : fv.values) CHECK(std::isfinite(v));
}

TEST_CASE("classical: GLCM contrast of a 5x5 checker matches brute-force counting") {
  Image img(5, 5);
  std::vector<std::vector<int>> levels(5, std::vector<int>(5));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const bool hi = (x + y) % 2 == 1;
      img(x, y) = hi ? 200.0f : 40.0f;
      levels[y][x] = gray_level(img(x, y));
    }
  CHECK(levels[0][1] == 12);
  CHECK(levels[0][0] == 2);
  const FeatureVector fv = extract_classical(img, Mask(5, 5, 1));
  const int offsets[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  for (int o = 0; o < 4; ++o)
    CHECK(fv.values[16 + 4 * o] == doctest::Approx(brute_glcm_contrast(levels, offsets[o][0], offsets[o][1])));
  CHECK(fv.values[16] == doctest::Approx(100.0));
  CHECK(fv.values[24] == doctest::Approx(0.0));
}

TEST_CASE("classical: disk shape against the analytic disk") {
  // Lattice counts stray past 2% for some radii below 13 (r = 12 gives 441).
  for (double r : {10.0, 16.0, 20.0, 24.0}) {
    CAPTURE(r);
    const int s = static_cast<int>(2 * r) + 9;
    const Mask m = disk_mask(s, s, s / 2, s / 2, r);
    const FeatureVector fv = extract_classical(Image(s, s, 50.0f), m);
    const double area = std::numbers::pi * r * r;
    CHECK(std::abs(fv.values[40] - area) / area <= 0.02);
    CHECK(fv.values[43] <= 0.1);
    CHECK(fv.values[46] == doctest::Approx(2 * r).epsilon(0.02));
    // The hull spans pixel corners, about pi (r + 0.5)^2.
    CHECK(fv.values[44] == doctest::Approx(r * r / ((r + 0.5) * (r + 0.5))).epsilon(0.03));
    CHECK(fv.values[42] > 0.85);
  }
}

TEST_CASE("classical: empty mask gives a flagged zero vector") {
  const FeatureVector fv = extract_classical(Image(8, 8, 3.0f), Mask(8, 8, 0));
  CHECK(fv.empty);
  for (double v : fv.values) CHECK(v == 0.0);
}

TEST_CASE("classical: first-order features ignore crop padding") {
  const Image frame = noise_image(60, 60, 7);
  const Mask m = disk_mask(60, 60, 30, 28, 11);
  const MaskedCrop a = masked_crop(frame, m, 0), b = masked_crop(frame, m, 9);
  const FeatureVector fa = extract_classical(a.image, a.mask), fb = extract_classical(b.image, b.mask);
  for (int j = 0; j < 16; ++j) CHECK(fa.values[j] == fb.values[j]);
  for (int j = 16; j < 48; ++j) CHECK(fa.values[j] == doctest::Approx(fb.values[j]));
}

TEST_CASE("classical: shape features ignore intensity rescaling") {
  const Image img = noise_image(40, 40, 3);
  Image scaled = img;
  for (auto& v : scaled.values()) v *= 0.37f;
  Mask m = disk_mask(40, 40, 18, 21, 9);
  m(30, 21) = 1;  // not convex
  const FeatureVector a = extract_classical(img, m), b = extract_classical(scaled, m);
  for (int j = 40; j < 48; ++j) CHECK(a.values[j] == b.values[j]);
}

TEST_CASE("glcm: transposed image with transposed offsets") {
  const Image img = noise_image(23, 17, 11);
  const Mask m = disk_mask(23, 17, 11, 8, 7);
  Image ti(17, 23);
  Mask tm(17, 23, 0);
  for (int y = 0; y < 17; ++y)
    for (int x = 0; x < 23; ++x) ti(y, x) = img(x, y), tm(y, x) = m(x, y);
  const int offsets[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  for (const auto& o : offsets) {
    const auto a = glcm(img, m, o[0], o[1]);
    const auto b = glcm(ti, tm, o[1], o[0]);
    for (int i = 0; i < 256; ++i) CHECK(a[i] == doctest::Approx(b[i]));
  }
  const FeatureVector fa = extract_classical(img, m), fb = extract_classical(ti, tm);
  // (1,0) <-> (0,1) swap, diagonals map to themselves.
  for (int s = 0; s < 4; ++s) {
    CHECK(fa.values[16 + s] == doctest::Approx(fb.values[20 + s]));
    CHECK(fa.values[24 + s] == doctest::Approx(fb.values[24 + s]));
    CHECK(fa.values[28 + s] == doctest::Approx(fb.values[28 + s]));
  }
}

TEST_CASE("classical: backend is pure") {
  const Image img = noise_image(30, 30, 5);
  const Mask m = disk_mask(30, 30, 15, 15, 9);
  ClassicalBackend b;
  CHECK(b.extract(img, m).values == b.extract(img, m).values);
  CHECK(make_backend("classical")->dim() == 48);
  CHECK_THROWS_AS(make_backend("dinov2"), ValidationError);
}

TEST_CASE("files: export then import is bit-identical") {
  test::TempDir dir("feat");
  FeatureCube c = random_cube(4, 7, 5, 42);
  c.norm = NormStats{{1, 2, 3, 4, 5, 6, 7}, {1, 1, 1, 2, 2, 2, 3}, {"W0", "W1"}};
  c.sanitized = 3;
  const auto path = dir.path() / "w.otfc";
  export_features(path, c);
  const FeatureCube r = import_features(path, {.k = 7, .f = 5, .cavity_ids = c.cavity_ids});
  CHECK(r.n == 4);
  CHECK(r.backend == "classical");
  CHECK(r.cavity_ids == c.cavity_ids);
  CHECK(r.well_id == c.well_id);
  CHECK(r.sanitized == 3);
  REQUIRE(r.norm);
  CHECK(r.norm->train_wells == c.norm->train_wells);
  REQUIRE(r.values.size() == c.values.size());
  CHECK(std::memcmp(r.values.data(), c.values.data(), c.values.size() * sizeof(float)) == 0);
  CHECK(std::filesystem::file_size(path) == std::string("OTFC1 4 7 5 classical\n").size() + 4 * 4 * 7 * 5);

  CHECK_THROWS_AS(import_features(path, {.k = 8}), ValidationError);
  CHECK_THROWS_AS(import_features(path, {.f = 6}), ValidationError);
  CHECK_THROWS_AS(import_features(path, {.cavity_ids = std::vector<int>{1, 2, 3, 4}}), ValidationError);
}

TEST_CASE("files: header k disagreeing with the payload is rejected") {
  test::TempDir dir("feat");
  const auto path = dir.path() / "bad.otfc";
  {
    std::ofstream os(path, std::ios::binary);
    os << "OTFC1 2 768 3 dinov2\n";
    const std::vector<float> payload(2 * 700 * 3, 0.5f);
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
  }
  try {
    import_features(path);
    FAIL("accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("700") != std::string::npos);
  }
}

TEST_CASE("files: a NaN entry is rejected with its coordinates") {
  test::TempDir dir("feat");
  const FeatureCube c = random_cube(3, 4, 6, 9);
  const auto path = dir.path() / "nan.otfc";
  export_features(path, c);
  {
    // cavity 2, feature 1, frame 4
    std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
    const std::size_t header = std::string("OTFC1 3 4 6 classical\n").size();
    fs.seekp(static_cast<std::streamoff>(header + 4 * ((2 * 4 + 1) * 6 + 4)));
    const float nan = std::numeric_limits<float>::quiet_NaN();
    fs.write(reinterpret_cast<const char*>(&nan), 4);
  }
  try {
    import_features(path);
    FAIL("accepted");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cavity 2") != std::string::npos);
    CHECK(msg.find("frame 4") != std::string::npos);
    CHECK(msg.find("feature 1") != std::string::npos);
  }
}

TEST_CASE("files: CSV has one row per cavity and frame") {
  test::TempDir dir("feat");
  const FeatureCube c = random_cube(2, kClassicalDim, 3, 4);
  export_features_csv(dir.path() / "f.csv", c);
  std::ifstream is(dir.path() / "f.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line.rfind("cavity_id,frame,fo_mean,", 0) == 0);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 6);
}

namespace {

seg::WellSegmentation fake_segmentation(int n_cavities, int frames, int width, int invalid) {
  seg::WellSegmentation s;
  s.cavities.well = Mask(width, width, 1);
  for (int i = 0; i < n_cavities + invalid; ++i) {
    seg::Cavity c;
    c.id = i;
    c.crop_x0 = (i % 6) * 40;
    c.crop_y0 = (i / 6) * 40;
    c.crop_size = 36;
    s.cavities.cavities.push_back(c);
    seg::OrganoidTrack t;
    for (int k = 0; k < frames; ++k) t.masks.push_back(disk_mask(36, 36, 18, 18, 4.0 + 0.1 * k + 0.2 * (i % 5)));
    t.valid = i < n_cavities;
    s.tracks.push_back(std::move(t));
  }
  return s;
}

}  // namespace

TEST_CASE("cube: 20 valid cavities, 50 frames, classical backend") {
  std::vector<Image> frames;
  for (int t = 0; t < 50; ++t) frames.push_back(noise_image(240, 200, 100 + t));
  const seg::WellSegmentation s = fake_segmentation(20, 50, 240, 2);
  const FeatureCube cube = build_feature_cube(frames, s, ClassicalBackend{}, {.pad = 2, .workers = 2});
  CHECK(cube.n == 20);
  CHECK(cube.k == 48);
  CHECK(cube.f == 50);
  CHECK(cube.excluded_tracks == 2);
  CHECK(cube.cavity_ids.front() == 0);
  CHECK(cube.cavity_ids.back() == 19);
  CHECK_NOTHROW(cube.validate());
  // Area grows with the mask radius.
  CHECK(cube.at(0, 40, 49) > cube.at(0, 40, 0));
  // Direct extraction for one entry.
  const Image window = seg::crop(frames[7], s.cavities.cavities[3].crop_x0, s.cavities.cavities[3].crop_y0, 36);
  const MaskedCrop mc = masked_crop(window, s.tracks[3].masks[7], 2);
  const FeatureVector fv = extract_classical(mc.image, mc.mask);
  for (int j = 0; j < 48; ++j) CHECK(cube.at(3, j, 7) == static_cast<float>(fv.values[j]));
}

TEST_CASE("cube: z-score from training wells only") {
  FeatureCube a = random_cube(5, 6, 8, 1), b = random_cube(7, 6, 8, 2), v = random_cube(4, 6, 8, 3);
  for (int i = 0; i < b.n; ++i)
    for (int t = 0; t < b.f; ++t) b.at(i, 5, t) = 3.0f;  // constant feature across both
  for (int i = 0; i < a.n; ++i)
    for (int t = 0; t < a.f; ++t) a.at(i, 5, t) = 3.0f;
  const NormStats st = compute_norm_stats({&a, &b});
  CHECK(st.train_wells == std::vector<std::string>{a.well_id, b.well_id});
  CHECK(st.sd[5] == 1.0);
  apply_norm(a, st);
  apply_norm(b, st);
  apply_norm(v, st);
  for (int j = 0; j < 6; ++j) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (const FeatureCube* c : {&a, &b})
      for (int i = 0; i < c->n; ++i)
        for (int t = 0; t < c->f; ++t) s += c->at(i, j, t), s2 += double(c->at(i, j, t)) * c->at(i, j, t), n += 1;
    const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean) <= 1e-6);
    if (j != 5) CHECK(std::abs(sd - 1.0) <= 1e-6);
  }
  REQUIRE(v.norm);
  CHECK(std::find(v.norm->train_wells.begin(), v.norm->train_wells.end(), v.well_id) == v.norm->train_wells.end());
}
