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

#include <cmath>

#include "oatp/imgproc.hpp"
#include "oatp/preprocess.hpp"
#include "oatp/random.hpp"
#include "oatp/synthgen.hpp"
#include "test_util.hpp"

using namespace oatp;
using namespace oatp::prep;

namespace {

Image disk_image(int w, int h, double cx, double cy, double r, float in, float out) {
  Image img(w, h, out);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (std::hypot(x - cx, y - cy) <= r) img(x, y) = in;
  return img;
}

Image textured(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
  Image smooth = gaussian_blur(img, 2.0);
  // Stretch back to a usable range.
  for (float& v : smooth.values()) v = std::clamp((v - 128.0f) * 6.0f + 128.0f, 0.0f, 255.0f);
  return smooth;
}

}  // namespace

TEST_CASE("focus projection trivial cases") {
  const Image a = textured(40, 30, 1);
  CHECK(sobel_focus_project({a}) == a);
  CHECK(sobel_focus_project({a, a, a}) == a);
  CHECK_THROWS_AS(sobel_focus_project({}), ValidationError);
  CHECK_THROWS_AS(sobel_focus_project({a, Image(3, 3)}), ValidationError);
}

TEST_CASE("focus projection picks the sharp slice at edges") {
  // Defocus model of the generator: sigma grows with distance from focus.
  const Image sharp = disk_image(96, 96, 47.3, 48.1, 25.0, 80.0f, 170.0f);
  const std::vector<Image> stack{gaussian_blur(sharp, 2.3), gaussian_blur(sharp, 0.7), gaussian_blur(sharp, 2.3)};
  Plane<std::uint8_t> chosen;
  const Image out = sobel_focus_project(stack, &chosen);
  std::size_t band = 0, hit = 0;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (std::abs(std::hypot(x - 47.3, y - 48.1) - 25.0) <= 2.0) {
        ++band;
        if (chosen(x, y) == 1) {
          ++hit;
          CHECK(out(x, y) == stack[1](x, y));
        }
      }
  CHECK(static_cast<double>(hit) / band >= 0.95);
}

TEST_CASE("stitching") {
  SUBCASE("block constant, no overlap") {
    std::array<Image, 4> q{Image(8, 6, 10), Image(8, 6, 20), Image(8, 6, 30), Image(8, 6, 40)};
    const Image s = stitch_quadrants(q, 0);
    CHECK(s.width() == 16);
    CHECK(s.height() == 12);
    CHECK(s(0, 0) == 10);
    CHECK(s(15, 0) == 20);
    CHECK(s(7, 11) == 30);
    CHECK(s(8, 6) == 40);
  }
  SUBCASE("round trip with overlap") {
    for (int o : {1, 4, 16}) {
      const Image ref = textured(100 - (o % 2), 80 - (o % 2), 3);
      const Image back = stitch_quadrants(split_quadrants(ref, o), o);
      REQUIRE(back.same_shape(ref));
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(back.data()[i] - ref.data()[i]) <= 1e-3f);
    }
  }
  SUBCASE("feathering is linear across the band") {
    std::array<Image, 4> q{Image(10, 10, 0), Image(10, 10, 100), Image(10, 10, 0), Image(10, 10, 100)};
    const Image s = stitch_quadrants(q, 4);
    CHECK(s(5, 3) == 0.0f);
    CHECK(s(6, 3) == doctest::Approx(12.5));
    CHECK(s(7, 3) == doctest::Approx(37.5));
    CHECK(s(9, 3) == doctest::Approx(87.5));
  }
  SUBCASE("errors") {
    std::array<Image, 4> q{Image(8, 6), Image(8, 6), Image(8, 6), Image(8, 6)};
    CHECK_THROWS_AS(stitch_quadrants(q, 9), ValidationError);
    q[2] = Image(7, 6);
    CHECK_THROWS_AS(stitch_quadrants(q, 0), ValidationError);
  }
}

TEST_CASE("contrast normalization") {
  const Image f0 = textured(64, 64, 5);
  SUBCASE("identical frames") {
    const auto r = normalize_contrast({f0, f0, f0});
    for (const auto& f : r.frames)
      for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f.data()[i] - f0.data()[i]) <= 1e-3f);
    CHECK(r.warnings.empty());
  }
  SUBCASE("affine perturbation is undone") {
    Image f1 = f0;
    for (float& v : f1.values()) v = 0.5f * v + 10.0f;
    const auto r = normalize_contrast({f0, f1});
    CHECK(r.gain[1] == doctest::Approx(2.0).epsilon(1e-4));
    std::size_t bad = 0;
    for (std::size_t i = 0; i < f0.size(); ++i)
      if (std::abs(r.frames[1].data()[i] - f0.data()[i]) > 1.0f) ++bad;
    CHECK(bad == 0);
  }
  SUBCASE("constant frame passes with warning") {
    const Image c(64, 64, 50.0f);
    const auto r = normalize_contrast({f0, c});
    REQUIRE(r.warnings == std::vector<int>{1});
    CHECK(r.gain[1] == 1.0);
    const float v = r.frames[1](10, 10);
    for (float x : r.frames[1].values()) CHECK(x == v);
  }
  SUBCASE("idempotent") {
    Image f1 = f0;
    for (float& v : f1.values()) v = std::clamp(0.7f * v + 30.0f, 0.0f, 255.0f);
    Timelapse once = normalize_contrast({f0, f1}).frames;
    for (auto& f : once) f = quantize8(f);
    const Timelapse twice = normalize_contrast(once).frames;
    for (std::size_t t = 0; t < once.size(); ++t)
      for (std::size_t i = 0; i < once[t].size(); ++i) CHECK(std::abs(twice[t].data()[i] - once[t].data()[i]) <= 1.0f);
  }
}

TEST_CASE("phase correlation") {
  const Image f0 = textured(128, 96, 9);
  SUBCASE("integer shift") {
    double peak = 0.0;
    const PointF s = phase_correlate(f0, shift_image(f0, 3, -2), &peak);
    CHECK(std::abs(s.x - 3.0) <= 0.25);
    CHECK(std::abs(s.y + 2.0) <= 0.25);
    CHECK(peak > 0.3);
  }
  SUBCASE("sub-pixel shift") {
    const PointF s = phase_correlate(f0, shift_image(f0, -1.5, 2.4));
    CHECK(std::abs(s.x + 1.5) <= 0.25);
    CHECK(std::abs(s.y - 2.4) <= 0.25);
  }
  SUBCASE("register aligns and records offsets") {
    const auto out = register_frames({f0, f0, shift_image(f0, 3, -2)});
    CHECK(out.result.offsets[0] == PointF{0, 0});
    CHECK(std::abs(out.result.offsets[1].x) <= 0.25);
    CHECK(std::abs(out.result.offsets[1].y) <= 0.25);
    CHECK(std::abs(out.result.offsets[2].x - 3.0) <= 0.25);
    CHECK(std::abs(out.result.offsets[2].y + 2.0) <= 0.25);
    for (int y = 8; y < 88; ++y)
      for (int x = 8; x < 120; ++x) CHECK(std::abs(out.frames[2](x, y) - f0(x, y)) <= 2.0f);
  }
  SUBCASE("noise frame is flagged") {
    Rng rng(4);
    Image noise(128, 96);
    for (float& v : noise.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
    const auto out = register_frames({f0, noise});
    CHECK(out.result.flagged[1]);
    CHECK(out.result.offsets[1] == PointF{0, 0});
    CHECK(out.frames[1] == noise);
  }
}

TEST_CASE("well pipeline recovers generator drift") {
  synth::SynthConfig c;
  c.wells = 2;
  c.folds = 2;
  c.frames = 8;
  c.width = c.height = 200;
  c.cavities_min = c.cavities_max = 5;
  const synth::WellGenerator g(c, 0);
  PreprocessConfig pc;
  const auto r = preprocess_well([&](int t) { return g.frame(t); }, c.frames, pc, 2);
  REQUIRE(r.frames.size() == 8);
  CHECK(r.frames[0].width() == 200);
  for (int t = 0; t < c.frames; ++t) {
    CHECK_FALSE(r.registration.flagged[t]);
    CHECK(std::abs(r.registration.offsets[t].x - g.ground_truth().drift[t].x) <= 0.35);
    CHECK(std::abs(r.registration.offsets[t].y - g.ground_truth().drift[t].y) <= 0.35);
  }
  for (const auto& f : r.frames)
    for (float v : f.values()) CHECK(v == std::round(v));

  pc.keep_last = 3;
  const auto tail = preprocess_well([&](int t) { return g.frame(t); }, c.frames, pc, 1);
  CHECK(tail.first_frame == 5);
  CHECK(tail.frames.size() == 3);

  const test::TempDir dir("prep");
  write_preprocessed(dir.path(), r);
  const auto back = read_preprocessed(dir.path());
  CHECK(back.frames == r.frames);
  CHECK(back.registration.offsets == r.registration.offsets);
}

TEST_CASE("raw tree discovery") {
  synth::SynthConfig c;
  c.wells = 1;
  c.folds = 1;
  c.frames = 3;
  c.width = c.height = 200;
  c.cavities_min = c.cavities_max = 2;
  const test::TempDir dir("raw");
  synth::generate_dataset(c, dir.path());
  const auto well = dir.path() / "well_000";
  const RawLayout l = discover_raw(well);
  CHECK(l.frames == 3);
  CHECK(l.z_levels == 3);
  const RawFrameSet raw = read_raw_frame(well, 2, l.z_levels, c.overlap);
  CHECK(raw.at(1, 2) == synth::WellGenerator(c, 0).frame(2).at(1, 2));
  CHECK_THROWS(discover_raw(dir.path() / "missing"));
}
