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

#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "oatp/kernels/kernels.hpp"

using namespace oatp;

namespace {

std::vector<float> random_image(int w, int h, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.0f, 255.0f);
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<float> random_taps(int radius, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> t(2 * radius + 1);
  for (auto& x : t) x = u(rng);
  return t;
}

const int kShapes[][2] = {{1, 1}, {2, 5}, {7, 3}, {9, 9}, {16, 4}, {37, 19}, {128, 64}, {131, 3}};

}  // namespace

TEST_CASE("scalar reference: identity taps and ramp gradient") {
  const auto& k = kernels::scalar_table();
  const int w = 12, h = 6;
  std::vector<float> img(w * h), out(w * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img[y * w + x] = 3.0f * x + 100.0f;
  const float id[] = {0.0f, 1.0f, 0.0f};
  k.convolve_rows(img.data(), out.data(), w, h, id, 1);
  CHECK(out == img);
  k.convolve_cols(img.data(), out.data(), w, h, id, 1);
  CHECK(out == img);
  k.sobel_magnitude(img.data(), out.data(), w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 1; x < w - 1; ++x) CHECK(out[y * w + x] == doctest::Approx(24.0f));
}

TEST_CASE("avx2 variants are bit-identical to scalar for elementwise kernels") {
  const kernels::KernelTable* vec = kernels::avx2_table();
  if (vec == nullptr) {
    MESSAGE("AVX2 not available; equivalence test skipped");
    return;
  }
  const auto& ref = kernels::scalar_table();
  std::mt19937 rng(7);
  for (const auto& shape : kShapes) {
    const int w = shape[0], h = shape[1];
    const auto img = random_image(w, h, rng);
    for (int radius = 0; radius <= 6; ++radius) {
      const auto taps = random_taps(radius, rng);
      std::vector<float> a(img.size()), b(img.size());
      ref.convolve_rows(img.data(), a.data(), w, h, taps.data(), radius);
      vec->convolve_rows(img.data(), b.data(), w, h, taps.data(), radius);
      CHECK(a == b);
      ref.convolve_cols(img.data(), a.data(), w, h, taps.data(), radius);
      vec->convolve_cols(img.data(), b.data(), w, h, taps.data(), radius);
      CHECK(a == b);
    }
    std::vector<float> a(img.size()), b(img.size());
    ref.sobel_magnitude(img.data(), a.data(), w, h);
    vec->sobel_magnitude(img.data(), b.data(), w, h);
    CHECK(a == b);
  }
}

TEST_CASE("avx2 reductions agree with scalar to rounding") {
  const kernels::KernelTable* vec = kernels::avx2_table();
  if (vec == nullptr) return;
  const auto& ref = kernels::scalar_table();
  std::mt19937 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t len : {0u, 1u, 3u, 4u, 5u, 8u, 13u, 64u, 1001u}) {
    std::vector<double> x(len), y(len);
    for (auto& v : x) v = n(rng);
    for (auto& v : y) v = n(rng);
    double scale = 0.0;
    for (std::size_t i = 0; i < len; ++i) scale += std::abs(x[i] * y[i]);
    CHECK(std::abs(ref.dot(x.data(), y.data(), len) - vec->dot(x.data(), y.data(), len)) <= 1e-12 * (scale + 1.0));

    std::vector<double> y1 = y, y2 = y;
    ref.axpy(0.37, x.data(), y1.data(), len);
    vec->axpy(0.37, x.data(), y2.data(), len);
    CHECK(y1 == y2);
  }
}

TEST_CASE("runtime selection can be forced to scalar") {
  CHECK(kernels::select("scalar"));
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK_FALSE(kernels::select("neon-does-not-exist"));
  if (kernels::avx2_table() != nullptr) {
    CHECK(kernels::select("avx2"));
    CHECK(std::string(kernels::active().name) == "avx2");
  }
}
