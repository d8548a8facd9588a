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

// Compiled with -mavx2 only. No FMA: the products and sums must round exactly
// as in the scalar reference.

#include "oatp/kernels/kernels.hpp"
#include "kernels_internal.hpp"

#include <immintrin.h>

namespace oatp::kernels {
namespace avx2 {

void convolve_rows(const float* src, float* dst, int width, int height,
                   const float* taps, int radius) {
  for (int y = 0; y < height; ++y) {
    const float* row = src + static_cast<std::ptrdiff_t>(y) * width;
    float* out = dst + static_cast<std::ptrdiff_t>(y) * width;
    int x = 0;
    for (; x < std::min(radius, width); ++x) out[x] = detail::convolve_row_at(row, width, x, taps, radius);
    for (; x + 8 + radius <= width; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (int j = -radius; j <= radius; ++j) {
        const __m256 t = _mm256_set1_ps(taps[j + radius]);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(t, _mm256_loadu_ps(row + x + j)));
      }
      _mm256_storeu_ps(out + x, acc);
    }
    for (; x < width; ++x) out[x] = detail::convolve_row_at(row, width, x, taps, radius);
  }
}

void convolve_cols(const float* src, float* dst, int width, int height,
                   const float* taps, int radius) {
  for (int y = 0; y < height; ++y) {
    float* out = dst + static_cast<std::ptrdiff_t>(y) * width;
    int x = 0;
    for (; x + 8 <= width; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (int j = -radius; j <= radius; ++j) {
        const int yy = std::clamp(y + j, 0, height - 1);
        const __m256 t = _mm256_set1_ps(taps[j + radius]);
        acc = _mm256_add_ps(
            acc, _mm256_mul_ps(t, _mm256_loadu_ps(src + static_cast<std::ptrdiff_t>(yy) * width + x)));
      }
      _mm256_storeu_ps(out + x, acc);
    }
    for (; x < width; ++x) out[x] = detail::convolve_col_at(src, width, height, x, y, taps, radius);
  }
}

void sobel_magnitude(const float* src, float* dst, int width, int height) {
  const __m256 two = _mm256_set1_ps(2.0f);
  for (int y = 0; y < height; ++y) {
    float* out = dst + static_cast<std::ptrdiff_t>(y) * width;
    if (y == 0 || y == height - 1 || width < 10) {
      for (int x = 0; x < width; ++x) out[x] = detail::sobel_at(src, width, height, x, y);
      continue;
    }
    const float* r0 = src + static_cast<std::ptrdiff_t>(y - 1) * width;
    const float* r1 = src + static_cast<std::ptrdiff_t>(y) * width;
    const float* r2 = src + static_cast<std::ptrdiff_t>(y + 1) * width;
    out[0] = detail::sobel_at(src, width, height, 0, y);
    int x = 1;
    for (; x + 8 < width; x += 8) {
      const __m256 a00 = _mm256_loadu_ps(r0 + x - 1), a01 = _mm256_loadu_ps(r0 + x),
                   a02 = _mm256_loadu_ps(r0 + x + 1);
      const __m256 a10 = _mm256_loadu_ps(r1 + x - 1), a12 = _mm256_loadu_ps(r1 + x + 1);
      const __m256 a20 = _mm256_loadu_ps(r2 + x - 1), a21 = _mm256_loadu_ps(r2 + x),
                   a22 = _mm256_loadu_ps(r2 + x + 1);
      const __m256 gx = _mm256_sub_ps(
          _mm256_add_ps(_mm256_add_ps(a02, _mm256_mul_ps(two, a12)), a22),
          _mm256_add_ps(_mm256_add_ps(a00, _mm256_mul_ps(two, a10)), a20));
      const __m256 gy = _mm256_sub_ps(
          _mm256_add_ps(_mm256_add_ps(a20, _mm256_mul_ps(two, a21)), a22),
          _mm256_add_ps(_mm256_add_ps(a00, _mm256_mul_ps(two, a01)), a02));
      _mm256_storeu_ps(out + x,
                       _mm256_sqrt_ps(_mm256_add_ps(_mm256_mul_ps(gx, gx), _mm256_mul_ps(gy, gy))));
    }
    for (; x < width; ++x) out[x] = detail::sobel_at(src, width, height, x, y);
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(a, _mm256_loadu_pd(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

}  // namespace avx2

const KernelTable* avx2_table_unchecked() {
  static const KernelTable table{"avx2", avx2::convolve_rows, avx2::convolve_cols,
                                 avx2::sobel_magnitude, avx2::dot, avx2::axpy};
  return &table;
}

}  // namespace oatp::kernels
