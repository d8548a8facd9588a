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

#include "oatp/kernels/kernels.hpp"
#include "kernels_internal.hpp"

#include <algorithm>
#include <cmath>

namespace oatp::kernels {
namespace scalar {

void convolve_rows(const float* src, float* dst, int width, int height,
                   const float* taps, int radius) {
  for (int y = 0; y < height; ++y) {
    const float* row = src + static_cast<std::ptrdiff_t>(y) * width;
    float* out = dst + static_cast<std::ptrdiff_t>(y) * width;
    for (int x = 0; x < width; ++x) out[x] = detail::convolve_row_at(row, width, x, taps, radius);
  }
}

void convolve_cols(const float* src, float* dst, int width, int height,
                   const float* taps, int radius) {
  for (int y = 0; y < height; ++y) {
    float* out = dst + static_cast<std::ptrdiff_t>(y) * width;
    for (int x = 0; x < width; ++x) out[x] = detail::convolve_col_at(src, width, height, x, y, taps, radius);
  }
}

void sobel_magnitude(const float* src, float* dst, int width, int height) {
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      dst[static_cast<std::ptrdiff_t>(y) * width + x] = detail::sobel_at(src, width, height, x, y);
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

}  // namespace scalar

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", scalar::convolve_rows, scalar::convolve_cols,
                                 scalar::sobel_magnitude, scalar::dot, scalar::axpy};
  return table;
}

}  // namespace oatp::kernels
