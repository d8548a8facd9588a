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

#pragma once

// Per-pixel helpers shared by the scalar kernels and the border handling of
// the vector kernels. The vector bodies must evaluate exactly these
// expressions, in this order, to stay bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace oatp::kernels::detail {

inline float convolve_row_at(const float* row, int width, int x, const float* taps, int radius) {
  float acc = 0.0f;
  for (int j = -radius; j <= radius; ++j) {
    const int xx = std::clamp(x + j, 0, width - 1);
    acc = acc + taps[j + radius] * row[xx];
  }
  return acc;
}

inline float convolve_col_at(const float* src, int width, int height, int x, int y,
                             const float* taps, int radius) {
  float acc = 0.0f;
  for (int j = -radius; j <= radius; ++j) {
    const int yy = std::clamp(y + j, 0, height - 1);
    acc = acc + taps[j + radius] * src[static_cast<std::ptrdiff_t>(yy) * width + x];
  }
  return acc;
}

// a00 a01 a02
// a10  .  a12
// a20 a21 a22
inline float sobel_from(float a00, float a01, float a02, float a10, float a12, float a20, float a21,
                        float a22) {
  const float gx = (a02 + 2.0f * a12 + a22) - (a00 + 2.0f * a10 + a20);
  const float gy = (a20 + 2.0f * a21 + a22) - (a00 + 2.0f * a01 + a02);
  return std::sqrt(gx * gx + gy * gy);
}

inline float sobel_at(const float* src, int width, int height, int x, int y) {
  const int xm = std::max(x - 1, 0), xp = std::min(x + 1, width - 1);
  const int ym = std::max(y - 1, 0), yp = std::min(y + 1, height - 1);
  auto at = [&](int xx, int yy) { return src[static_cast<std::ptrdiff_t>(yy) * width + xx]; };
  return sobel_from(at(xm, ym), at(x, ym), at(xp, ym), at(xm, y), at(xp, y), at(xm, yp), at(x, yp),
                    at(xp, yp));
}

}  // namespace oatp::kernels::detail
