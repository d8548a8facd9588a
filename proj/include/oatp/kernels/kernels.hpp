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

// Data-parallel inner loops used by the image and model code.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active table is chosen once at startup from the CPU features;
// setting OATP_SIMD=scalar in the environment forces the reference path.
//
// The image kernels (convolution, Sobel, axpy) evaluate the same arithmetic
// in the same order in both variants and are bit-identical. The reductions
// (dot) reassociate the sum and agree to rounding only.

#include <cstddef>
#include <span>
#include <string_view>

namespace oatp::kernels {

struct KernelTable {
  const char* name;

  // Horizontal 1-D convolution with (2*radius+1) taps; borders replicate.
  void (*convolve_rows)(const float* src, float* dst, int width, int height,
                        const float* taps, int radius);
  // Vertical 1-D convolution; borders replicate.
  void (*convolve_cols)(const float* src, float* dst, int width, int height,
                        const float* taps, int radius);
  // Raw 3x3 Sobel gradient magnitude sqrt(gx^2 + gy^2); borders replicate.
  void (*sobel_magnitude)(const float* src, float* dst, int width, int height);

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2.
const KernelTable* avx2_table();

// Table selected for this process.
const KernelTable& active();

// Overrides the selection ("scalar" or "avx2"); returns false if unavailable.
bool select(std::string_view name);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace oatp::kernels
