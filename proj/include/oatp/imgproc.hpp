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

// Image filtering and binary-mask morphology shared by the pipeline stages.

#include <optional>
#include <vector>

#include "oatp/image.hpp"

namespace oatp {

std::vector<float> gaussian_taps(double sigma);

Image gaussian_blur(const Image& img, double sigma);
Image box_mean(const Image& img, int radius);
/// Raw 3x3 Sobel magnitude (a unit ramp responds with 8).
Image sobel_magnitude(const Image& img);

/// out(x, y) = in(x - dx, y - dy), bilinear, edge-replicated.
Image shift_image(const Image& img, double dx, double dy);
float sample_bilinear(const Image& img, double x, double y);

/// Canny edge map. Thresholds are in gray levels per pixel (Sobel / 8) of
/// the Gaussian-smoothed input.
Mask canny(const Image& img, double sigma, double low, double high);

// ---- masks -------------------------------------------------------------

struct PointI {
  int x = 0;
  int y = 0;
  friend bool operator==(const PointI&, const PointI&) = default;
};

std::size_t area(const Mask& m);
std::optional<PointF> centroid(const Mask& m);
BoxI bounding_box(const Mask& m);
bool touches_border(const Mask& m);

struct Components {
  std::vector<int> labels;  // 0 = background, 1..count
  std::vector<std::size_t> areas;  // index 0 unused
  int count = 0;
};
Components label_components(const Mask& m, int connectivity = 8);

/// Largest connected component; ties go to the first in raster order.
Mask largest_component(const Mask& m, int connectivity = 8);
Mask remove_small_components(const Mask& m, std::size_t min_area, int connectivity = 8);
/// Fills background regions that are not 4-connected to the image border.
Mask fill_holes(const Mask& m);

Mask dilate3(const Mask& m);
Mask erode3(const Mask& m);
Mask close3(const Mask& m);
Mask open3(const Mask& m);

/// Mask pixels with a 4-neighbour outside the mask or on the image edge.
Mask inner_boundary(const Mask& m);

/// Ordered outer contour (Moore-neighbour tracing, 8-connected) of the
/// first component in raster order. Empty for an empty mask.
std::vector<PointI> trace_outer_contour(const Mask& m);

double contour_length(const std::vector<PointI>& contour);

/// Area of the convex hull of the pixel squares (corner points).
double convex_hull_area(const Mask& m);

Mask mask_and(const Mask& a, const Mask& b);
bool is_subset(const Mask& inner, const Mask& outer);

}  // namespace oatp
