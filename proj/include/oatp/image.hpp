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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "oatp/errors.hpp"

namespace oatp {

/// Dense row-major 2-D array. Used for float intensity images and for
/// binary masks (uint8 holding 0 or 1).
template <class T>
class Plane {
 public:
  Plane() = default;
  Plane(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative plane dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool same_shape(const Plane& o) const { return width_ == o.width_ && height_ == o.height_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Plane<float>;
using Mask = Plane<std::uint8_t>;

struct PointF {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const PointF&, const PointF&) = default;
};

struct BoxI {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool empty() const { return x1 < x0 || y1 < y0; }
};

// 8-bit binary PGM (P5). Float images are rounded and clamped to [0, 255];
// masks are written as 0/255 and read back with any nonzero value as 1.
void write_pgm(const std::filesystem::path& path, const Image& img);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Image read_pgm(const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);

void write_pgm(std::ostream& os, const Image& img);
void write_pgm(std::ostream& os, const Mask& mask);
Image read_pgm(std::istream& is, const std::string& what = "stream");

/// Round-half-away and clamp to [0, 255]; the in-memory equivalent of a PGM
/// write/read cycle.
Image quantize8(const Image& img);
std::uint8_t to_u8(float v);

}  // namespace oatp
