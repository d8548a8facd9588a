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

#include "oatp/imgproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numbers>

#include "oatp/kernels/kernels.hpp"

namespace oatp {

std::vector<float> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += std::exp(-0.5 * i * i / (sigma * sigma));
  for (int i = -radius; i <= radius; ++i)
    taps[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)) / sum);
  return taps;
}

namespace {

Image separable(const Image& img, const std::vector<float>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  Image tmp(img.width(), img.height()), out(img.width(), img.height());
  const auto& k = kernels::active();
  k.convolve_rows(img.data(), tmp.data(), img.width(), img.height(), taps.data(), radius);
  k.convolve_cols(tmp.data(), out.data(), img.width(), img.height(), taps.data(), radius);
  return out;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0 || img.empty()) return img;
  return separable(img, gaussian_taps(sigma));
}

Image box_mean(const Image& img, int radius) {
  if (radius <= 0 || img.empty()) return img;
  std::vector<float> taps(2 * radius + 1, 1.0f / static_cast<float>(2 * radius + 1));
  return separable(img, taps);
}

Image sobel_magnitude(const Image& img) {
  Image out(img.width(), img.height());
  if (!img.empty()) kernels::active().sobel_magnitude(img.data(), out.data(), img.width(), img.height());
  return out;
}

float sample_bilinear(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img(x0, y0) * (1.0 - fx) + img(x1, y0) * fx;
  const double bot = img(x0, y1) * (1.0 - fx) + img(x1, y1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

Image shift_image(const Image& img, double dx, double dy) {
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(x, y) = sample_bilinear(img, x - dx, y - dy);
  return out;
}

Mask canny(const Image& img, double sigma, double low, double high) {
  const int w = img.width(), h = img.height();
  Mask edges(w, h, 0);
  if (w < 3 || h < 3) return edges;
  const Image s = gaussian_blur(img, sigma);
  Image gx(w, h), gy(w, h), mag(w, h);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      const float vx = (s(xp, ym) + 2.0f * s(xp, y) + s(xp, yp)) - (s(xm, ym) + 2.0f * s(xm, y) + s(xm, yp));
      const float vy = (s(xm, yp) + 2.0f * s(x, yp) + s(xp, yp)) - (s(xm, ym) + 2.0f * s(x, ym) + s(xp, ym));
      gx(x, y) = vx / 8.0f;
      gy(x, y) = vy / 8.0f;
      mag(x, y) = std::sqrt(gx(x, y) * gx(x, y) + gy(x, y) * gy(x, y));
    }
  }
  // Non-maximum suppression along the quantized gradient direction.
  Image thin(w, h, 0.0f);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const float m = mag(x, y);
      if (m < low) continue;
      double angle = std::atan2(gy(x, y), gx(x, y)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      float n1, n2;
      if (angle < 22.5 || angle >= 157.5) {
        n1 = mag(x - 1, y), n2 = mag(x + 1, y);
      } else if (angle < 67.5) {
        n1 = mag(x - 1, y - 1), n2 = mag(x + 1, y + 1);
      } else if (angle < 112.5) {
        n1 = mag(x, y - 1), n2 = mag(x, y + 1);
      } else {
        n1 = mag(x + 1, y - 1), n2 = mag(x - 1, y + 1);
      }
      if (m > n1 && m >= n2) thin(x, y) = m;
    }
  }
  // Hysteresis.
  std::deque<PointI> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (thin(x, y) >= high) {
        edges(x, y) = 1;
        queue.push_back({x, y});
      }
  while (!queue.empty()) {
    const PointI p = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = p.x + dx, ny = p.y + dy;
        if (!edges.contains(nx, ny) || edges(nx, ny) || thin(nx, ny) < low || thin(nx, ny) <= 0.0f) continue;
        edges(nx, ny) = 1;
        queue.push_back({nx, ny});
      }
  }
  return edges;
}

// ---- masks -------------------------------------------------------------

std::size_t area(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](auto v) { return v != 0; }));
}

std::optional<PointF> centroid(const Mask& m) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(x, y)) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) return std::nullopt;
  return PointF{sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

BoxI bounding_box(const Mask& m) {
  BoxI b{m.width(), m.height(), -1, -1};
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(x, y)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  if (b.x1 < 0) return BoxI{};
  return b;
}

bool touches_border(const Mask& m) {
  const int w = m.width(), h = m.height();
  for (int x = 0; x < w; ++x)
    if (m(x, 0) || m(x, h - 1)) return true;
  for (int y = 0; y < h; ++y)
    if (m(0, y) || m(w - 1, y)) return true;
  return false;
}

Components label_components(const Mask& m, int connectivity) {
  Components c;
  const int w = m.width(), h = m.height();
  c.labels.assign(m.size(), 0);
  c.areas.push_back(0);
  std::vector<PointI> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (!m.values()[idx] || c.labels[idx]) continue;
      const int label = ++c.count;
      std::size_t count = 0;
      c.labels[idx] = label;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const PointI p = stack.back();
        stack.pop_back();
        ++count;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (connectivity == 4 && dx != 0 && dy != 0)) continue;
            const int nx = p.x + dx, ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (!m.values()[nidx] || c.labels[nidx]) continue;
            c.labels[nidx] = label;
            stack.push_back({nx, ny});
          }
      }
      c.areas.push_back(count);
    }
  }
  return c;
}

Mask largest_component(const Mask& m, int connectivity) {
  const Components c = label_components(m, connectivity);
  Mask out(m.width(), m.height(), 0);
  if (c.count == 0) return out;
  int best = 1;
  for (int l = 2; l <= c.count; ++l)
    if (c.areas[l] > c.areas[best]) best = l;
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = c.labels[i] == best ? 1 : 0;
  return out;
}

Mask remove_small_components(const Mask& m, std::size_t min_area, int connectivity) {
  const Components c = label_components(m, connectivity);
  Mask out(m.width(), m.height(), 0);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] = (c.labels[i] && c.areas[c.labels[i]] >= min_area) ? 1 : 0;
  return out;
}

Mask fill_holes(const Mask& m) {
  const int w = m.width(), h = m.height();
  Mask outside(w, h, 0);
  std::vector<PointI> stack;
  auto seed = [&](int x, int y) {
    if (!m(x, y) && !outside(x, y)) {
      outside(x, y) = 1;
      stack.push_back({x, y});
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  static constexpr std::array<PointI, 4> n4{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  while (!stack.empty()) {
    const PointI p = stack.back();
    stack.pop_back();
    for (const auto& d : n4) {
      const int nx = p.x + d.x, ny = p.y + d.y;
      if (nx >= 0 && ny >= 0 && nx < w && ny < h) seed(nx, ny);
    }
  }
  Mask out(w, h);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = outside.values()[i] ? 0 : 1;
  return out;
}

namespace {

template <bool Dilate>
Mask morph3(const Mask& m) {
  const int w = m.width(), h = m.height();
  Mask out(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool v = !Dilate;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          if constexpr (Dilate) v = v || m(nx, ny);
          else v = v && m(nx, ny);
        }
      out(x, y) = v ? 1 : 0;
    }
  return out;
}

}  // namespace

Mask dilate3(const Mask& m) { return morph3<true>(m); }
Mask erode3(const Mask& m) { return morph3<false>(m); }
Mask close3(const Mask& m) { return erode3(dilate3(m)); }
Mask open3(const Mask& m) { return dilate3(erode3(m)); }

Mask inner_boundary(const Mask& m) {
  const int w = m.width(), h = m.height();
  Mask out(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m(x, y)) continue;
      const bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1 || !m(x - 1, y) || !m(x + 1, y) ||
                        !m(x, y - 1) || !m(x, y + 1);
      out(x, y) = edge ? 1 : 0;
    }
  return out;
}

std::vector<PointI> trace_outer_contour(const Mask& m) {
  // Clockwise in image coordinates (y down), starting East.
  static constexpr std::array<PointI, 8> dirs{{{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};
  std::vector<PointI> contour;
  PointI start{-1, -1};
  for (int y = 0; y < m.height() && start.x < 0; ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(x, y)) {
        start = {x, y};
        break;
      }
  if (start.x < 0) return contour;
  auto fg = [&](PointI p) { return m.contains(p.x, p.y) && m(p.x, p.y) != 0; };
  auto dir_to = [&](PointI from, PointI to) {
    for (int d = 0; d < 8; ++d)
      if (from.x + dirs[d].x == to.x && from.y + dirs[d].y == to.y) return d;
    return 4;
  };
  contour.push_back(start);
  PointI cur = start;
  int back = 4;  // entered from the West (raster scan guarantees it is background)
  const std::size_t limit = 4 * m.size() + 8;
  for (std::size_t iter = 0; iter < limit; ++iter) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      if (fg({cur.x + dirs[d].x, cur.y + dirs[d].y})) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const PointI next{cur.x + dirs[found].x, cur.y + dirs[found].y};
    const int prev_d = (found + 7) % 8;
    const PointI bpix{cur.x + dirs[prev_d].x, cur.y + dirs[prev_d].y};
    if (cur == start && contour.size() > 1 && next == contour[1]) break;
    back = dir_to(next, bpix);
    cur = next;
    if (cur == start) continue;
    contour.push_back(cur);
  }
  return contour;
}

double contour_length(const std::vector<PointI>& contour) {
  if (contour.size() < 2) return 0.0;
  double len = 0.0;
  for (std::size_t i = 0; i < contour.size(); ++i) {
    const PointI& a = contour[i];
    const PointI& b = contour[(i + 1) % contour.size()];
    len += (a.x != b.x && a.y != b.y) ? std::numbers::sqrt2 : (a == b ? 0.0 : 1.0);
  }
  return len;
}

double convex_hull_area(const Mask& m) {
  const Mask b = inner_boundary(m);
  std::vector<std::pair<long, long>> pts;
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      if (b(x, y)) {
        pts.emplace_back(x, y);
        pts.emplace_back(x + 1, y);
        pts.emplace_back(x, y + 1);
        pts.emplace_back(x + 1, y + 1);
      }
  if (pts.size() < 3) return 0.0;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  auto cross = [](const auto& o, const auto& a, const auto& c) {
    return (a.first - o.first) * (c.second - o.second) - (a.second - o.second) * (c.first - o.first);
  };
  std::vector<std::pair<long, long>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double a2 = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& p = hull[i];
    const auto& q = hull[(i + 1) % hull.size()];
    a2 += static_cast<double>(p.first * q.second - q.first * p.second);
  }
  return std::abs(a2) / 2.0;
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_and: size mismatch");
  Mask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = (a.values()[i] && b.values()[i]) ? 1 : 0;
  return out;
}

bool is_subset(const Mask& inner, const Mask& outer) {
  if (!inner.same_shape(outer)) throw std::invalid_argument("is_subset: size mismatch");
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner.values()[i] && !outer.values()[i]) return false;
  return true;
}

}  // namespace oatp
