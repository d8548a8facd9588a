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

#include "oatp/segment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unistd.h>

#include "oatp/layout.hpp"
#include "oatp/parallel.hpp"

namespace oatp::seg {

namespace fs = std::filesystem;

namespace {

void check_prompt(const Image& img, PointI p) {
  if (!img.contains(p.x, p.y))
    throw ValidationError("prompt (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside the " +
                          std::to_string(img.width()) + "x" + std::to_string(img.height()) + " image");
}

Mask neighbourhood(int w, int h, PointI p) {
  Mask m(w, h, 0);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (m.contains(p.x + dx, p.y + dy)) m(p.x + dx, p.y + dy) = 1;
  return m;
}

// Best score first; equal scores prefer the smaller mask.
void sort_candidates(std::vector<Candidate>& c) {
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return area(a.mask) < area(b.mask);
  });
}

void add_unique(std::vector<Candidate>& out, Candidate c) {
  for (auto& o : out)
    if (o.mask == c.mask) {
      o.score = std::max(o.score, c.score);
      return;
    }
  out.push_back(std::move(c));
}

}  // namespace

std::vector<Candidate> PromptableSegmenter::propose(const Image& img) const {
  std::vector<Candidate> out;
  const int s = std::max(1, grid_spacing);
  for (int y = s / 2; y < img.height(); y += s)
    for (int x = s / 2; x < img.width(); x += s)
      for (auto& c : segment_at(img, {x, y}, caps().max_candidates))
        if (c.score > 0.0) add_unique(out, std::move(c));
  return out;
}

// ---- builtin ----------------------------------------------------------------

Json to_json(const BuiltinConfig& c) {
  return {{"tolerances", c.tolerances},
          {"smooth_sigma", c.smooth_sigma},
          {"min_edge", c.min_edge},
          {"grid_spacing", c.grid_spacing}};
}

BuiltinConfig builtin_config_from_json(const Json& j) {
  BuiltinConfig c;
  StrictObject o(j, "segment.segmenter.builtin");
  o.get("tolerances", c.tolerances)
      .get("smooth_sigma", c.smooth_sigma)
      .get("min_edge", c.min_edge)
      .get("grid_spacing", c.grid_spacing);
  o.finish();
  return c;
}

BuiltinSegmenter::BuiltinSegmenter(BuiltinConfig config) : config_(std::move(config)) {
  if (config_.tolerances.empty()) throw ValidationError("builtin segmenter: need at least one tolerance");
  for (double t : config_.tolerances)
    if (!(t > 0.0)) throw ValidationError("builtin segmenter: tolerances must be positive");
  if (config_.smooth_sigma < 0.0) throw ValidationError("builtin segmenter: smooth_sigma must be >= 0");
  if (config_.grid_spacing < 1) throw ValidationError("builtin segmenter: grid_spacing must be >= 1");
  grid_spacing = config_.grid_spacing;
}

BuiltinSegmenter::Prepared BuiltinSegmenter::prepare(const Image& img) const {
  Prepared p;
  p.smooth = gaussian_blur(img, config_.smooth_sigma);
  p.grad = sobel_magnitude(p.smooth);
  for (float& g : p.grad.values()) {
    g /= 8.0f;
    p.gmax = std::max(p.gmax, static_cast<double>(g));
  }
  return p;
}

Candidate BuiltinSegmenter::grow(const Prepared& p, PointI prompt, double tolerance, Mask* raw, bool* collapsed) const {
  const Image& s = p.smooth;
  const int w = s.width(), h = s.height();
  double seed = 0.0;
  int cnt = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (s.contains(prompt.x + dx, prompt.y + dy)) seed += s(prompt.x + dx, prompt.y + dy), ++cnt;
  seed /= cnt;

  Mask region(w, h, 0);
  std::vector<int> stack{prompt.y * w + prompt.x};
  region(prompt.x, prompt.y) = 1;
  BoxI box{prompt.x, prompt.y, prompt.x, prompt.y};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const int x = i % w, y = i / w;
    box.x0 = std::min(box.x0, x), box.x1 = std::max(box.x1, x);
    box.y0 = std::min(box.y0, y), box.y1 = std::max(box.y1, y);
    const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
    for (int k = 0; k < 4; ++k)
      if (region.contains(nx[k], ny[k]) && !region(nx[k], ny[k]) &&
          std::abs(s(nx[k], ny[k]) - seed) <= tolerance) {
        region(nx[k], ny[k]) = 1;
        stack.push_back(ny[k] * w + nx[k]);
      }
  }
  if (raw) *raw = region;

  // Hole filling and scoring inside the padded bounding box.
  const int x0 = std::max(0, box.x0 - 1), y0 = std::max(0, box.y0 - 1);
  const int x1 = std::min(w - 1, box.x1 + 1), y1 = std::min(h - 1, box.y1 + 1);
  const bool at_border = box.x0 == 0 || box.y0 == 0 || box.x1 == w - 1 || box.y1 == h - 1;
  if (!at_border) {
    Mask sub(x1 - x0 + 1, y1 - y0 + 1, 0);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) sub(x - x0, y - y0) = region(x, y);
    sub = fill_holes(sub);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) region(x, y) = sub(x - x0, y - y0);
  }
  double gsum = 0.0;
  std::size_t nb = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!region(x, y)) continue;
      const bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1 || !region(x - 1, y) || !region(x + 1, y) ||
                        !region(x, y - 1) || !region(x, y + 1);
      if (edge) gsum += p.grad(x, y), ++nb;
    }
  const double score = p.gmax > 0.0 && nb > 0 ? std::clamp(gsum / nb / p.gmax, 0.0, 1.0) : 0.0;
  const bool weak = score < config_.min_edge;
  if (collapsed) *collapsed = weak;
  if (weak) return {neighbourhood(w, h, prompt), 0.0};
  return {std::move(region), score};
}

std::vector<Candidate> BuiltinSegmenter::segment_at(const Image& img, PointI prompt, int n) const {
  check_prompt(img, prompt);
  if (n < 1) throw ValidationError("segment_at: need n >= 1");
  const Prepared p = prepare(img);
  std::vector<Candidate> out;
  for (double tol : config_.tolerances) add_unique(out, grow(p, prompt, tol, nullptr, nullptr));
  sort_candidates(out);
  if (static_cast<int>(out.size()) > n) out.resize(n);
  return out;
}

std::vector<Candidate> BuiltinSegmenter::propose(const Image& img) const {
  const Prepared p = prepare(img);
  const int s = config_.grid_spacing;
  std::vector<Mask> covered(config_.tolerances.size(), Mask(img.width(), img.height(), 0));
  std::vector<Candidate> out;
  for (int y = s / 2; y < img.height(); y += s)
    for (int x = s / 2; x < img.width(); x += s)
      for (std::size_t l = 0; l < config_.tolerances.size(); ++l) {
        if (covered[l](x, y)) continue;
        Mask raw;
        bool collapsed = false;
        Candidate c = grow(p, {x, y}, config_.tolerances[l], &raw, &collapsed);
        for (std::size_t i = 0; i < raw.size(); ++i) covered[l].data()[i] |= raw.data()[i];
        if (!collapsed) add_unique(out, std::move(c));
      }
  sort_candidates(out);
  return out;
}

// ---- external ---------------------------------------------------------------

void write_segment_request(std::ostream& os, const Image& img, PointI prompt, int n) {
  os << "OTSEG1 " << prompt.x << ' ' << prompt.y << ' ' << n << '\n';
  write_pgm(os, img);
}

void read_segment_request(std::istream& is, Image& img, PointI& prompt, int& n) {
  std::string magic;
  if (!(is >> magic >> prompt.x >> prompt.y >> n) || magic != "OTSEG1") throw IoError("bad segment request header");
  is.get();
  img = read_pgm(is, "segment request");
}

void write_segment_response(std::ostream& os, const std::vector<Candidate>& cands) {
  os << "OTSEGR1 " << cands.size() << '\n';
  for (const auto& c : cands) {
    std::ostringstream s;
    s.precision(17);
    s << c.score;
    os << s.str() << '\n';
    write_pgm(os, c.mask);
  }
}

std::vector<Candidate> read_segment_response(std::istream& is) {
  std::string magic;
  std::size_t m = 0;
  if (!(is >> magic >> m) || magic != "OTSEGR1") throw IoError("bad segment response header");
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < m; ++i) {
    Candidate c;
    if (!(is >> c.score)) throw IoError("bad segment response score");
    is.get();
    const Image mask = read_pgm(is, "segment response");
    c.mask = Mask(mask.width(), mask.height(), 0);
    for (std::size_t k = 0; k < mask.size(); ++k) c.mask.data()[k] = mask.data()[k] >= 128.0f ? 1 : 0;
    c.score = std::clamp(c.score, 0.0, 1.0);
    out.push_back(std::move(c));
  }
  return out;
}

ExternalSegmenter::ExternalSegmenter(std::string command, int grid) : command_(std::move(command)) {
  if (command_.empty()) throw ValidationError("external segmenter: empty command");
  grid_spacing = grid;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::vector<Candidate> run_external(const std::string& command, const Image& img, PointI prompt, int n) {
  static std::atomic<unsigned long> counter{0};
  const auto base = fs::temp_directory_path() /
                    ("oatp_seg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  const fs::path req = base.string() + ".req", resp = base.string() + ".resp";
  {
    std::ofstream os(req, std::ios::binary);
    if (!os) throw IoError("cannot write " + req.string());
    write_segment_request(os, img, prompt, n);
  }
  const std::string cmd = shell_quote(command) + " < " + shell_quote(req.string()) + " > " + shell_quote(resp.string());
  const int rc = std::system(cmd.c_str());
  std::vector<Candidate> out;
  std::string error;
  if (rc != 0) {
    error = "external segmenter '" + command + "' exited with status " + std::to_string(rc);
  } else {
    std::ifstream is(resp, std::ios::binary);
    try {
      out = read_segment_response(is);
    } catch (const std::exception& e) {
      error = std::string("external segmenter: ") + e.what();
    }
  }
  std::error_code ec;
  fs::remove(req, ec);
  fs::remove(resp, ec);
  if (!error.empty()) throw std::runtime_error(error);
  for (const auto& c : out)
    if (!c.mask.same_shape(Mask(img.width(), img.height())))
      throw std::runtime_error("external segmenter returned a mask of the wrong size");
  return out;
}

}  // namespace

std::vector<Candidate> ExternalSegmenter::segment_at(const Image& img, PointI prompt, int n) const {
  check_prompt(img, prompt);
  auto out = run_external(command_, img, prompt, n);
  if (out.empty()) throw std::runtime_error("external segmenter returned no candidates");
  sort_candidates(out);
  if (static_cast<int>(out.size()) > n) out.resize(n);
  return out;
}

std::vector<Candidate> ExternalSegmenter::propose(const Image& img) const {
  auto out = run_external(command_, img, {-1, -1}, 0);
  sort_candidates(out);
  return out;
}

std::unique_ptr<PromptableSegmenter> make_segmenter(const SegmenterConfig& c) {
  if (c.backend == "builtin") return std::make_unique<BuiltinSegmenter>(c.builtin);
  if (c.backend == "external") return std::make_unique<ExternalSegmenter>(c.command, c.builtin.grid_spacing);
  throw ValidationError("segment.segmenter.backend: unknown backend '" + c.backend + "'");
}

// ---- well and cavities ------------------------------------------------------

Mask select_well(const std::vector<Candidate>& proposals, PointI center) {
  const Mask* best = nullptr;
  std::size_t best_area = 0;
  for (const auto& c : proposals) {
    if (!c.mask.contains(center.x, center.y) || !c.mask(center.x, center.y)) continue;
    const std::size_t a = area(c.mask);
    if (!best || a > best_area) best = &c.mask, best_area = a;
  }
  if (!best) throw std::runtime_error("well not found: no proposal contains the frame centre");
  return *best;
}

Mask detect_well(const Image& frame, const PromptableSegmenter& seg) {
  return select_well(seg.propose(frame), {frame.width() / 2, frame.height() / 2});
}

double circularity(const Mask& m, std::size_t max_points) {
  const Mask filled = fill_holes(m);
  if (area(filled) < 2) throw ValidationError("circularity: mask must have more than one pixel");
  const auto contour = trace_outer_contour(filled);
  if (contour.size() < 3) throw ValidationError("circularity: need at least 3 boundary pixels");
  std::vector<PointI> pts;
  if (max_points < 3) max_points = 3;
  if (contour.size() <= max_points) {
    pts = contour;
  } else {
    for (std::size_t i = 0; i < max_points; ++i) pts.push_back(contour[i * contour.size() / max_points]);
  }
  double pmin = std::numeric_limits<double>::infinity(), pmax = 0.0;
  for (const auto& a : pts) {
    double far = 0.0;
    for (const auto& b : pts) {
      const double dx = a.x - b.x, dy = a.y - b.y;
      far = std::max(far, dx * dx + dy * dy);
    }
    pmin = std::min(pmin, far);
    pmax = std::max(pmax, far);
  }
  return pmax > 0.0 ? std::sqrt(pmin / pmax) : 0.0;
}

double dice(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ValidationError("dice: masks differ in size");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i], y = b.data()[i];
    na += x, nb += y, both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Json to_json(const CavityConfig& c) {
  return {{"circularity_threshold", c.circularity_threshold},
          {"nominal_diameter", c.nominal_diameter},
          {"area_min_factor", c.area_min_factor},
          {"area_max_factor", c.area_max_factor},
          {"pad", c.pad}};
}

CavityConfig cavity_config_from_json(const Json& j) {
  CavityConfig c;
  StrictObject o(j, "segment.cavity");
  o.get("circularity_threshold", c.circularity_threshold)
      .get("nominal_diameter", c.nominal_diameter)
      .get("area_min_factor", c.area_min_factor)
      .get("area_max_factor", c.area_max_factor)
      .get("pad", c.pad);
  o.finish();
  if (!(c.nominal_diameter > 0.0)) throw ValidationError("segment.cavity.nominal_diameter: must be > 0");
  if (c.area_min_factor < 0.0 || c.area_max_factor < c.area_min_factor)
    throw ValidationError("segment.cavity.area_min_factor: need 0 <= min <= max");
  if (c.pad < 0) throw ValidationError("segment.cavity.pad: must be >= 0");
  return c;
}

Mask Cavity::crop_mask() const {
  Mask out(crop_size, crop_size, 0);
  for (int y = 0; y < crop_size; ++y)
    for (int x = 0; x < crop_size; ++x)
      if (mask.contains(crop_x0 + x, crop_y0 + y)) out(x, y) = mask(crop_x0 + x, crop_y0 + y);
  return out;
}

CavitySet filter_cavities(const std::vector<Candidate>& proposals, const Mask& well, const CavityConfig& config) {
  CavitySet set;
  set.well = well;
  const double nominal = std::numbers::pi * config.nominal_diameter * config.nominal_diameter / 4.0;
  std::vector<Cavity> pass;
  for (const auto& p : proposals) {
    if (!p.mask.same_shape(well)) throw ValidationError("filter_cavities: proposal size differs from the well mask");
    if (!is_subset(p.mask, well)) {
      ++set.rejects.containment;
      continue;
    }
    const std::size_t a = area(p.mask);
    if (a < config.area_min_factor * nominal || a > config.area_max_factor * nominal) {
      ++set.rejects.area;
      continue;
    }
    const double circ = circularity(p.mask);
    if (circ < config.circularity_threshold) {
      ++set.rejects.circularity;
      continue;
    }
    Cavity c;
    c.mask = p.mask;
    c.center = *centroid(p.mask);
    c.score = p.score;
    c.circularity = circ;
    c.area = a;
    pass.push_back(std::move(c));
  }
  std::stable_sort(pass.begin(), pass.end(), [](const Cavity& a, const Cavity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.area < b.area;
  });
  for (auto& c : pass) {
    bool overlaps = false;
    for (const auto& k : set.cavities)
      if (area(mask_and(c.mask, k.mask)) > 0) {
        overlaps = true;
        break;
      }
    if (overlaps) ++set.rejects.duplicate;
    else set.cavities.push_back(std::move(c));
  }
  // Raster order: rows of centres within half a diameter, then x.
  auto& cs = set.cavities;
  std::sort(cs.begin(), cs.end(), [](const Cavity& a, const Cavity& b) { return a.center.y < b.center.y; });
  for (std::size_t i = 0; i < cs.size();) {
    std::size_t j = i + 1;
    while (j < cs.size() && cs[j].center.y - cs[i].center.y <= config.nominal_diameter / 2.0) ++j;
    std::sort(cs.begin() + i, cs.begin() + j, [](const Cavity& a, const Cavity& b) { return a.center.x < b.center.x; });
    i = j;
  }
  const int side = static_cast<int>(std::lround(config.nominal_diameter)) + 2 * config.pad;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    cs[i].id = static_cast<int>(i);
    cs[i].crop_size = side;
    cs[i].crop_x0 = static_cast<int>(std::lround(cs[i].center.x)) - side / 2;
    cs[i].crop_y0 = static_cast<int>(std::lround(cs[i].center.y)) - side / 2;
  }
  if (cs.empty()) {
    const auto& r = set.rejects;
    throw std::runtime_error("no cavities found among " + std::to_string(proposals.size()) +
                             " proposals (rejected: containment " + std::to_string(r.containment) + ", area " +
                             std::to_string(r.area) + ", circularity " + std::to_string(r.circularity) +
                             ", duplicate " + std::to_string(r.duplicate) + ")");
  }
  return set;
}

CavitySet detect_cavities(const Image& frame, const Mask& well, const PromptableSegmenter& seg,
                          const CavityConfig& config) {
  return filter_cavities(seg.propose(frame), well, config);
}

Image crop(const Image& img, int x0, int y0, int size) {
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      out(x, y) = img(std::clamp(x0 + x, 0, img.width() - 1), std::clamp(y0 + y, 0, img.height() - 1));
  return out;
}

Timelapse crop_timelapse(const Timelapse& frames, const Cavity& c) {
  Timelapse out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(crop(f, c.crop_x0, c.crop_y0, c.crop_size));
  return out;
}

// ---- tracking ---------------------------------------------------------------

PromptResult initial_prompt(const Timelapse& crops, const InitialPromptConfig& config, const Mask* region) {
  if (crops.size() < 2) throw ValidationError("initial_prompt: need at least 2 frames");
  const Image& last = crops.back();
  for (const auto& c : crops)
    if (!c.same_shape(last)) throw ValidationError("initial_prompt: frame sizes differ");
  const int w = last.width(), h = last.height();
  std::vector<double> mean(last.size(), 0.0);
  for (const auto& c : crops)
    for (std::size_t i = 0; i < c.size(); ++i) mean[i] += c.data()[i];
  Image diff(w, h);
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff.data()[i] = static_cast<float>(last.data()[i] - mean[i] / static_cast<double>(crops.size()));

  Mask edges = canny(diff, config.canny_sigma, config.canny_low, config.canny_high);
  if (region) {
    if (!region->same_shape(edges)) throw ValidationError("initial_prompt: region size differs");
    Mask allowed = *region;
    for (int i = 0; i < config.edge_margin; ++i) allowed = erode3(allowed);
    edges = mask_and(edges, allowed);
  }
  Mask m = open3(fill_holes(close3(dilate3(edges))));
  m = largest_component(remove_small_components(m, config.min_area));
  PromptResult r;
  if (const auto c = centroid(m)) {
    r.point = *c;
  } else {
    r.point = {(w - 1) / 2.0, (h - 1) / 2.0};
    r.fallback = true;
  }
  return r;
}

PointF exp_weighted_average(const std::vector<PointF>& points, int window, double beta) {
  if (points.empty()) throw ValidationError("exp_weighted_average: no points");
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("exp_weighted_average: beta must be in (0, 1)");
  if (window < 1) throw ValidationError("exp_weighted_average: window must be >= 1");
  const std::size_t n = std::min(points.size(), static_cast<std::size_t>(window));
  double sw = 0.0, sx = 0.0, sy = 0.0, wgt = 1.0;
  for (std::size_t i = 0; i < n; ++i, wgt *= beta) {
    sw += wgt;
    sx += wgt * points[i].x;
    sy += wgt * points[i].y;
  }
  return {sx / sw, sy / sw};
}

Json to_json(const TrackConfig& c) {
  return {{"beta", c.beta},
          {"window", c.window},
          {"ewa_on_centroids", c.ewa_on_centroids},
          {"candidates", c.candidates},
          {"max_flagged_fraction", c.max_flagged_fraction},
          {"max_cavity_fraction", c.max_cavity_fraction},
          {"initial",
           {{"canny_sigma", c.initial.canny_sigma},
            {"canny_low", c.initial.canny_low},
            {"canny_high", c.initial.canny_high},
            {"min_area", c.initial.min_area},
            {"edge_margin", c.initial.edge_margin}}}};
}

TrackConfig track_config_from_json(const Json& j) {
  TrackConfig c;
  StrictObject o(j, "segment.track");
  o.get("beta", c.beta)
      .get("window", c.window)
      .get("ewa_on_centroids", c.ewa_on_centroids)
      .get("candidates", c.candidates)
      .get("max_flagged_fraction", c.max_flagged_fraction)
      .get("max_cavity_fraction", c.max_cavity_fraction);
  if (o.has("initial")) {
    StrictObject i(o.child("initial"), "segment.track.initial");
    i.get("canny_sigma", c.initial.canny_sigma)
        .get("canny_low", c.initial.canny_low)
        .get("canny_high", c.initial.canny_high)
        .get("min_area", c.initial.min_area)
        .get("edge_margin", c.initial.edge_margin);
    i.finish();
  }
  o.finish();
  if (!(c.beta > 0.0 && c.beta < 1.0)) throw ValidationError("segment.track.beta: must be in (0, 1)");
  if (c.window < 1) throw ValidationError("segment.track.window: must be >= 1");
  if (c.candidates < 1) throw ValidationError("segment.track.candidates: must be >= 1");
  return c;
}

namespace {

PointI to_pixel(PointF p, int w, int h) {
  return {std::clamp(static_cast<int>(std::lround(p.x)), 0, w - 1),
          std::clamp(static_cast<int>(std::lround(p.y)), 0, h - 1)};
}

}  // namespace

OrganoidTrack propagate_track(const Timelapse& crops, const PromptableSegmenter& seg, const TrackConfig& config,
                              const Mask* cavity) {
  const int f = static_cast<int>(crops.size());
  if (f < 2) throw ValidationError("propagate_track: need at least 2 frames");
  const int w = crops[0].width(), h = crops[0].height();
  if (cavity && (cavity->width() != w || cavity->height() != h))
    throw ValidationError("propagate_track: cavity mask size differs from the crops");

  OrganoidTrack tr;
  tr.masks.assign(f, Mask(w, h, 0));
  tr.prompts.assign(f, PointF{});
  tr.recorded.assign(f, PointF{});
  tr.chosen.assign(f, -1);
  tr.dice_prev.assign(f, 1.0);
  tr.flagged.assign(f, false);

  const PromptResult init = initial_prompt(crops, config.initial, cavity);
  tr.initial_fallback = init.fallback;

  for (int t = f - 1; t >= 0; --t) {
    PointF prompt = init.point;
    if (t < f - 1) {
      std::vector<PointF> recent;
      for (int s = t + 1; s < f && s <= t + config.window; ++s) recent.push_back(tr.recorded[s]);
      prompt = exp_weighted_average(recent, config.window, config.beta);
    }
    tr.prompts[t] = prompt;
    std::vector<Candidate> cands;
    try {
      cands = seg.segment_at(crops[t], to_pixel(prompt, w, h), config.candidates);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception&) {
      cands.clear();
    }
    if (cands.empty()) {
      tr.flagged[t] = true;
      tr.recorded[t] = prompt;
      tr.dice_prev[t] = t < f - 1 ? dice(tr.masks[t], tr.masks[t + 1]) : 1.0;
      continue;
    }
    if (cavity) {
      // A candidate that fills the cavity is the cavity itself, not an organoid.
      const double limit = config.max_cavity_fraction * static_cast<double>(area(*cavity));
      for (auto& c : cands) {
        c.mask = mask_and(c.mask, *cavity);
        if (static_cast<double>(area(c.mask)) > limit) c.mask = Mask(w, h, 0);
      }
    }
    int pick = 0;
    if (t < f - 1) {
      double best = -1.0;
      for (int i = 0; i < static_cast<int>(cands.size()); ++i) {
        const double d = dice(cands[i].mask, tr.masks[t + 1]);
        const auto& c = cands[i];
        const auto& b = cands[pick];
        if (d > best || (d == best && (c.score > b.score || (c.score == b.score && area(c.mask) < area(b.mask))))) {
          best = d;
          pick = i;
        }
      }
    }
    tr.chosen[t] = pick;
    tr.masks[t] = largest_component(cands[pick].mask);
    if (t < f - 1) tr.dice_prev[t] = dice(tr.masks[t], tr.masks[t + 1]);
    const auto c = centroid(tr.masks[t]);
    tr.recorded[t] = config.ewa_on_centroids && c ? *c : prompt;
  }
  const auto nflag = std::count(tr.flagged.begin(), tr.flagged.end(), true);
  tr.valid = static_cast<double>(nflag) <= config.max_flagged_fraction * f;
  return tr;
}

Json to_json(const SegmentConfig& c) {
  return {{"segmenter", {{"backend", c.segmenter.backend}, {"command", c.segmenter.command}, {"builtin", to_json(c.segmenter.builtin)}}},
          {"cavity", to_json(c.cavity)},
          {"track", to_json(c.track)}};
}

SegmentConfig segment_config_from_json(const Json& j) {
  SegmentConfig c;
  StrictObject o(j, "segment");
  if (o.has("segmenter")) {
    StrictObject s(o.child("segmenter"), "segment.segmenter");
    s.get("backend", c.segmenter.backend).get("command", c.segmenter.command);
    if (s.has("builtin")) c.segmenter.builtin = builtin_config_from_json(s.child("builtin"));
    s.finish();
  }
  if (o.has("cavity")) c.cavity = cavity_config_from_json(o.child("cavity"));
  if (o.has("track")) c.track = track_config_from_json(o.child("track"));
  o.finish();
  return c;
}

WellSegmentation segment_well(const Timelapse& frames, const PromptableSegmenter& seg, const SegmentConfig& config,
                              int workers) {
  if (frames.size() < 2) throw ValidationError("segment_well: need at least 2 frames");
  WellSegmentation out;
  const auto proposals = seg.propose(frames[0]);
  const Mask well = select_well(proposals, {frames[0].width() / 2, frames[0].height() / 2});
  out.cavities = filter_cavities(proposals, well, config.cavity);
  out.tracks.resize(out.cavities.cavities.size());
  parallel_for(out.tracks.size(), workers, [&](std::size_t i) {
    const Cavity& c = out.cavities.cavities[i];
    const Mask cm = c.crop_mask();
    out.tracks[i] = propagate_track(crop_timelapse(frames, c), seg, config.track, &cm);
  });
  return out;
}

// ---- files ------------------------------------------------------------------

void write_segmentation(const fs::path& dir, const WellSegmentation& s) {
  fs::create_directories(dir);
  write_pgm(dir / "well.pgm", s.cavities.well);
  Json cavs = Json::array();
  for (std::size_t i = 0; i < s.cavities.cavities.size(); ++i) {
    const Cavity& c = s.cavities.cavities[i];
    cavs.push_back({{"id", c.id},
                    {"center", {c.center.x, c.center.y}},
                    {"score", c.score},
                    {"circularity", c.circularity},
                    {"area", c.area},
                    {"crop_x0", c.crop_x0},
                    {"crop_y0", c.crop_y0},
                    {"crop_size", c.crop_size}});
    const fs::path cd = dir / layout::cavity_dir(c.id);
    fs::create_directories(cd);
    write_pgm(cd / "cavity.pgm", c.crop_mask());
    if (i < s.tracks.size()) {
      const OrganoidTrack& t = s.tracks[i];
      for (std::size_t k = 0; k < t.masks.size(); ++k) write_pgm(cd / layout::frame_file(static_cast<int>(k)), t.masks[k]);
      Json prompts = Json::array(), recorded = Json::array(), flagged = Json::array();
      for (const auto& p : t.prompts) prompts.push_back({p.x, p.y});
      for (const auto& p : t.recorded) recorded.push_back({p.x, p.y});
      for (bool b : t.flagged) flagged.push_back(b);
      write_json_file(cd / "track.json", {{"frames", t.masks.size()},
                                          {"prompts", prompts},
                                          {"recorded", recorded},
                                          {"chosen", t.chosen},
                                          {"dice_prev", t.dice_prev},
                                          {"flagged", flagged},
                                          {"initial_fallback", t.initial_fallback},
                                          {"valid", t.valid}});
    }
  }
  const auto& r = s.cavities.rejects;
  write_json_file(dir / "cavities.json",
                  {{"width", s.cavities.well.width()},
                   {"height", s.cavities.well.height()},
                   {"cavities", cavs},
                   {"rejected",
                    {{"containment", r.containment}, {"area", r.area}, {"circularity", r.circularity}, {"duplicate", r.duplicate}}}});
}

WellSegmentation read_segmentation(const fs::path& dir) {
  const Json j = read_json_file(dir / "cavities.json");
  WellSegmentation s;
  s.cavities.well = read_mask_pgm(dir / "well.pgm");
  const int w = j.at("width").get<int>(), h = j.at("height").get<int>();
  const auto& r = j.at("rejected");
  s.cavities.rejects = {r.at("containment").get<std::size_t>(), r.at("area").get<std::size_t>(),
                        r.at("circularity").get<std::size_t>(), r.at("duplicate").get<std::size_t>()};
  for (const auto& jc : j.at("cavities")) {
    Cavity c;
    c.id = jc.at("id").get<int>();
    c.center = {jc.at("center")[0].get<double>(), jc.at("center")[1].get<double>()};
    c.score = jc.at("score").get<double>();
    c.circularity = jc.at("circularity").get<double>();
    c.area = jc.at("area").get<std::size_t>();
    c.crop_x0 = jc.at("crop_x0").get<int>();
    c.crop_y0 = jc.at("crop_y0").get<int>();
    c.crop_size = jc.at("crop_size").get<int>();
    const fs::path cd = dir / layout::cavity_dir(c.id);
    const Mask cm = read_mask_pgm(cd / "cavity.pgm");
    c.mask = Mask(w, h, 0);
    for (int y = 0; y < cm.height(); ++y)
      for (int x = 0; x < cm.width(); ++x)
        if (cm(x, y) && c.mask.contains(c.crop_x0 + x, c.crop_y0 + y)) c.mask(c.crop_x0 + x, c.crop_y0 + y) = 1;
    if (fs::exists(cd / "track.json")) {
      const Json jt = read_json_file(cd / "track.json");
      OrganoidTrack t;
      const int n = jt.at("frames").get<int>();
      for (int k = 0; k < n; ++k) t.masks.push_back(read_mask_pgm(cd / layout::frame_file(k)));
      for (const auto& p : jt.at("prompts")) t.prompts.push_back({p[0].get<double>(), p[1].get<double>()});
      for (const auto& p : jt.at("recorded")) t.recorded.push_back({p[0].get<double>(), p[1].get<double>()});
      t.chosen = jt.at("chosen").get<std::vector<int>>();
      t.dice_prev = jt.at("dice_prev").get<std::vector<double>>();
      for (const auto& b : jt.at("flagged")) t.flagged.push_back(b.get<bool>());
      t.initial_fallback = jt.at("initial_fallback").get<bool>();
      t.valid = jt.at("valid").get<bool>();
      s.tracks.push_back(std::move(t));
    }
    s.cavities.cavities.push_back(std::move(c));
  }
  return s;
}

}  // namespace oatp::seg
