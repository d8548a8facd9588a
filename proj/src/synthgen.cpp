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

#include "oatp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oatp/eval.hpp"
#include "oatp/imgproc.hpp"
#include "oatp/layout.hpp"
#include "oatp/parallel.hpp"
#include "oatp/random.hpp"
#include "oatp/version.hpp"

namespace oatp::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kGtPad = 6;

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw ValidationError("SynthConfig." + field + ": " + why);
}

double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

}  // namespace

SynthConfig SynthConfig::paper_scale() {
  SynthConfig c;
  c.wells = 116;
  c.frames = 200;
  c.cavities_min = 68;
  c.cavities_max = 74;
  c.width = 640;
  c.height = 640;
  c.growth_rate_min = 0.25;
  c.growth_rate_max = 1.25;
  c.shrink_rate_min = 0.125;
  c.shrink_rate_max = 0.75;
  return c;
}

double SynthConfig::effective_well_radius() const {
  return well_radius > 0.0 ? well_radius : 0.475 * std::min(width, height);
}

std::vector<PointF> cavity_grid(const SynthConfig& c) {
  const double cx = (c.width - 1) / 2.0, cy = (c.height - 1) / 2.0;
  const double limit = c.effective_well_radius() - c.cavity_diameter / 2.0 - c.look.rim_width - 4.0;
  std::vector<PointF> out;
  if (limit < 0.0 || c.cavity_pitch <= 0.0) return out;
  const int n = static_cast<int>(std::floor(limit / c.cavity_pitch));
  for (int j = -n; j <= n; ++j)
    for (int i = -n; i <= n; ++i) {
      const double x = i * c.cavity_pitch, y = j * c.cavity_pitch;
      if (std::hypot(x, y) <= limit) out.push_back({cx + x, cy + y});
    }
  return out;
}

void SynthConfig::validate() const {
  if (wells < 1) bad("wells", "must be >= 1");
  if (cavities_min < 1) bad("cavities_min", "must be >= 1");
  if (cavities_max < cavities_min) bad("cavities_max", "must be >= cavities_min");
  if (frames < 2) bad("frames", "must be >= 2");
  if (width < 32 || height < 32) bad("width", "frame must be at least 32x32");
  if (overlap < 0) bad("overlap", "must be >= 0");
  if ((width + overlap) % 2 != 0) bad("overlap", "width + overlap must be even");
  if ((height + overlap) % 2 != 0) bad("overlap", "height + overlap must be even");
  if (overlap >= quadrant_width() || overlap >= quadrant_height()) bad("overlap", "must be smaller than a quadrant");
  if (z_levels < 1) bad("z_levels", "must be >= 1");
  if (!(cavity_diameter > 4.0)) bad("cavity_diameter", "must be > 4");
  if (cavity_pitch < cavity_diameter + 2.0 * look.rim_width) bad("cavity_pitch", "cavities would overlap");
  if (initial_area_min < 0.0 || initial_area_max < initial_area_min) bad("initial_area_min", "need 0 <= min <= max");
  if (growth_rate_min < 0.0 || growth_rate_max < growth_rate_min) bad("growth_rate_min", "need 0 <= min <= max");
  if (respond_initial_area_min < 0.0 || respond_initial_area_max < respond_initial_area_min)
    bad("respond_initial_area_min", "need 0 <= min <= max");
  if (shrink_rate_min < 0.0 || shrink_rate_max < shrink_rate_min) bad("shrink_rate_min", "need 0 <= min <= max");
  if (respond_fraction < 0.0 || respond_fraction > 1.0) bad("respond_fraction", "must be in [0, 1]");
  if (min_area < 0.0) bad("min_area", "must be >= 0");
  if (well_scale_min <= 0.0 || well_scale_max < well_scale_min) bad("well_scale_min", "need 0 < min <= max");
  if (noise_sigma < 0.0) bad("noise_sigma", "must be >= 0");
  if (atp_noise < 0.0) bad("atp_noise", "must be >= 0");
  if (max_drift < 0.0) bad("max_drift", "must be >= 0");
  if (contrast_drift < 0.0 || contrast_drift >= 1.0) bad("contrast_drift", "must be in [0, 1)");
  if (defocus_sigma_min < 0.0 || defocus_sigma_step < 0.0) bad("defocus_sigma_min", "must be >= 0");
  if (organoid_offset < 0.0 || organoid_offset > 0.5) bad("organoid_offset", "must be in [0, 0.5]");
  if (organoid_motion < 0.0) bad("organoid_motion", "must be >= 0");
  if (folds < 1) bad("folds", "must be >= 1");
  if (folds > wells) bad("folds", "must not exceed wells");
  const double max_area = std::max(initial_area_max + growth_rate_max * (frames - 1), respond_initial_area_max);
  const double max_axis = std::sqrt(max_area * 1.4 / std::numbers::pi);
  const double room = cavity_diameter / 2.0 - organoid_offset * cavity_diameter / 2.0 - organoid_motion;
  if (max_axis > room) bad("growth_rate_max", "largest organoid would not fit inside its cavity");
  const auto grid = cavity_grid(*this);
  if (static_cast<int>(grid.size()) < cavities_max)
    bad("cavities_max", "only " + std::to_string(grid.size()) + " cavity positions fit in the well");
}

Json to_json(const SynthConfig& c) {
  return {{"wells", c.wells},
          {"cavities_min", c.cavities_min},
          {"cavities_max", c.cavities_max},
          {"frames", c.frames},
          {"width", c.width},
          {"height", c.height},
          {"overlap", c.overlap},
          {"z_levels", c.z_levels},
          {"cavity_diameter", c.cavity_diameter},
          {"cavity_pitch", c.cavity_pitch},
          {"well_radius", c.well_radius},
          {"initial_area_min", c.initial_area_min},
          {"initial_area_max", c.initial_area_max},
          {"growth_rate_min", c.growth_rate_min},
          {"growth_rate_max", c.growth_rate_max},
          {"respond_fraction", c.respond_fraction},
          {"respond_initial_area_min", c.respond_initial_area_min},
          {"respond_initial_area_max", c.respond_initial_area_max},
          {"shrink_rate_min", c.shrink_rate_min},
          {"shrink_rate_max", c.shrink_rate_max},
          {"min_area", c.min_area},
          {"well_scale_min", c.well_scale_min},
          {"well_scale_max", c.well_scale_max},
          {"organoid_offset", c.organoid_offset},
          {"organoid_motion", c.organoid_motion},
          {"noise_sigma", c.noise_sigma},
          {"max_drift", c.max_drift},
          {"contrast_drift", c.contrast_drift},
          {"defocus_sigma_min", c.defocus_sigma_min},
          {"defocus_sigma_step", c.defocus_sigma_step},
          {"atp_slope", c.atp_slope},
          {"atp_intercept", c.atp_intercept},
          {"atp_noise", c.atp_noise},
          {"folds", c.folds},
          {"seed", c.seed},
          {"appearance",
           {{"plate", c.look.plate},
            {"well", c.look.well},
            {"cavity", c.look.cavity},
            {"rim", c.look.rim},
            {"rim_width", c.look.rim_width},
            {"organoid", c.look.organoid},
            {"texture", c.look.texture}}}};
}

SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  StrictObject o(j, "synth");
  o.get("wells", c.wells)
      .get("cavities_min", c.cavities_min)
      .get("cavities_max", c.cavities_max)
      .get("frames", c.frames)
      .get("width", c.width)
      .get("height", c.height)
      .get("overlap", c.overlap)
      .get("z_levels", c.z_levels)
      .get("cavity_diameter", c.cavity_diameter)
      .get("cavity_pitch", c.cavity_pitch)
      .get("well_radius", c.well_radius)
      .get("initial_area_min", c.initial_area_min)
      .get("initial_area_max", c.initial_area_max)
      .get("growth_rate_min", c.growth_rate_min)
      .get("growth_rate_max", c.growth_rate_max)
      .get("respond_fraction", c.respond_fraction)
      .get("respond_initial_area_min", c.respond_initial_area_min)
      .get("respond_initial_area_max", c.respond_initial_area_max)
      .get("shrink_rate_min", c.shrink_rate_min)
      .get("shrink_rate_max", c.shrink_rate_max)
      .get("min_area", c.min_area)
      .get("well_scale_min", c.well_scale_min)
      .get("well_scale_max", c.well_scale_max)
      .get("organoid_offset", c.organoid_offset)
      .get("organoid_motion", c.organoid_motion)
      .get("noise_sigma", c.noise_sigma)
      .get("max_drift", c.max_drift)
      .get("contrast_drift", c.contrast_drift)
      .get("defocus_sigma_min", c.defocus_sigma_min)
      .get("defocus_sigma_step", c.defocus_sigma_step)
      .get("atp_slope", c.atp_slope)
      .get("atp_intercept", c.atp_intercept)
      .get("atp_noise", c.atp_noise)
      .get("folds", c.folds)
      .get("seed", c.seed);
  if (o.has("appearance")) {
    StrictObject a(o.child("appearance"), "synth.appearance");
    a.get("plate", c.look.plate)
        .get("well", c.look.well)
        .get("cavity", c.look.cavity)
        .get("rim", c.look.rim)
        .get("rim_width", c.look.rim_width)
        .get("organoid", c.look.organoid)
        .get("texture", c.look.texture);
    a.finish();
  }
  o.finish();
  return c;
}

double atp_label(const std::vector<std::size_t>& final_areas, double slope, double intercept, double noise_factor) {
  double total = 0.0;
  for (std::size_t a : final_areas) total += static_cast<double>(a);
  return (slope * total + intercept) * noise_factor;
}

Mask CavityTruth::place(const Mask& crop, int width, int height) const {
  Mask out(width, height, 0);
  for (int y = 0; y < crop.height(); ++y)
    for (int x = 0; x < crop.width(); ++x) {
      const int fx = crop_x0 + x, fy = crop_y0 + y;
      if (out.contains(fx, fy) && crop(x, y)) out(fx, fy) = 1;
    }
  return out;
}

WellGenerator::WellGenerator(const SynthConfig& config, int well_index) : config_(config) {
  config_.validate();
  if (well_index < 0 || well_index >= config_.wells)
    throw ValidationError("well_index " + std::to_string(well_index) + " out of range");
  const SynthConfig& c = config_;
  const int f = c.frames;
  Rng rng(derive_seed(c.seed, "well", static_cast<std::uint64_t>(well_index)));

  gt_.width = c.width;
  gt_.height = c.height;
  gt_.responding = rng.uniform() < c.respond_fraction;
  gt_.focus_z = static_cast<int>(rng.uniform_int(0, c.z_levels - 1));
  gt_.well_radius = c.effective_well_radius();

  const int n = static_cast<int>(rng.uniform_int(c.cavities_min, c.cavities_max));
  auto grid = cavity_grid(c);
  rng.shuffle(grid);
  grid.resize(n);
  std::sort(grid.begin(), grid.end(), [](const PointF& a, const PointF& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });

  gt_.drift.assign(f, PointF{});
  for (int t = 1; t < f; ++t) {
    PointF d;
    do {
      d = {rng.uniform(-c.max_drift, c.max_drift), rng.uniform(-c.max_drift, c.max_drift)};
    } while (std::hypot(d.x, d.y) > c.max_drift);
    gt_.drift[t] = d;
  }
  contrast_.resize(f);
  offset_.resize(f);
  for (int t = 0; t < f; ++t) {
    const double s = static_cast<double>(t) / (f - 1);
    contrast_[t] = 1.0 - c.contrast_drift * s;
    offset_[t] = 6.0 * s;
  }

  const double scale = Rng(derive_seed(c.seed, "well_scale", static_cast<std::uint64_t>(well_index)))
                           .uniform(c.well_scale_min, c.well_scale_max);
  const double radius = c.cavity_diameter / 2.0;
  for (int i = 0; i < n; ++i) {
    Organoid o;
    const double r = radius * c.organoid_offset * std::sqrt(rng.uniform());
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    o.start = {grid[i].x + r * std::cos(phi), grid[i].y + r * std::sin(phi)};
    const double travel = rng.uniform(0.0, c.organoid_motion);
    const double dir = 2.0 * std::numbers::pi * rng.uniform();
    o.velocity = {travel * std::cos(dir) / (f - 1), travel * std::sin(dir) / (f - 1)};
    if (gt_.responding) {
      o.area0 = rng.uniform(c.respond_initial_area_min, c.respond_initial_area_max);
      o.rate = rng.uniform(c.shrink_rate_min, c.shrink_rate_max);
    } else {
      o.area0 = rng.uniform(c.initial_area_min, c.initial_area_max);
      o.rate = rng.uniform(c.growth_rate_min, c.growth_rate_max);
    }
    o.area0 *= scale;
    o.rate *= scale;
    o.aspect = rng.uniform(1.0, 1.3);
    o.angle = rng.uniform(0.0, std::numbers::pi);
    o.aspect_jitter.resize(f);
    o.angle_jitter.resize(f);
    for (int t = 0; t < f; ++t) {
      o.aspect_jitter[t] = std::exp(0.02 * rng.normal());
      o.angle_jitter[t] = 0.04 * rng.normal();
    }
    o.kx = 2.0 * std::numbers::pi / rng.uniform(4.0, 7.0);
    o.ky = 2.0 * std::numbers::pi / rng.uniform(4.0, 7.0);
    o.phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
    o.phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
    organoids_.push_back(std::move(o));
  }

  // Ground truth in reference coordinates.
  gt_.well_mask = Mask(c.width, c.height, 0);
  const double wcx = (c.width - 1) / 2.0, wcy = (c.height - 1) / 2.0;
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x) gt_.well_mask(x, y) = std::hypot(x - wcx, y - wcy) <= gt_.well_radius ? 1 : 0;

  const int side = static_cast<int>(std::lround(c.cavity_diameter)) + 2 * kGtPad;
  std::vector<std::size_t> final_areas;
  for (int i = 0; i < n; ++i) {
    CavityTruth ct;
    ct.id = i;
    ct.center = grid[i];
    ct.radius = radius;
    ct.crop_size = side;
    ct.crop_x0 = static_cast<int>(std::lround(grid[i].x)) - side / 2;
    ct.crop_y0 = static_cast<int>(std::lround(grid[i].y)) - side / 2;
    ct.cavity_crop = Mask(side, side, 0);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        ct.cavity_crop(x, y) =
            std::hypot(ct.crop_x0 + x - grid[i].x, ct.crop_y0 + y - grid[i].y) <= radius ? 1 : 0;
    for (int t = 0; t < f; ++t) {
      const Ellipse e = ellipse_at(organoids_[i], t);
      Mask m(side, side, 0);
      if (e.a > 0.0 && e.b > 0.0) {
        const double ca = std::cos(e.angle), sa = std::sin(e.angle);
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) {
            const double dx = ct.crop_x0 + x - e.c.x, dy = ct.crop_y0 + y - e.c.y;
            const double u = (dx * ca + dy * sa) / e.a, v = (-dx * sa + dy * ca) / e.b;
            m(x, y) = (u * u + v * v <= 1.0 && ct.cavity_crop(x, y)) ? 1 : 0;
          }
      }
      ct.analytic_area.push_back(area_at(organoids_[i], t));
      ct.centroid.push_back(e.c);
      ct.organoid_crops.push_back(std::move(m));
    }
    ct.final_area_px = area(ct.organoid_crops.back());
    final_areas.push_back(ct.final_area_px);
    gt_.cavities.push_back(std::move(ct));
  }
  gt_.atp_noise_factor = std::max(1e-3, 1.0 + c.atp_noise * rng.normal());
  gt_.atp = atp_label(final_areas, c.atp_slope, c.atp_intercept, gt_.atp_noise_factor);
  noise_seed_ = derive_seed(c.seed, "noise", static_cast<std::uint64_t>(well_index));

  record_.index = well_index;
  record_.well_id = layout::well_dir(well_index);
  record_.atp = gt_.atp;
  record_.n_cavities = n;
  record_.responding = gt_.responding;
  record_.raw_dir = record_.well_id;
  record_.gt_dir = fs::path(record_.well_id) / "gt";
}

double WellGenerator::area_at(const Organoid& o, int t) const {
  if (gt_.responding) return std::max(o.area0 - o.rate * t, std::min(config_.min_area, o.area0));
  return o.area0 + o.rate * t;
}

WellGenerator::Ellipse WellGenerator::ellipse_at(const Organoid& o, int t) const {
  Ellipse e;
  e.c = {o.start.x + o.velocity.x * t, o.start.y + o.velocity.y * t};
  const double a_area = area_at(o, t);
  const double aspect = std::max(1.0, o.aspect * o.aspect_jitter[t]);
  e.a = std::sqrt(a_area * aspect / std::numbers::pi);
  e.b = std::sqrt(a_area / (aspect * std::numbers::pi));
  e.angle = o.angle + o.angle_jitter[t];
  return e;
}

Image WellGenerator::sharp_canvas(int t) const {
  const SynthConfig& c = config_;
  const Appearance& look = c.look;
  const PointF d = gt_.drift.at(t);
  Image img(c.width, c.height, static_cast<float>(look.plate));
  const double wcx = (c.width - 1) / 2.0 + d.x, wcy = (c.height - 1) / 2.0 + d.y;
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x) {
      const double cov = coverage(std::hypot(x - wcx, y - wcy) - gt_.well_radius);
      img(x, y) = static_cast<float>(look.plate + (look.well - look.plate) * cov);
    }
  const double radius = c.cavity_diameter / 2.0;
  for (std::size_t i = 0; i < gt_.cavities.size(); ++i) {
    const PointF cc{gt_.cavities[i].center.x + d.x, gt_.cavities[i].center.y + d.y};
    const Ellipse e0 = ellipse_at(organoids_[i], t);
    const Ellipse e{{e0.c.x + d.x, e0.c.y + d.y}, e0.a, e0.b, e0.angle};
    const double ca = std::cos(e.angle), sa = std::sin(e.angle);
    const Organoid& o = organoids_[i];
    const int reach = static_cast<int>(std::ceil(radius + look.rim_width + 2.0));
    const int x0 = std::max(0, static_cast<int>(std::floor(cc.x)) - reach);
    const int x1 = std::min(c.width - 1, static_cast<int>(std::ceil(cc.x)) + reach);
    const int y0 = std::max(0, static_cast<int>(std::floor(cc.y)) - reach);
    const int y1 = std::min(c.height - 1, static_cast<int>(std::ceil(cc.y)) + reach);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dist = std::hypot(x - cc.x, y - cc.y);
        double v = img(x, y);
        v += (look.rim - v) * coverage(dist - radius - look.rim_width);
        v += (look.cavity - v) * coverage(dist - radius);
        if (e.a > 0.0 && e.b > 0.0) {
          const double dx = x - e.c.x, dy = y - e.c.y;
          const double u = dx * ca + dy * sa, w = -dx * sa + dy * ca;
          const double q = std::sqrt((u / e.a) * (u / e.a) + (w / e.b) * (w / e.b));
          const double sd = (q - 1.0) * std::sqrt(e.a * e.b);
          const double cov = coverage(sd) * coverage(dist - radius);
          if (cov > 0.0) {
            const double tex = look.organoid + look.texture * std::sin(o.kx * u + o.phase_x) * std::sin(o.ky * w + o.phase_y);
            v += (tex - v) * cov;
          }
        }
        img(x, y) = static_cast<float>(v);
      }
  }
  const double mid = look.well;
  for (float& v : img.values()) v = static_cast<float>(mid + (v - mid) * contrast_[t] + offset_[t]);
  return img;
}

RawFrameSet WellGenerator::frame(int t) const {
  if (t < 0 || t >= config_.frames) throw ValidationError("frame index out of range");
  const SynthConfig& c = config_;
  const Image canvas = sharp_canvas(t);
  const int wq = c.quadrant_width(), hq = c.quadrant_height();
  const int ox[4] = {0, c.width - wq, 0, c.width - wq};
  const int oy[4] = {0, 0, c.height - hq, c.height - hq};
  RawFrameSet out;
  out.frame_index = t;
  out.z_levels = c.z_levels;
  out.overlap = c.overlap;
  out.images.resize(4 * c.z_levels);
  for (int z = 0; z < c.z_levels; ++z) {
    const double sigma = c.defocus_sigma_min + c.defocus_sigma_step * std::abs(z - gt_.focus_z);
    const Image blurred = gaussian_blur(canvas, sigma);
    for (int q = 0; q < 4; ++q) {
      Rng rng(derive_seed(noise_seed_, "frame", static_cast<std::uint64_t>(t) * 64 + q * 8 + z));
      Image img(wq, hq);
      for (int y = 0; y < hq; ++y)
        for (int x = 0; x < wq; ++x) {
          const double noise = c.noise_sigma > 0.0 ? c.noise_sigma * rng.normal() : 0.0;
          img(x, y) = static_cast<float>(to_u8(static_cast<float>(blurred(ox[q] + x, oy[q] + y) + noise)));
        }
      out.images[q * c.z_levels + z] = std::move(img);
    }
  }
  return out;
}

WellSample generate_well(const SynthConfig& config, int well_index) {
  WellGenerator gen(config, well_index);
  WellSample s;
  s.truth = gen.ground_truth();
  s.record = gen.record();
  for (int t = 0; t < gen.frames(); ++t) s.frames.push_back(gen.frame(t));
  return s;
}

std::vector<int> assign_folds(const SynthConfig& config) {
  return eval::kfold_split(static_cast<std::size_t>(config.wells), config.folds, derive_seed(config.seed, "folds"))
      .fold;
}

Json to_json(const Manifest& m) {
  Json wells = Json::array();
  for (const auto& w : m.wells)
    wells.push_back({{"well_id", w.well_id},
                     {"index", w.index},
                     {"atp", w.atp},
                     {"fold", w.fold},
                     {"n_cavities", w.n_cavities},
                     {"responding", w.responding},
                     {"paths", {{"raw", w.raw_dir.generic_string()}, {"gt", w.gt_dir.generic_string()}}}});
  return {{"format", "oatp-manifest/1"},
          {"tool_version", m.tool_version},
          {"config_hash", m.config_hash},
          {"frames", m.frames},
          {"synth", to_json(m.config)},
          {"wells", wells}};
}

Manifest manifest_from_json(const Json& j) {
  if (j.value("format", "") != "oatp-manifest/1") throw ValidationError("manifest: unsupported format");
  Manifest m;
  m.tool_version = j.value("tool_version", "");
  m.config_hash = j.value("config_hash", "");
  m.frames = j.at("frames").get<int>();
  if (j.contains("synth")) m.config = synth_config_from_json(j.at("synth"));
  for (const auto& w : j.at("wells")) {
    WellRecord r;
    r.well_id = w.at("well_id").get<std::string>();
    r.index = w.value("index", static_cast<int>(m.wells.size()));
    r.atp = w.at("atp").get<double>();
    r.fold = w.at("fold").get<int>();
    r.n_cavities = w.value("n_cavities", 0);
    r.responding = w.value("responding", false);
    r.raw_dir = w.at("paths").at("raw").get<std::string>();
    r.gt_dir = w.at("paths").value("gt", "");
    m.wells.push_back(std::move(r));
  }
  return m;
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("manifest not found: " + path.string());
  try {
    return manifest_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
}

void write_ground_truth(const GroundTruth& gt, const fs::path& gt_dir) {
  fs::create_directories(gt_dir);
  write_pgm(gt_dir / "well_mask.pgm", gt.well_mask);
  Json cavs = Json::array();
  for (const auto& c : gt.cavities) {
    Json areas = c.analytic_area;
    Json cents = Json::array();
    for (const auto& p : c.centroid) cents.push_back({p.x, p.y});
    cavs.push_back({{"id", c.id},
                    {"center", {c.center.x, c.center.y}},
                    {"radius", c.radius},
                    {"crop_x0", c.crop_x0},
                    {"crop_y0", c.crop_y0},
                    {"crop_size", c.crop_size},
                    {"final_area_px", c.final_area_px},
                    {"analytic_area", areas},
                    {"centroid", cents}});
    const fs::path dir = gt_dir / layout::cavity_dir(c.id);
    write_pgm(dir / "cavity.pgm", c.cavity_crop);
    for (std::size_t t = 0; t < c.organoid_crops.size(); ++t)
      write_pgm(dir / layout::frame_file(static_cast<int>(t)), c.organoid_crops[t]);
  }
  Json drift = Json::array();
  for (const auto& d : gt.drift) drift.push_back({d.x, d.y});
  write_json_file(gt_dir / "cavities.json", {{"width", gt.width},
                                             {"height", gt.height},
                                             {"well_radius", gt.well_radius},
                                             {"responding", gt.responding},
                                             {"focus_z", gt.focus_z},
                                             {"atp", gt.atp},
                                             {"atp_noise_factor", gt.atp_noise_factor},
                                             {"drift", drift},
                                             {"cavities", cavs}});
}

GroundTruth read_ground_truth(const fs::path& gt_dir, int frames) {
  const Json j = read_json_file(gt_dir / "cavities.json");
  GroundTruth gt;
  gt.width = j.at("width").get<int>();
  gt.height = j.at("height").get<int>();
  gt.well_radius = j.at("well_radius").get<double>();
  gt.responding = j.at("responding").get<bool>();
  gt.focus_z = j.at("focus_z").get<int>();
  gt.atp = j.at("atp").get<double>();
  gt.atp_noise_factor = j.at("atp_noise_factor").get<double>();
  for (const auto& d : j.at("drift")) gt.drift.push_back({d[0].get<double>(), d[1].get<double>()});
  gt.well_mask = read_mask_pgm(gt_dir / "well_mask.pgm");
  for (const auto& jc : j.at("cavities")) {
    CavityTruth c;
    c.id = jc.at("id").get<int>();
    c.center = {jc.at("center")[0].get<double>(), jc.at("center")[1].get<double>()};
    c.radius = jc.at("radius").get<double>();
    c.crop_x0 = jc.at("crop_x0").get<int>();
    c.crop_y0 = jc.at("crop_y0").get<int>();
    c.crop_size = jc.at("crop_size").get<int>();
    c.final_area_px = jc.at("final_area_px").get<std::size_t>();
    c.analytic_area = jc.at("analytic_area").get<std::vector<double>>();
    for (const auto& p : jc.at("centroid")) c.centroid.push_back({p[0].get<double>(), p[1].get<double>()});
    const fs::path dir = gt_dir / layout::cavity_dir(c.id);
    c.cavity_crop = read_mask_pgm(dir / "cavity.pgm");
    for (int t = 0; t < frames; ++t) c.organoid_crops.push_back(read_mask_pgm(dir / layout::frame_file(t)));
    gt.cavities.push_back(std::move(c));
  }
  return gt;
}

Manifest manifest_header(const SynthConfig& config) {
  config.validate();
  Manifest m;
  m.tool_version = kToolVersion;
  m.config_hash = json_hash(to_json(config));
  m.frames = config.frames;
  m.config = config;
  m.wells.resize(config.wells);
  return m;
}

void write_raw_well(const WellGenerator& gen, const fs::path& root) {
  const WellRecord& rec = gen.record();
  const fs::path well_root = root / rec.raw_dir;
  for (int t = 0; t < gen.frames(); ++t) {
    const RawFrameSet fr = gen.frame(t);
    for (int q = 0; q < 4; ++q)
      for (int z = 0; z < fr.z_levels; ++z)
        write_pgm(well_root / layout::frame_dir(t) / layout::quadrant_file(q, z), fr.at(q, z));
  }
  write_ground_truth(gen.ground_truth(), root / rec.gt_dir);
}

Manifest generate_dataset(const SynthConfig& config, const fs::path& root, int workers) {
  Manifest m = manifest_header(config);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create output directory " + root.string() + ": " + ec.message());
  const auto folds = assign_folds(config);
  parallel_for(static_cast<std::size_t>(config.wells), workers, [&](std::size_t i) {
    WellGenerator gen(config, static_cast<int>(i));
    write_raw_well(gen, root);
    WellRecord rec = gen.record();
    rec.fold = folds[i];
    m.wells[i] = std::move(rec);
  });
  write_json_file(root / "manifest.json", to_json(m));
  return m;
}

}  // namespace oatp::synth
