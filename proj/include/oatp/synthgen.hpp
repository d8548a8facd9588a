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

// Synthetic multi-cavity well timelapses with exact ground truth.
//
// A well is a bright disk on a dark plate holding a grid of circular
// cavities, each with one dark textured elliptical organoid. Organoids of a
// "growing" well gain area linearly in time; those of a "responding"
// (drug-affected) well lose area. Each frame is rendered with a global
// translation (stage drift) and a slow global contrast change, cut into four
// overlapping quadrants, and imaged at several focus levels with Gaussian
// defocus. Ground truth is kept in the undrifted reference coordinates of
// frame 0.
//
// The well label follows y = a * sum(final organoid pixel area) + b,
// multiplied by Normal(1, atp_noise).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oatp/image.hpp"
#include "oatp/json_util.hpp"
#include "oatp/raw_frame.hpp"

namespace oatp::synth {

struct Appearance {
  double plate = 40.0;
  double well = 120.0;
  double cavity = 170.0;
  double rim = 70.0;
  double rim_width = 2.0;
  double organoid = 80.0;
  double texture = 12.0;
};

struct SynthConfig {
  int wells = 40;
  int cavities_min = 12;
  int cavities_max = 12;
  int frames = 50;
  int width = 320;   // stitched frame
  int height = 320;
  int overlap = 16;  // quadrant overlap in pixels
  int z_levels = 3;
  double cavity_diameter = 48.0;
  double cavity_pitch = 54.0;
  double well_radius = 0.0;  // 0: derived from the frame size
  double initial_area_min = 60.0;   // px^2, growing wells
  double initial_area_max = 180.0;
  double growth_rate_min = 1.0;     // px^2 / frame
  double growth_rate_max = 5.0;
  double respond_fraction = 0.3;
  double respond_initial_area_min = 220.0;
  double respond_initial_area_max = 400.0;
  double shrink_rate_min = 0.5;
  double shrink_rate_max = 3.0;
  double min_area = 30.0;           // floor for shrinking organoids
  double well_scale_min = 0.5;      // per-well factor on initial areas and rates
  double well_scale_max = 1.5;
  double organoid_offset = 0.12;    // max centre offset, fraction of cavity radius
  double organoid_motion = 1.5;     // max centre travel over the timelapse, px
  double noise_sigma = 3.0;         // gray levels
  double max_drift = 4.0;           // px
  double contrast_drift = 0.15;     // relative contrast loss at the last frame
  double defocus_sigma_min = 0.7;
  double defocus_sigma_step = 1.6;
  double atp_slope = 40.0;          // ATP units per px^2
  double atp_intercept = 20000.0;
  double atp_noise = 0.05;          // relative
  int folds = 4;
  std::uint64_t seed = 1;
  Appearance look;

  static SynthConfig desk() { return {}; }
  /// Counts of the original study: 116 wells, 200 frames, ~71 cavities/well.
  static SynthConfig paper_scale();

  int quadrant_width() const { return (width + overlap) / 2; }
  int quadrant_height() const { return (height + overlap) / 2; }
  double effective_well_radius() const;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

Json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const Json& j);

struct CavityTruth {
  int id = 0;
  PointF center;             // reference (frame 0) coordinates
  double radius = 0.0;
  int crop_x0 = 0, crop_y0 = 0, crop_size = 0;
  Mask cavity_crop;                  // crop_size^2
  std::vector<Mask> organoid_crops;  // per frame, crop_size^2
  std::vector<double> analytic_area; // per frame, pi * a * b
  std::vector<PointF> centroid;      // per frame, reference coordinates
  std::size_t final_area_px = 0;

  /// Full-frame mask from a crop.
  Mask place(const Mask& crop, int width, int height) const;
};

struct GroundTruth {
  int width = 0, height = 0;
  Mask well_mask;
  double well_radius = 0.0;
  std::vector<CavityTruth> cavities;
  std::vector<PointF> drift;  // per frame; drift[0] = (0, 0)
  bool responding = false;
  int focus_z = 0;
  double atp = 0.0;
  double atp_noise_factor = 1.0;
};

struct WellRecord {
  std::string well_id;
  int index = 0;
  double atp = 0.0;
  int fold = -1;
  int n_cavities = 0;
  bool responding = false;
  std::filesystem::path raw_dir;  // relative to the dataset root
  std::filesystem::path gt_dir;
};

/// Label law; exposed for oracle checks.
double atp_label(const std::vector<std::size_t>& final_areas, double slope, double intercept,
                 double noise_factor = 1.0);

/// Candidate cavity centres laid out on the grid inside the well.
std::vector<PointF> cavity_grid(const SynthConfig& c);

/// Per-well generator. Construction fixes the scene and ground truth;
/// frames are rendered on demand so large timelapses need not be resident.
class WellGenerator {
 public:
  WellGenerator(const SynthConfig& config, int well_index);

  const GroundTruth& ground_truth() const { return gt_; }
  const WellRecord& record() const { return record_; }
  int frames() const { return config_.frames; }

  RawFrameSet frame(int t) const;
  /// Noise-free, focused, undivided canvas of frame t (drift and contrast
  /// change applied). Useful for tests.
  Image sharp_canvas(int t) const;

 private:
  struct Organoid {
    PointF start, velocity;
    double area0 = 0.0, rate = 0.0;
    double aspect = 1.0, angle = 0.0;
    std::vector<double> aspect_jitter, angle_jitter;
    double kx = 1.0, ky = 1.0, phase_x = 0.0, phase_y = 0.0;
  };
  struct Ellipse {
    PointF c;
    double a = 0.0, b = 0.0, angle = 0.0;
  };

  Ellipse ellipse_at(const Organoid& o, int t) const;
  double area_at(const Organoid& o, int t) const;

  SynthConfig config_;
  GroundTruth gt_;
  WellRecord record_;
  std::vector<Organoid> organoids_;
  std::vector<double> contrast_;
  std::vector<double> offset_;
  std::uint64_t noise_seed_ = 0;
};

struct WellSample {
  std::vector<RawFrameSet> frames;
  GroundTruth truth;
  WellRecord record;
};

/// Whole well in memory.
WellSample generate_well(const SynthConfig& config, int well_index);

struct Manifest {
  std::string tool_version;
  std::string config_hash;
  int frames = 0;
  SynthConfig config;
  std::vector<WellRecord> wells;
};

Json to_json(const Manifest& m);
Manifest manifest_from_json(const Json& j);
Manifest read_manifest(const std::filesystem::path& path);

/// Fold assignment for a config (seeded, well level).
std::vector<int> assign_folds(const SynthConfig& config);

/// Writes the full tree under root (see layout.hpp) and manifest.json.
/// Manifest with the config fields set and `wells` sized but empty.
Manifest manifest_header(const SynthConfig& config);
/// Raw quadrant stacks and ground truth of one well under the dataset root.
void write_raw_well(const WellGenerator& gen, const std::filesystem::path& root);

Manifest generate_dataset(const SynthConfig& config, const std::filesystem::path& root,
                          int workers = 1);

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& gt_dir);
GroundTruth read_ground_truth(const std::filesystem::path& gt_dir, int frames);

}  // namespace oatp::synth
