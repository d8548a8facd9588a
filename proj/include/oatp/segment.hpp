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

// Well and cavity detection on the reference frame, then backward prompt
// propagation of an organoid mask through each cavity timelapse.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oatp/image.hpp"
#include "oatp/imgproc.hpp"
#include "oatp/json_util.hpp"

namespace oatp::seg {

using Timelapse = std::vector<Image>;

struct Candidate {
  Mask mask;
  double score = 0.0;  // [0, 1]
};

struct SegmenterCaps {
  int max_candidates = 3;
  bool point_prompts = true;
  bool proposals = true;
};

/// Point-promptable segmenter. Implementations must be safe to call from
/// several threads at once.
class PromptableSegmenter {
 public:
  virtual ~PromptableSegmenter() = default;
  virtual std::string name() const = 0;
  virtual SegmenterCaps caps() const { return {}; }
  /// 1..n candidates containing the prompt, best score first.
  virtual std::vector<Candidate> segment_at(const Image& img, PointI prompt, int n = 3) const = 0;
  /// Unprompted proposals. The default queries every point of a prompt
  /// grid and keeps the distinct candidates with a positive score.
  virtual std::vector<Candidate> propose(const Image& img) const;

  int grid_spacing = 12;
};

struct BuiltinConfig {
  std::vector<double> tolerances{15.0, 30.0, 45.0};  // gray levels
  double smooth_sigma = 1.0;
  double min_edge = 0.05;  // minimum normalized boundary gradient
  int grid_spacing = 12;
};

Json to_json(const BuiltinConfig& c);
BuiltinConfig builtin_config_from_json(const Json& j);

/// Region growing from the prompt at several intensity tolerances.
/// Score = mean gradient magnitude on the region's inner boundary divided by
/// the image's maximum gradient. Regions without a real edge collapse to the
/// 3x3 neighbourhood of the prompt with score 0.
class BuiltinSegmenter final : public PromptableSegmenter {
 public:
  explicit BuiltinSegmenter(BuiltinConfig config = {});
  std::string name() const override { return "builtin"; }
  std::vector<Candidate> segment_at(const Image& img, PointI prompt, int n = 3) const override;
  std::vector<Candidate> propose(const Image& img) const override;

  const BuiltinConfig& config() const { return config_; }

 private:
  struct Prepared {
    Image smooth, grad;
    double gmax = 0.0;
  };
  Prepared prepare(const Image& img) const;
  /// Raw grown region (before hole filling) and the final candidate.
  Candidate grow(const Prepared& p, PointI prompt, double tolerance, Mask* raw, bool* collapsed) const;

  BuiltinConfig config_;
};

/// Runs an executable per request:
///   stdin : "OTSEG1 <x> <y> <n>\n" followed by the image as binary PGM (P5)
///   stdout: "OTSEGR1 <m>\n" then m times "<score>\n" and a P5 mask (0/255)
/// A prompt of (-1, -1) with n = 0 requests unprompted proposals.
class ExternalSegmenter final : public PromptableSegmenter {
 public:
  explicit ExternalSegmenter(std::string command, int grid = 12);
  std::string name() const override { return "external"; }
  std::vector<Candidate> segment_at(const Image& img, PointI prompt, int n = 3) const override;
  std::vector<Candidate> propose(const Image& img) const override;

 private:
  std::string command_;
};

/// Request / response codec shared with the reference external tool.
void write_segment_request(std::ostream& os, const Image& img, PointI prompt, int n);
void read_segment_request(std::istream& is, Image& img, PointI& prompt, int& n);
void write_segment_response(std::ostream& os, const std::vector<Candidate>& cands);
std::vector<Candidate> read_segment_response(std::istream& is);

struct SegmenterConfig {
  std::string backend = "builtin";  // builtin | external
  std::string command;              // external executable
  BuiltinConfig builtin;
};

std::unique_ptr<PromptableSegmenter> make_segmenter(const SegmenterConfig& c);

// ---- well and cavities ----------------------------------------------------

/// Largest proposal containing the centre pixel.
Mask detect_well(const Image& frame, const PromptableSegmenter& seg);
Mask select_well(const std::vector<Candidate>& proposals, PointI center);

/// min(P) / max(P), P_i = largest distance from boundary point i to any other
/// boundary point. Holes are filled and the outer contour is subsampled to at
/// most `max_points` points.
double circularity(const Mask& m, std::size_t max_points = 512);

double dice(const Mask& a, const Mask& b);

struct CavityConfig {
  double circularity_threshold = 0.8;
  double nominal_diameter = 48.0;
  double area_min_factor = 0.25;  // x nominal disk area
  double area_max_factor = 1.5;
  int pad = 6;
};

Json to_json(const CavityConfig& c);
CavityConfig cavity_config_from_json(const Json& j);

struct Cavity {
  int id = 0;
  Mask mask;  // full frame
  PointF center;
  double score = 0.0;
  double circularity = 0.0;
  std::size_t area = 0;
  int crop_x0 = 0, crop_y0 = 0, crop_size = 0;

  /// Cavity mask in crop coordinates.
  Mask crop_mask() const;
};

struct CavityRejects {
  std::size_t containment = 0, area = 0, circularity = 0, duplicate = 0;
};

struct CavitySet {
  Mask well;
  std::vector<Cavity> cavities;  // raster order of centres
  CavityRejects rejects;
};

CavitySet detect_cavities(const Image& frame, const Mask& well, const PromptableSegmenter& seg,
                          const CavityConfig& config);
CavitySet filter_cavities(const std::vector<Candidate>& proposals, const Mask& well, const CavityConfig& config);

/// Crop with edge replication outside the frame.
Image crop(const Image& img, int x0, int y0, int size);
Timelapse crop_timelapse(const Timelapse& frames, const Cavity& c);

// ---- tracking ---------------------------------------------------------------

struct InitialPromptConfig {
  double canny_sigma = 1.5;
  double canny_low = 2.0;
  double canny_high = 4.0;
  std::size_t min_area = 20;
  int edge_margin = 3;  // ignore edges within this distance of the cavity wall
};

struct PromptResult {
  PointF point;
  bool fallback = false;
};

/// Canny on (last frame - temporal mean), cleaned by morphology; centroid of
/// the largest component. Falls back to the crop centre. `region`, when given,
/// restricts edges to the cavity interior.
PromptResult initial_prompt(const Timelapse& crops, const InitialPromptConfig& config = {},
                            const Mask* region = nullptr);

/// Weighted mean of the most recent `window` points (points[0] most recent),
/// weights beta^0, beta^1, ... normalized to 1.
PointF exp_weighted_average(const std::vector<PointF>& points, int window = 10, double beta = 0.7);

struct TrackConfig {
  double beta = 0.7;
  int window = 10;
  bool ewa_on_centroids = true;  // false: average the prompts actually used
  int candidates = 3;
  double max_flagged_fraction = 0.2;
  double max_cavity_fraction = 0.75;  // larger candidates are treated as empty
  InitialPromptConfig initial;
};

Json to_json(const TrackConfig& c);
TrackConfig track_config_from_json(const Json& j);

struct OrganoidTrack {
  std::vector<Mask> masks;        // per frame
  std::vector<PointF> prompts;    // prompt used per frame
  std::vector<PointF> recorded;   // point fed to the average (centroid or prompt)
  std::vector<int> chosen;        // candidate index, -1 on failure
  std::vector<double> dice_prev;  // Dice with the mask of frame t+1; 1 for the last frame
  std::vector<bool> flagged;
  bool initial_fallback = false;
  bool valid = true;
};

/// Backward propagation from the last frame. Masks are restricted to
/// `cavity` when given and keep only their largest component.
OrganoidTrack propagate_track(const Timelapse& crops, const PromptableSegmenter& seg, const TrackConfig& config,
                              const Mask* cavity = nullptr);

struct WellSegmentation {
  CavitySet cavities;
  std::vector<OrganoidTrack> tracks;
};

struct SegmentConfig {
  SegmenterConfig segmenter;
  CavityConfig cavity;
  TrackConfig track;
};

Json to_json(const SegmentConfig& c);
SegmentConfig segment_config_from_json(const Json& j);

WellSegmentation segment_well(const Timelapse& frames, const PromptableSegmenter& seg, const SegmentConfig& config,
                              int workers = 1);

// ---- files ------------------------------------------------------------------

/// <dir>/cavities.json, well.pgm, cavity_NNN/{cavity.pgm, frame_NNN.pgm, track.json}
void write_segmentation(const std::filesystem::path& dir, const WellSegmentation& s);
WellSegmentation read_segmentation(const std::filesystem::path& dir);

}  // namespace oatp::seg
