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

// Raw quadrant z-stacks to one normalized, co-registered timelapse per well:
// focus projection, 2x2 stitching, temporal contrast matching and
// translation registration against frame 0.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oatp/image.hpp"
#include "oatp/json_util.hpp"
#include "oatp/raw_frame.hpp"

namespace oatp::prep {

using Timelapse = std::vector<Image>;

/// Per-pixel value from the slice with the largest 5x5-averaged Sobel
/// magnitude. The argmax map is smoothed by a 3x3 majority vote.
/// `chosen` receives the final slice index map when non-null.
Image sobel_focus_project(const std::vector<Image>& stack, Plane<std::uint8_t>* chosen = nullptr);

/// TL, TR, BL, BR of size (w_q, h_q) to (2 w_q - overlap, 2 h_q - overlap),
/// overlap bands linearly feathered.
Image stitch_quadrants(const std::array<Image, 4>& quadrants, int overlap);
/// Inverse cut used by the generator and the round-trip tests.
std::array<Image, 4> split_quadrants(const Image& frame, int overlap);

/// Projects each quadrant stack, then stitches.
Image assemble_frame(const RawFrameSet& raw);

struct ContrastResult {
  Timelapse frames;
  std::vector<double> gain, bias;    // out = gain * in + bias, per frame
  std::vector<int> warnings;         // frames with zero robust variance
};

/// Central disk used for the robust statistics: radius 0.4 * min(w, h).
Mask central_region(int width, int height);

/// Matches every frame's robust mean and standard deviation (values clipped
/// to the 2nd..98th percentile inside `region`) to frame 0's. Output is
/// clamped to [0, 255].
ContrastResult normalize_contrast(const Timelapse& frames, const Mask& region);
ContrastResult normalize_contrast(const Timelapse& frames);

/// Translation of `moving` relative to `reference`: moving(p) ~ reference(p - shift).
/// `peak` receives the normalized phase-correlation peak height in [0, 1].
PointF phase_correlate(const Image& reference, const Image& moving, double* peak = nullptr);

struct RegistrationResult {
  int reference = 0;
  std::vector<PointF> offsets;      // measured shift of each frame vs the reference
  std::vector<double> confidence;   // correlation peak height
  std::vector<bool> flagged;        // below threshold, identity used
};

struct RegisterOutput {
  Timelapse frames;
  RegistrationResult result;
};

/// Aligns every frame to frame 0 by undoing its measured shift. Borders are
/// edge-replicated.
RegisterOutput register_frames(const Timelapse& frames, double min_confidence = 0.05);

struct PreprocessConfig {
  double min_confidence = 0.05;
  int keep_last = 0;  // 0 keeps every frame
};

Json to_json(const PreprocessConfig& c);
PreprocessConfig preprocess_config_from_json(const Json& j);

struct PreprocessResult {
  Timelapse frames;  // 8-bit values
  int first_frame = 0;  // source index of frames[0]
  RegistrationResult registration;
  std::vector<int> contrast_warnings;
};

using FrameSource = std::function<RawFrameSet(int)>;

/// Full per-well pipeline over source frames [0, n_frames).
PreprocessResult preprocess_well(const FrameSource& source, int n_frames, const PreprocessConfig& config,
                                 int workers = 1);

// ---- files ---------------------------------------------------------------

struct RawLayout {
  int frames = 0;
  int z_levels = 0;
};

/// Counts frame_NNN directories and z slices of the first frame.
RawLayout discover_raw(const std::filesystem::path& well_dir);
RawFrameSet read_raw_frame(const std::filesystem::path& well_dir, int t, int z_levels, int overlap);

/// preprocessed/frame_NNN.pgm and preprocessed/registration.json under `dir`.
void write_preprocessed(const std::filesystem::path& dir, const PreprocessResult& r);
PreprocessResult read_preprocessed(const std::filesystem::path& dir);

}  // namespace oatp::prep
