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

// Per-cavity, per-frame feature vectors from masked organoid crops, the
// feature cube container, its file format and z-score normalization.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oatp/image.hpp"
#include "oatp/json_util.hpp"
#include "oatp/segment.hpp"

namespace oatp::feat {

struct MaskedCrop {
  Image image;  // zero outside the mask
  Mask mask;
  bool flagged = false;  // empty mask
};

/// Square crop around the mask's bounding box plus `pad` pixels; pixels
/// outside the mask are 0. An empty mask gives a zero crop of side
/// `min_size`, flagged.
MaskedCrop masked_crop(const Image& frame, const Mask& mask, int pad, int min_size = 8);

inline constexpr int kClassicalDim = 48;

/// Frozen feature order of the classical backend.
///  0-15  first order over in-mask pixels
/// 16-31  GLCM contrast, correlation, energy, homogeneity for offsets
///        (1,0), (0,1), (1,1), (1,-1), offset-major
/// 32-35  the same four averaged over offsets
/// 36-39  GLCM entropy, dissimilarity, max probability, sum average (offset mean)
/// 40-47  shape
const std::array<const char*, kClassicalDim>& classical_names();

struct FeatureVector {
  std::vector<double> values;
  bool sanitized = false;  // some entry was NaN and set to 0
  bool empty = false;      // empty mask, all zero
};

/// 16 fixed-width gray levels (v / 16) for entropy and the GLCM.
int gray_level(float v);

/// Symmetric, normalized 16x16 co-occurrence matrix over in-mask pairs.
/// Returns an all-zero matrix when no pair exists.
std::array<double, 256> glcm(const Image& img, const Mask& mask, int dx, int dy);

FeatureVector extract_classical(const Image& crop, const Mask& mask);

class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual FeatureVector extract(const Image& crop, const Mask& mask) const = 0;
};

class ClassicalBackend final : public FeatureBackend {
 public:
  std::string name() const override { return "classical"; }
  int dim() const override { return kClassicalDim; }
  FeatureVector extract(const Image& crop, const Mask& mask) const override { return extract_classical(crop, mask); }
};

std::unique_ptr<FeatureBackend> make_backend(const std::string& name);

struct NormStats {
  std::vector<double> mean, sd;
  std::vector<std::string> train_wells;  // provenance
};

/// One well: values[(i * k + j) * f + t] for cavity i, feature j, frame t.
struct FeatureCube {
  int n = 0, k = 0, f = 0;
  std::vector<float> values;
  std::vector<int> cavity_ids;
  std::string backend;
  std::string well_id;
  std::optional<NormStats> norm;
  std::size_t sanitized = 0;         // (cavity, frame) vectors with a NaN set to 0
  std::size_t empty_masks = 0;
  std::size_t excluded_tracks = 0;   // invalid tracks left out

  float at(int i, int j, int t) const { return values[(static_cast<std::size_t>(i) * k + j) * f + t]; }
  float& at(int i, int j, int t) { return values[(static_cast<std::size_t>(i) * k + j) * f + t]; }
  void validate() const;
};

struct CubeOptions {
  int pad = 2;
  int workers = 1;
};

/// Masked crop and backend for every valid track and frame.
FeatureCube build_feature_cube(const std::vector<Image>& frames, const seg::WellSegmentation& segmentation,
                               const FeatureBackend& backend, const CubeOptions& options = {});

/// Per-feature mean and standard deviation over every (cavity, frame) of
/// the training cubes. A zero deviation is stored as 1.
NormStats compute_norm_stats(const std::vector<const FeatureCube*>& train);
void apply_norm(FeatureCube& cube, const NormStats& stats);

// ---- files ------------------------------------------------------------------

/// Binary file: "OTFC1 n k f backend\n" then little-endian float32 values in
/// cavity-major, feature-major, frame-minor order. A sidecar <path>.json
/// holds cavity ids, well id, counters and normalization statistics.
void export_features(const std::filesystem::path& path, const FeatureCube& cube, const Json& stamp = Json::object());

struct ImportExpect {
  std::optional<int> k, f;
  std::optional<std::vector<int>> cavity_ids;
};

FeatureCube import_features(const std::filesystem::path& path, const ImportExpect& expect = {});

/// One row per (cavity, frame).
void export_features_csv(const std::filesystem::path& path, const FeatureCube& cube,
                         const std::vector<std::string>& names = {});

}  // namespace oatp::feat
