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

// Cross-validated training runs and the experiments built on them:
// aggregation and attention ablations, forecasting curves, attention export
// and the reduced-history segmentation check.

#include <string>
#include <vector>

#include "oatp/eval.hpp"
#include "oatp/features.hpp"
#include "oatp/model.hpp"
#include "oatp/segment.hpp"
#include "oatp/synthgen.hpp"

namespace oatp::eval {

struct WellFeatures {
  std::string well_id;
  double atp = 0.0;
  int fold = -1;
  feat::FeatureCube cube;  // not normalized
};

struct CvOptions {
  model::ModelConfig model;
  model::TrainConfig train;
  int t0 = 0, t1 = -1;  // frame range [t0, t1); t1 < 0 means all
  int workers = 1;
};

struct FoldRun {
  int fold = 0;
  model::FoldResult result;
  feat::NormStats norm;
  std::vector<std::size_t> val_wells;
  std::vector<double> predictions;  // for val_wells
};

struct CvResult {
  ExperimentReport report;
  std::vector<FoldRun> folds;
  std::vector<double> oof;  // out-of-fold prediction per well
  std::vector<std::string> warnings;
};

/// Per fold: z-score statistics from the training wells, train, predict the
/// validation wells. Folds come from WellFeatures::fold.
CvResult cross_validate(const std::vector<WellFeatures>& wells, const CvOptions& options, const std::string& name);

// ---- ablations ----------------------------------------------------------------

struct AblationColumn {
  std::vector<std::string> labels;  // one per header row
  ExperimentReport report;
};

struct AblationTable {
  std::string name;
  std::vector<std::string> header_rows;
  std::vector<AblationColumn> columns;

  /// Column index with the lowest mean MAPE.
  int best() const;
};

/// Min, SE, Max, Sum, Mean with the configured attention modes.
AblationTable aggregation_ablation(const std::vector<WellFeatures>& wells, const CvOptions& options);
/// {last frame, w_t} x {none, w_k} with the configured aggregation.
AblationTable attention_ablation(const std::vector<WellFeatures>& wells, const CvOptions& options);

/// Header rows, then MAPE and Pearson rows; best in bold, second underlined.
std::string table_markdown(const AblationTable& t);
std::string table_csv(const AblationTable& t);
Json to_json(const AblationTable& t);

// ---- forecasting ----------------------------------------------------------------

enum class ForecastMode { prefix, suffix };

std::string to_string(ForecastMode m);
ForecastMode parse_forecast_mode(const std::string& s);

/// f/8, f/4, ..., f (at least 1, duplicates removed).
std::vector<int> default_forecast_grid(int f);

struct ForecastPoint {
  int frames = 0;  // frames given to the model
  int t0 = 0, t1 = 0;
  double mape = 0.0, pearson = 0.0;
  bool failed = false;
};

struct ForecastCurve {
  ForecastMode mode = ForecastMode::prefix;
  int total_frames = 0;
  std::vector<ForecastPoint> points;
};

/// One full cross-validation per grid point: prefix uses frames [0, m),
/// suffix uses frames [f - m, f).
ForecastCurve forecast_experiment(const std::vector<WellFeatures>& wells, const CvOptions& options, ForecastMode mode,
                                  const std::vector<int>& grid);
std::string forecast_csv(const ForecastCurve& c);
Json to_json(const ForecastCurve& c);

// ---- attention export -------------------------------------------------------------

struct AttentionExport {
  std::vector<double> temporal;  // effective per-frame weights, abs mass 1
  std::vector<int> feature_order;      // indices by descending |w_k|
  std::vector<double> feature_weight;  // |w_k| in that order
  double ratio = 1.0;                  // max |w_k| / min |w_k|
};

/// Effective weights: a last-frame model exports a one-hot temporal vector,
/// a model without feature weighting exports ones.
AttentionExport export_attention(const model::AtpModel& m);
std::string temporal_csv(const AttentionExport& a);
std::string feature_csv(const AttentionExport& a, const std::vector<std::string>& names = {});

// ---- reduced-history segmentation ----------------------------------------------------

/// For each valid track: propagate again on the last `frames` crops only and
/// return the mean Dice against the full track over those frames.
std::vector<double> reduced_history_dice(const seg::Timelapse& frames, const seg::WellSegmentation& s,
                                         const seg::PromptableSegmenter& segmenter, const seg::TrackConfig& config,
                                         int frames_kept, int workers = 1);

// ---- segmentation against ground truth -------------------------------------------

struct SegmentationScore {
  int gt_cavities = 0, detected = 0, matched = 0;
  double cavity_recall = 0.0;
  std::vector<double> cavity_dice;  // per matched ground-truth cavity
  std::vector<double> track_dice;   // per matched cavity, mean over frames
  double mean_cavity_dice = 0.0, mean_track_dice = 0.0;
};

/// Each ground-truth cavity is matched to the nearest unused detection whose
/// centre lies within half a cavity radius. `first_frame` is the source index
/// of the first segmented frame.
SegmentationScore score_segmentation(const seg::WellSegmentation& s, const synth::GroundTruth& gt,
                                     int first_frame = 0);
Json to_json(const SegmentationScore& s);

}  // namespace oatp::eval
