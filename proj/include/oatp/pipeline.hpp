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

// Stage orchestration shared by the command-line tool and the acceptance
// gate: one configuration for every stage, on-disk stage outputs, and the
// streaming end-to-end run.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oatp/experiments.hpp"
#include "oatp/features.hpp"
#include "oatp/model.hpp"
#include "oatp/preprocess.hpp"
#include "oatp/segment.hpp"
#include "oatp/synthgen.hpp"

namespace oatp::pipeline {

namespace fs = std::filesystem;

struct FeatureSettings {
  std::string backend = "classical";
  int pad = 2;
};

struct ForecastSettings {
  std::string mode = "prefix";
  std::vector<int> grid;  // empty: default grid
};

/// Every stage parameter. The root seed drives the synthetic data and the
/// training runs through stage-scoped sub-seeds.
struct PipelineConfig {
  std::uint64_t seed = 1;
  synth::SynthConfig synth;
  prep::PreprocessConfig preprocess;
  seg::SegmentConfig segment;
  FeatureSettings features;
  model::ModelConfig model;
  model::TrainConfig train;
  ForecastSettings forecast;
  int reduced_history_frames = 15;

  /// Copies the root seed into the stage configs.
  void apply_seed();
  std::string hash() const;
};

Json to_json(const PipelineConfig& c);
/// Every section is optional; unknown keys anywhere are rejected.
PipelineConfig pipeline_config_from_json(const Json& j);

/// Base layer for a scale preset. "desk": default synthetic data with a
/// faster learning rate and longer patience; "paper": paper-scale data with
/// the stock training settings.
Json preset_json(const std::string& name);

/// Sets a dotted key ("train.lr") in a JSON object. The value is parsed as
/// JSON when possible, otherwise taken as a string.
void set_dotted(Json& j, const std::string& key, const std::string& value);

/// {"config_hash", "tool_version"}
Json stamp(const PipelineConfig& c);
/// CSV comment line carrying the same stamp.
std::string csv_stamp(const PipelineConfig& c);

using Log = std::function<void(const std::string&)>;

struct Context {
  PipelineConfig config;
  int workers = 1;
  Log log = [](const std::string&) {};
};

// ---- paths ----------------------------------------------------------------

fs::path preprocessed_dir(const fs::path& work, int well);
fs::path segmentation_dir(const fs::path& work, int well);
fs::path features_path(const fs::path& work, int well);

// ---- stages -----------------------------------------------------------------

synth::Manifest run_synth(const Context& ctx, const fs::path& data);

struct StageSummary {
  Json details = Json::object();
  std::vector<std::string> warnings;
};

StageSummary run_preprocess(const Context& ctx, const fs::path& data, const fs::path& work);
StageSummary run_segment(const Context& ctx, const fs::path& data, const fs::path& work);
StageSummary run_featurize(const Context& ctx, const fs::path& data, const fs::path& work);

/// Feature cubes for every manifest well. A missing file is a
/// ValidationError naming the path.
std::vector<eval::WellFeatures> load_features(const synth::Manifest& manifest, const fs::path& features_dir);

eval::CvOptions cv_options(const Context& ctx);

/// Cross-validation; writes fold checkpoints, histories, predictions and the
/// report under `out`.
eval::CvResult run_train(const Context& ctx, const std::vector<eval::WellFeatures>& wells, const fs::path& out);

/// Re-scores fold checkpoints written by run_train on the validation wells
/// recorded in them.
eval::ExperimentReport run_eval(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                const fs::path& checkpoints);

eval::ForecastCurve run_forecast(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                 eval::ForecastMode mode, const std::vector<int>& grid, const fs::path& out);

eval::AttentionExport run_attention(const fs::path& checkpoint, const fs::path& out, const Json& extra_stamp);

std::vector<eval::AblationTable> run_ablation(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                              const std::string& which, const fs::path& out);

struct E2EOptions {
  bool keep_raw = false;           // also write raw quadrant stacks and ground truth
  bool keep_intermediate = false;  // also write preprocessed frames and segmentation
  bool ablate = false;
  bool forecast = false;
  bool reduced_history = false;
};

struct E2EResult {
  synth::Manifest manifest;
  eval::CvResult cv;
  std::vector<eval::SegmentationScore> segmentation;  // per well
  std::vector<double> reduced_history;                // per valid track, all wells
  std::vector<eval::AblationTable> ablations;
  std::vector<eval::ForecastCurve> forecasts;
  double seconds_data = 0.0, seconds_train = 0.0;
};

/// Synthetic data to report in one pass, one well at a time in memory.
E2EResult run_e2e(const Context& ctx, const fs::path& out, const E2EOptions& options);

}  // namespace oatp::pipeline
