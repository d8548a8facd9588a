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

// Multiple-instance ATP regressor: cavity aggregation, temporal weights w_t,
// feature weights w_k and a four-layer PReLU MLP, trained with AdamW on the
// relative plus max-normalized L1 loss.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oatp/features.hpp"
#include "oatp/json_util.hpp"

namespace oatp::model {

enum class Aggregation { min, se, max, sum, mean };
enum class TemporalMode { last_frame, w_t };
enum class FeatureMode { none, w_k };

std::string to_string(Aggregation a);
std::string to_string(TemporalMode m);
std::string to_string(FeatureMode m);
Aggregation parse_aggregation(const std::string& s);
TemporalMode parse_temporal(const std::string& s);
FeatureMode parse_feature(const std::string& s);

/// One well: n cavities x k features x f frames, values[(i * k + j) * f + t].
struct Bag {
  int n = 0, k = 0, f = 0;
  std::vector<double> values;

  double at(int i, int j, int t) const { return values[(static_cast<std::size_t>(i) * k + j) * f + t]; }
  double& at(int i, int j, int t) { return values[(static_cast<std::size_t>(i) * k + j) * f + t]; }
};

/// Frames [t0, t1) of a cube; t1 < 0 means all.
Bag bag_from_cube(const feat::FeatureCube& cube, int t0 = 0, int t1 = -1);

/// k x f matrix, row-major (j * f + t). Parameter-free modes only.
std::vector<double> aggregate(const Bag& bag, Aggregation mode);

struct ModelConfig {
  Aggregation aggregation = Aggregation::mean;
  TemporalMode temporal = TemporalMode::w_t;
  FeatureMode feature = FeatureMode::w_k;
  std::vector<int> hidden;  // three widths; empty picks a default from k
  int se_hidden = 4;
};

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

/// 32-16-8 for small k, 256-64-16 from k = 256 up.
std::vector<int> default_hidden(int k);

/// Offsets of each parameter group inside AtpModel::params.
struct Layout {
  std::size_t w_t = 0, w_k = 0;
  std::size_t se_w1 = 0, se_b1 = 0, se_w2 = 0, se_b2 = 0;
  std::size_t W[4]{}, b[4]{}, prelu[3]{};
  int dims[5]{};  // k, h1, h2, h3, 1
  int se_hidden = 0;
  std::size_t total = 0;
};

struct AtpModel {
  int k = 0, f = 0;
  ModelConfig config;
  Layout layout;
  std::vector<double> params;
  double y_scale = 1.0;  // prediction = y_scale * MLP output (max training ATP)

  /// w_t raw = 1, w_k = 1, affine layers uniform in +-1/sqrt(fan_in), bias 0,
  /// PReLU slopes 0.25.
  static AtpModel create(int k, int f, const ModelConfig& config, std::uint64_t seed);

  std::span<double> w_t() { return {params.data() + layout.w_t, static_cast<std::size_t>(f)}; }
  std::span<const double> w_t() const { return {params.data() + layout.w_t, static_cast<std::size_t>(f)}; }
  std::span<double> w_k() { return {params.data() + layout.w_k, static_cast<std::size_t>(k)}; }
  std::span<const double> w_k() const { return {params.data() + layout.w_k, static_cast<std::size_t>(k)}; }

  /// w_t / sum |w_t|; a zero vector stays zero.
  std::vector<double> temporal_weights() const;
  /// Name of the group holding flat parameter index p.
  std::string param_name(std::size_t p) const;
};

Layout make_layout(int k, int f, const ModelConfig& config);

double prelu(double x, double a);

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace {
  std::vector<double> agg;       // k x f
  std::vector<double> se_s, se_pre, se_hid, se_gate;
  std::vector<double> v_time;    // after the temporal step
  std::vector<double> v;         // MLP input
  std::vector<std::vector<double>> z, h;  // per layer pre-activation and output
  double out = 0.0;              // MLP output
  double y_hat = 0.0;
};

/// Aggregate under the model's mode, including SE gating.
std::vector<double> aggregate(const AtpModel& m, const Bag& bag);

double forward(const AtpModel& m, const Bag& bag, Trace* trace = nullptr);
/// Forward from a precomputed aggregate (any mode but SE).
double forward_aggregated(const AtpModel& m, const std::vector<double>& agg, Trace* trace = nullptr);

/// alpha |y - y_hat| / y + (1 - alpha) |y - y_hat| / y_max.
double loss(double y, double y_hat, double y_max, double alpha);
/// d loss / d y_hat, 0 at y_hat = y.
double loss_grad(double y, double y_hat, double y_max, double alpha);

/// Accumulates d loss / d params for one sample into grad; returns the loss.
/// `agg` may be given instead of the bag for modes other than SE.
double accumulate_gradient(const AtpModel& m, const Bag* bag, const std::vector<double>* agg, double y, double y_max,
                           double alpha, std::vector<double>& grad);

/// Mean loss and gradient over a batch.
double batch_gradient(const AtpModel& m, const std::vector<const Bag*>& bags, std::span<const double> y, double y_max,
                      double alpha, std::vector<double>& grad);

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

/// Decoupled weight decay, then the bias-corrected Adam step.
void adamw_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state, double lr, double wd,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.1;
  int batch = 8;
  int max_epochs = 2000;
  int patience = 200;
  double alpha = 0.5;
  int folds = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0, val_mape = 0.0;
};

struct FoldResult {
  AtpModel model;  // best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::vector<std::string> warnings;
};

struct Sample {
  const Bag* bag = nullptr;
  double y = 0.0;
};

/// Trains one model. Validation loss uses the training y_max. Stops once
/// `patience` epochs pass without a new best and restores the best epoch.
/// An empty validation set monitors the training loss.
FoldResult train_fold(const std::vector<Sample>& train, const std::vector<Sample>& val, int k, int f,
                      const ModelConfig& mc, const TrainConfig& tc, std::uint64_t seed);

std::vector<double> predict(const AtpModel& m, const std::vector<Sample>& samples);

// ---- files ------------------------------------------------------------------

/// "OTCK1\n", a little-endian uint64 JSON length, the JSON header (k, f,
/// config, y_scale, normalization, extra), then little-endian float64
/// parameters.
void save_checkpoint(const std::filesystem::path& path, const AtpModel& m, const Json& extra = Json::object());
AtpModel load_checkpoint(const std::filesystem::path& path, Json* extra = nullptr);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace oatp::model
