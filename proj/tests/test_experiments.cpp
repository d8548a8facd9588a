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

#include <doctest.h>

#include <cmath>

#include "oatp/experiments.hpp"
#include "oatp/preprocess.hpp"
#include "oatp/random.hpp"

using namespace oatp;
using namespace oatp::eval;

namespace {

// Cavity sizes grow linearly; feature 0 tracks the size, the others are
// noise. ATP is linear in the total final size.
std::vector<WellFeatures> toy_wells(int wells, int n, int k, int f, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WellFeatures> out;
  for (int w = 0; w < wells; ++w) {
    WellFeatures wf;
    wf.well_id = "well_" + std::to_string(w);
    wf.fold = w % 4;
    auto& c = wf.cube;
    c.n = n, c.k = k, c.f = f;
    c.backend = "toy";
    c.values.resize(static_cast<std::size_t>(n) * k * f);
    for (int i = 0; i < n; ++i) c.cavity_ids.push_back(i);
    double total = 0.0;
    const double scale = rng.uniform(0.5, 2.0);
    for (int i = 0; i < n; ++i) {
      const double a0 = rng.uniform(1.0, 3.0) * scale, rate = rng.uniform(0.0, 0.4) * scale;
      for (int t = 0; t < f; ++t) {
        c.at(i, 0, t) = static_cast<float>(a0 + rate * t);
        for (int j = 1; j < k; ++j) c.at(i, j, t) = static_cast<float>(rng.normal());
      }
      total += a0 + rate * (f - 1);
    }
    wf.atp = 1000.0 + 100.0 * total;
    out.push_back(std::move(wf));
  }
  return out;
}

CvOptions toy_options() {
  CvOptions o;
  o.model.aggregation = model::Aggregation::sum;
  o.model.hidden = {8, 4, 4};
  o.train.max_epochs = 150;
  o.train.patience = 40;
  o.train.lr = 1e-2;
  o.train.seed = 5;
  return o;
}

}  // namespace

TEST_CASE("cross_validate: four folds, out-of-fold predictions, deterministic") {
  const auto wells = toy_wells(24, 4, 3, 6, 1);
  const CvResult a = cross_validate(wells, toy_options(), "toy");
  REQUIRE(a.report.folds.size() == 4);
  CHECK(a.report.consistent());
  std::size_t total = 0;
  for (const auto& f : a.report.folds) total += f.n;
  CHECK(total == wells.size());
  for (const auto& run : a.folds)
    for (std::size_t v = 0; v < run.val_wells.size(); ++v) {
      CHECK(wells[run.val_wells[v]].fold == run.fold);
      CHECK(a.oof[run.val_wells[v]] == run.predictions[v]);
    }
  for (const auto& run : a.folds)
    for (const auto& id : run.norm.train_wells)
      for (std::size_t v : run.val_wells) CHECK(id != wells[v].well_id);
  CHECK(a.report.mean_mape < 0.25);

  const CvResult b = cross_validate(wells, toy_options(), "toy");
  CHECK(a.oof == b.oof);
  CHECK(a.report.mean_mape == b.report.mean_mape);
}

TEST_CASE("cross_validate: worker count does not change results") {
  const auto wells = toy_wells(16, 3, 3, 5, 2);
  CvOptions o = toy_options();
  o.train.max_epochs = 30;
  o.train.patience = 10;
  const CvResult one = cross_validate(wells, o, "toy");
  o.workers = 4;
  const CvResult four = cross_validate(wells, o, "toy");
  CHECK(one.oof == four.oof);
}

TEST_CASE("cross_validate: input validation") {
  auto wells = toy_wells(8, 2, 3, 4, 3);
  CvOptions o = toy_options();
  o.train.max_epochs = 2;
  o.train.patience = 1;
  auto bad = wells;
  bad[0].fold = 4;
  CHECK_THROWS_AS(cross_validate(bad, o, "x"), ValidationError);
  bad = wells;
  bad[1].atp = 0.0;
  CHECK_THROWS_AS(cross_validate(bad, o, "x"), ValidationError);
  bad = wells;
  bad[2].cube.k = 2;
  CHECK_THROWS_AS(cross_validate(bad, o, "x"), ValidationError);
  o.t0 = 3, o.t1 = 3;
  CHECK_THROWS_AS(cross_validate(wells, o, "x"), ValidationError);
  o.t0 = 0, o.t1 = 5;
  CHECK_THROWS_AS(cross_validate(wells, o, "x"), ValidationError);
  for (auto& w : wells) w.fold = w.fold % 3;  // fold 3 empty
  o.t1 = -1;
  CHECK_THROWS_AS(cross_validate(wells, o, "x"), ValidationError);
}

TEST_CASE("forecast: default grid") {
  CHECK(default_forecast_grid(50) == std::vector<int>{6, 12, 18, 25, 31, 37, 43, 50});
  CHECK(default_forecast_grid(4) == std::vector<int>{1, 2, 3, 4});
  CHECK(default_forecast_grid(1) == std::vector<int>{1});
}

TEST_CASE("forecast: the full-length point equals the baseline run") {
  const auto wells = toy_wells(16, 3, 3, 6, 4);
  CvOptions o = toy_options();
  o.train.max_epochs = 40;
  o.train.patience = 10;
  const CvResult base = cross_validate(wells, o, "base");
  for (auto mode : {ForecastMode::prefix, ForecastMode::suffix}) {
    const ForecastCurve c = forecast_experiment(wells, o, mode, {2, 6});
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[1].mape == base.report.mean_mape);
    CHECK(c.points[1].pearson == base.report.mean_pearson);
    CHECK(c.points[0].t1 - c.points[0].t0 == 2);
    CHECK(c.points[0].t0 == (mode == ForecastMode::prefix ? 0 : 4));
  }
  CHECK_THROWS_AS(forecast_experiment(wells, o, ForecastMode::prefix, {0}), ValidationError);
  CHECK_THROWS_AS(forecast_experiment(wells, o, ForecastMode::prefix, {7}), ValidationError);
  CHECK_THROWS_AS(parse_forecast_mode("middle"), ValidationError);
}

TEST_CASE("forecast: csv columns") {
  ForecastCurve c;
  c.total_frames = 10;
  c.points = {{4, 0, 4, 0.25, 0.5, false}};
  const std::string csv = forecast_csv(c);
  CHECK(csv == "mode,frames,t0,t1,frames_ahead,mape,pearson,failed\nprefix,4,0,4,6,0.25,0.5,0\n");
}

TEST_CASE("export_attention: effective weights") {
  model::ModelConfig mc;
  mc.temporal = model::TemporalMode::last_frame;
  mc.feature = model::FeatureMode::none;
  const auto m = model::AtpModel::create(5, 4, mc, 1);
  const AttentionExport a = export_attention(m);
  CHECK(a.temporal == std::vector<double>{0, 0, 0, 1});
  CHECK(a.feature_weight == std::vector<double>(5, 1.0));
  CHECK(a.ratio == 1.0);

  mc.temporal = model::TemporalMode::w_t;
  mc.feature = model::FeatureMode::w_k;
  auto m2 = model::AtpModel::create(3, 4, mc, 1);
  const double wt[] = {1.0, -3.0, 0.0, 4.0};
  for (int t = 0; t < 4; ++t) m2.w_t()[t] = wt[t];
  m2.w_k()[0] = 0.5, m2.w_k()[1] = -2.0, m2.w_k()[2] = 1.0;
  const AttentionExport b = export_attention(m2);
  double mass = 0.0;
  for (double w : b.temporal) mass += std::abs(w);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.temporal[3] == doctest::Approx(0.5));
  CHECK(b.feature_order == std::vector<int>{1, 2, 0});
  CHECK(b.feature_weight == std::vector<double>{2.0, 1.0, 0.5});
  CHECK(b.ratio == 4.0);
  const std::string csv = feature_csv(b, {"a", "b", "c"});
  CHECK(csv == "rank,feature,name,abs_weight\n0,1,b,2\n1,2,c,1\n2,0,a,0.5\n");
}

TEST_CASE("ablation table: best bold, second underlined") {
  AblationTable t;
  t.name = "demo";
  t.header_rows = {"Cavity aggregation"};
  const double mapes[] = {0.30, 0.10, 0.20};
  const double rs[] = {0.90, 0.80, 0.95};
  const char* labels[] = {"Min", "SE", "Max"};
  for (int i = 0; i < 3; ++i) {
    AblationColumn c;
    c.labels = {labels[i]};
    c.report.mean_mape = mapes[i];
    c.report.mean_pearson = rs[i];
    t.columns.push_back(c);
  }
  CHECK(t.best() == 1);
  const std::string md = table_markdown(t);
  CHECK(md ==
        "| Cavity aggregation | Min | SE | Max |\n"
        "|---|---|---|---|\n"
        "| MAPE ↓ | 0.3000 | **0.1000** | <u>0.2000</u> |\n"
        "| Pearson ↑ | <u>0.9000</u> | 0.8000 | **0.9500** |\n");
  CHECK(table_csv(t) == "Cavity aggregation,Min,SE,Max\nMAPE,0.3,0.1,0.2\nPearson,0.9,0.8,0.95\n");
  CHECK(to_json(t)["best"] == 1);
}

TEST_CASE("ablation: one column per mode") {
  const auto wells = toy_wells(8, 2, 3, 4, 6);
  CvOptions o = toy_options();
  o.train.max_epochs = 3;
  o.train.patience = 1;
  const AblationTable agg = aggregation_ablation(wells, o);
  REQUIRE(agg.columns.size() == 5);
  CHECK(agg.columns[1].labels[0] == "SE");
  const AblationTable att = attention_ablation(wells, o);
  REQUIRE(att.columns.size() == 4);
  CHECK(att.columns[3].labels == std::vector<std::string>{"w_t", "w_k"});
  CHECK(att.header_rows.size() == 2);
}

namespace {

seg::WellSegmentation from_truth(const synth::GroundTruth& gt) {
  seg::WellSegmentation s;
  for (const auto& t : gt.cavities) {
    seg::Cavity c;
    c.id = t.id;
    c.center = t.center;
    c.crop_x0 = t.crop_x0, c.crop_y0 = t.crop_y0, c.crop_size = t.crop_size;
    c.mask = t.place(t.cavity_crop, gt.width, gt.height);
    s.cavities.cavities.push_back(c);
    seg::OrganoidTrack tr;
    tr.masks = t.organoid_crops;
    s.tracks.push_back(tr);
  }
  return s;
}

synth::SynthConfig small_synth() {
  synth::SynthConfig c;
  c.wells = 4;
  c.frames = 6;
  return c;
}

}  // namespace

TEST_CASE("score_segmentation: ground truth scores 1, a moved cavity is missed") {
  const synth::WellGenerator gen(small_synth(), 0);
  const auto& gt = gen.ground_truth();
  auto s = from_truth(gt);
  const SegmentationScore p = score_segmentation(s, gt);
  CHECK(p.matched == p.gt_cavities);
  CHECK(p.cavity_recall == 1.0);
  CHECK(p.mean_cavity_dice == 1.0);
  CHECK(p.mean_track_dice == 1.0);

  s.cavities.cavities[0].center.x += 0.6 * gt.cavities[0].radius;
  const SegmentationScore q = score_segmentation(s, gt);
  CHECK(q.matched == q.gt_cavities - 1);
  CHECK(q.cavity_recall == doctest::Approx(static_cast<double>(q.gt_cavities - 1) / q.gt_cavities));

  // Shifted track window: frame k of the track is source frame k + 2.
  auto late = from_truth(gt);
  for (auto& tr : late.tracks) tr.masks.erase(tr.masks.begin(), tr.masks.begin() + 2);
  CHECK(score_segmentation(late, gt, 2).mean_track_dice == 1.0);
  CHECK(score_segmentation(late, gt, 0).mean_track_dice < 1.0);
}

TEST_CASE("segmentation pipeline on a synthetic well; full-length reduced history matches") {
  const synth::WellGenerator gen(small_synth(), 0);
  const auto pre = prep::preprocess_well([&](int t) { return gen.frame(t); }, gen.frames(), {});
  const auto segmenter = seg::make_segmenter({});
  const seg::SegmentConfig cfg;
  const auto s = seg::segment_well(pre.frames, *segmenter, cfg);
  const SegmentationScore sc = score_segmentation(s, gen.ground_truth(), pre.first_frame);
  CHECK(sc.cavity_recall >= 0.9);
  CHECK(sc.mean_cavity_dice >= 0.85);
  CHECK(sc.mean_track_dice >= 0.7);

  const auto full = reduced_history_dice(pre.frames, s, *segmenter, cfg.track, gen.frames());
  for (double d : full) CHECK(d == 1.0);
  const auto tail = reduced_history_dice(pre.frames, s, *segmenter, cfg.track, 3);
  CHECK(tail.size() == full.size());
  for (double d : tail) CHECK((d >= 0.0 && d <= 1.0));
  CHECK_THROWS_AS(reduced_history_dice(pre.frames, s, *segmenter, cfg.track, 1), ValidationError);
}
