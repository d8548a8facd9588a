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

#include "oatp/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "oatp/parallel.hpp"
#include "oatp/random.hpp"

namespace oatp::eval {

namespace {

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

CvResult cross_validate(const std::vector<WellFeatures>& wells, const CvOptions& opt, const std::string& name) {
  const auto start = std::chrono::steady_clock::now();
  opt.train.validate();
  if (wells.empty()) throw ValidationError("cross-validation: no wells");
  const int folds = opt.train.folds;
  const int k = wells[0].cube.k, f_all = wells[0].cube.f;
  for (const auto& w : wells) {
    if (w.cube.k != k || w.cube.f != f_all)
      throw ValidationError("well " + w.well_id + ": cube is " + std::to_string(w.cube.k) + " x " +
                            std::to_string(w.cube.f) + ", expected " + std::to_string(k) + " x " +
                            std::to_string(f_all));
    if (w.fold < 0 || w.fold >= folds)
      throw ValidationError("well " + w.well_id + ": fold " + std::to_string(w.fold) + " outside 0.." +
                            std::to_string(folds - 1));
    if (!(w.atp > 0.0)) throw ValidationError("well " + w.well_id + ": ATP label must be > 0");
  }
  const int t1 = opt.t1 < 0 ? f_all : opt.t1;
  if (opt.t0 < 0 || t1 > f_all || opt.t0 >= t1)
    throw ValidationError("frame range [" + std::to_string(opt.t0) + ", " + std::to_string(t1) + ") outside 0.." +
                          std::to_string(f_all));
  const int f = t1 - opt.t0;

  // Sliced, not yet normalized cubes.
  std::vector<feat::FeatureCube> sliced(wells.size());
  for (std::size_t i = 0; i < wells.size(); ++i) {
    const feat::FeatureCube& c = wells[i].cube;
    feat::FeatureCube s;
    s.n = c.n, s.k = c.k, s.f = f;
    s.backend = c.backend;
    s.well_id = wells[i].well_id;
    s.cavity_ids = c.cavity_ids;
    s.values.resize(static_cast<std::size_t>(s.n) * s.k * f);
    for (int a = 0; a < s.n; ++a)
      for (int j = 0; j < s.k; ++j)
        for (int t = 0; t < f; ++t) s.at(a, j, t) = c.at(a, j, opt.t0 + t);
    sliced[i] = std::move(s);
  }

  CvResult res;
  res.folds.resize(folds);
  parallel_for(static_cast<std::size_t>(folds), opt.workers, [&](std::size_t fi) {
    const int fold = static_cast<int>(fi);
    FoldRun& run = res.folds[fi];
    run.fold = fold;
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < wells.size(); ++i) (wells[i].fold == fold ? run.val_wells : train_idx).push_back(i);
    if (run.val_wells.empty() || train_idx.empty())
      throw ValidationError("fold " + std::to_string(fold) + " has no " +
                            (run.val_wells.empty() ? "validation" : "training") + " wells");
    std::vector<const feat::FeatureCube*> train_cubes;
    for (std::size_t i : train_idx) train_cubes.push_back(&sliced[i]);
    run.norm = feat::compute_norm_stats(train_cubes);
    std::vector<model::Bag> bags(wells.size());
    auto bag_for = [&](std::size_t i) {
      feat::FeatureCube c = sliced[i];
      feat::apply_norm(c, run.norm);
      bags[i] = model::bag_from_cube(c);
    };
    std::vector<model::Sample> train, val;
    for (std::size_t i : train_idx) bag_for(i), train.push_back({&bags[i], wells[i].atp});
    for (std::size_t i : run.val_wells) bag_for(i), val.push_back({&bags[i], wells[i].atp});
    run.result = model::train_fold(train, val, k, f, opt.model, opt.train,
                                   derive_seed(opt.train.seed, "fold", static_cast<std::uint64_t>(fold)));
    run.predictions = model::predict(run.result.model, val);
  });

  res.oof.assign(wells.size(), 0.0);
  res.report.name = name;
  std::vector<double> y_all, p_all;
  for (const FoldRun& run : res.folds) {
    for (const auto& w : run.result.warnings) res.warnings.push_back("fold " + std::to_string(run.fold) + ": " + w);
    std::vector<double> y, p;
    for (std::size_t v = 0; v < run.val_wells.size(); ++v) {
      y.push_back(wells[run.val_wells[v]].atp);
      p.push_back(run.predictions[v]);
      res.oof[run.val_wells[v]] = run.predictions[v];
    }
    FoldMetrics m;
    m.fold = run.fold;
    m.n = y.size();
    m.mape = mape(y, p);
    try {
      m.pearson = pearson(y, p);
    } catch (const ValidationError& e) {
      m.pearson = 0.0;
      res.report.failed = true;
      res.warnings.push_back("fold " + std::to_string(run.fold) + ": " + e.what());
    }
    res.report.folds.push_back(m);
    y_all.insert(y_all.end(), y.begin(), y.end());
    p_all.insert(p_all.end(), p.begin(), p.end());
  }
  res.report.bins = binned_mape(y_all, p_all);
  res.report.finalize();
  res.report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---- ablations ----------------------------------------------------------------

int AblationTable::best() const {
  int b = -1;
  for (int i = 0; i < static_cast<int>(columns.size()); ++i)
    if (b < 0 || columns[i].report.mean_mape < columns[b].report.mean_mape) b = i;
  return b;
}

AblationTable aggregation_ablation(const std::vector<WellFeatures>& wells, const CvOptions& options) {
  AblationTable t;
  t.name = "aggregation";
  t.header_rows = {"Cavity aggregation"};
  const std::pair<model::Aggregation, const char*> modes[] = {{model::Aggregation::min, "Min"},
                                                               {model::Aggregation::se, "SE"},
                                                               {model::Aggregation::max, "Max"},
                                                               {model::Aggregation::sum, "Sum"},
                                                               {model::Aggregation::mean, "Mean"}};
  for (const auto& [mode, label] : modes) {
    CvOptions o = options;
    o.model.aggregation = mode;
    t.columns.push_back({{label}, cross_validate(wells, o, "aggregation_" + model::to_string(mode)).report});
  }
  return t;
}

AblationTable attention_ablation(const std::vector<WellFeatures>& wells, const CvOptions& options) {
  AblationTable t;
  t.name = "attention";
  t.header_rows = {"Temporal attention", "Feature attention"};
  for (auto tm : {model::TemporalMode::last_frame, model::TemporalMode::w_t})
    for (auto fm : {model::FeatureMode::none, model::FeatureMode::w_k}) {
      CvOptions o = options;
      o.model.temporal = tm;
      o.model.feature = fm;
      t.columns.push_back({{tm == model::TemporalMode::w_t ? "w_t" : "Last frame", fm == model::FeatureMode::w_k ? "w_k" : "None"},
                           cross_validate(wells, o, "attention_" + model::to_string(tm) + "_" + model::to_string(fm)).report});
    }
  return t;
}

namespace {

// Rank of each column by a metric; 0 best.
std::vector<int> ranks(const AblationTable& t, bool by_mape) {
  std::vector<int> order(t.columns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ra = t.columns[a].report;
    const auto& rb = t.columns[b].report;
    return by_mape ? ra.mean_mape < rb.mean_mape : ra.mean_pearson > rb.mean_pearson;
  });
  std::vector<int> r(t.columns.size());
  for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<int>(i);
  return r;
}

}  // namespace

std::string table_markdown(const AblationTable& t) {
  std::ostringstream os;
  for (std::size_t h = 0; h < t.header_rows.size(); ++h) {
    os << "| " << t.header_rows[h] << " |";
    for (const auto& c : t.columns) os << ' ' << c.labels[h] << " |";
    os << '\n';
    if (h == 0) {
      os << "|---|";
      for (std::size_t i = 0; i < t.columns.size(); ++i) os << "---|";
      os << '\n';
    }
  }
  for (bool by_mape : {true, false}) {
    const std::vector<int> r = ranks(t, by_mape);
    os << (by_mape ? "| MAPE ↓ |" : "| Pearson ↑ |");
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      const auto& rep = t.columns[i].report;
      const std::string v = fmt(by_mape ? rep.mean_mape : rep.mean_pearson);
      os << ' ' << (r[i] == 0 ? "**" + v + "**" : r[i] == 1 ? "<u>" + v + "</u>" : v) << " |";
    }
    os << '\n';
  }
  return os.str();
}

std::string table_csv(const AblationTable& t) {
  std::ostringstream os;
  os.precision(10);
  for (std::size_t h = 0; h < t.header_rows.size(); ++h) {
    os << t.header_rows[h];
    for (const auto& c : t.columns) os << ',' << c.labels[h];
    os << '\n';
  }
  os << "MAPE";
  for (const auto& c : t.columns) os << ',' << c.report.mean_mape;
  os << "\nPearson";
  for (const auto& c : t.columns) os << ',' << c.report.mean_pearson;
  os << '\n';
  return os.str();
}

Json to_json(const AblationTable& t) {
  Json cols = Json::array();
  for (const auto& c : t.columns) cols.push_back({{"labels", c.labels}, {"report", to_json(c.report)}});
  return {{"name", t.name}, {"header_rows", t.header_rows}, {"columns", cols}, {"best", t.best()}};
}

// ---- forecasting ----------------------------------------------------------------

std::string to_string(ForecastMode m) { return m == ForecastMode::prefix ? "prefix" : "suffix"; }

ForecastMode parse_forecast_mode(const std::string& s) {
  if (s == "prefix") return ForecastMode::prefix;
  if (s == "suffix") return ForecastMode::suffix;
  throw ValidationError("forecast mode: expected prefix or suffix, got '" + s + "'");
}

std::vector<int> default_forecast_grid(int f) {
  std::vector<int> g;
  for (int e = 1; e <= 8; ++e) {
    const int m = std::max(1, f * e / 8);
    if (g.empty() || g.back() != m) g.push_back(m);
  }
  return g;
}

ForecastCurve forecast_experiment(const std::vector<WellFeatures>& wells, const CvOptions& options, ForecastMode mode,
                                  const std::vector<int>& grid) {
  if (wells.empty()) throw ValidationError("forecast: no wells");
  const int f = wells[0].cube.f;
  for (int m : grid)
    if (m < 1 || m > f)
      throw ValidationError("forecast: grid point " + std::to_string(m) + " outside 1.." + std::to_string(f));
  ForecastCurve c;
  c.mode = mode;
  c.total_frames = f;
  for (int m : grid) {
    CvOptions o = options;
    o.t0 = mode == ForecastMode::prefix ? 0 : f - m;
    o.t1 = mode == ForecastMode::prefix ? m : f;
    const CvResult r = cross_validate(wells, o, "forecast_" + to_string(mode) + "_" + std::to_string(m));
    c.points.push_back({m, o.t0, o.t1, r.report.mean_mape, r.report.mean_pearson, r.report.failed});
  }
  return c;
}

std::string forecast_csv(const ForecastCurve& c) {
  std::ostringstream os;
  os.precision(10);
  os << "mode,frames,t0,t1,frames_ahead,mape,pearson,failed\n";
  for (const auto& p : c.points)
    os << to_string(c.mode) << ',' << p.frames << ',' << p.t0 << ',' << p.t1 << ',' << c.total_frames - p.t1 << ','
       << p.mape << ',' << p.pearson << ',' << (p.failed ? 1 : 0) << '\n';
  return os.str();
}

Json to_json(const ForecastCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.points)
    pts.push_back({{"frames", p.frames}, {"t0", p.t0}, {"t1", p.t1}, {"mape", p.mape}, {"pearson", p.pearson},
                   {"failed", p.failed}});
  return {{"mode", to_string(c.mode)}, {"total_frames", c.total_frames}, {"points", pts}};
}

// ---- attention export -------------------------------------------------------------

AttentionExport export_attention(const model::AtpModel& m) {
  AttentionExport a;
  if (m.config.temporal == model::TemporalMode::w_t) {
    a.temporal = m.temporal_weights();
  } else {
    a.temporal.assign(m.f, 0.0);
    a.temporal.back() = 1.0;
  }
  std::vector<double> wk(m.k, 1.0);
  if (m.config.feature == model::FeatureMode::w_k)
    for (int j = 0; j < m.k; ++j) wk[j] = std::abs(m.w_k()[j]);
  a.feature_order.resize(m.k);
  std::iota(a.feature_order.begin(), a.feature_order.end(), 0);
  std::stable_sort(a.feature_order.begin(), a.feature_order.end(), [&](int x, int y) { return wk[x] > wk[y]; });
  for (int j : a.feature_order) a.feature_weight.push_back(wk[j]);
  const double lo = a.feature_weight.back(), hi = a.feature_weight.front();
  a.ratio = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  return a;
}

std::string temporal_csv(const AttentionExport& a) {
  std::ostringstream os;
  os.precision(10);
  os << "frame,weight\n";
  for (std::size_t t = 0; t < a.temporal.size(); ++t) os << t << ',' << a.temporal[t] << '\n';
  return os.str();
}

std::string feature_csv(const AttentionExport& a, const std::vector<std::string>& names) {
  std::ostringstream os;
  os.precision(10);
  os << "rank,feature,name,abs_weight\n";
  for (std::size_t r = 0; r < a.feature_order.size(); ++r) {
    const int j = a.feature_order[r];
    os << r << ',' << j << ',' << (j < static_cast<int>(names.size()) ? names[j] : "f" + std::to_string(j)) << ','
       << a.feature_weight[r] << '\n';
  }
  return os.str();
}

// ---- reduced-history segmentation ----------------------------------------------------

std::vector<double> reduced_history_dice(const seg::Timelapse& frames, const seg::WellSegmentation& s,
                                         const seg::PromptableSegmenter& segmenter, const seg::TrackConfig& config,
                                         int frames_kept, int workers) {
  const int f = static_cast<int>(frames.size());
  if (frames_kept < 2 || frames_kept > f)
    throw ValidationError("reduced history: frames kept must be in 2.." + std::to_string(f));
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < s.tracks.size(); ++i)
    if (s.tracks[i].valid) valid.push_back(i);
  std::vector<double> out(valid.size(), 0.0);
  parallel_for(valid.size(), workers, [&](std::size_t v) {
    const std::size_t i = valid[v];
    const seg::Cavity& c = s.cavities.cavities[i];
    const seg::Timelapse crops = seg::crop_timelapse(frames, c);
    const seg::Timelapse tail(crops.end() - frames_kept, crops.end());
    const Mask cm = c.crop_mask();
    const seg::OrganoidTrack short_track = seg::propagate_track(tail, segmenter, config, &cm);
    double sum = 0.0;
    for (int t = 0; t < frames_kept; ++t) sum += seg::dice(s.tracks[i].masks[f - frames_kept + t], short_track.masks[t]);
    out[v] = sum / frames_kept;
  });
  return out;
}

// ---- segmentation against ground truth -------------------------------------------

namespace {

// Dice of two crop-local masks placed at their offsets in a common frame.
double placed_dice(const Mask& a, int ax, int ay, const Mask& b, int bx, int by) {
  std::size_t na = 0, nb = 0, both = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (a(x, y)) {
        ++na;
        const int u = ax + x - bx, v = ay + y - by;
        if (b.contains(u, v) && b(u, v)) ++both;
      }
  for (auto v : b.values()) nb += v != 0;
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

SegmentationScore score_segmentation(const seg::WellSegmentation& s, const synth::GroundTruth& gt, int first_frame) {
  SegmentationScore out;
  out.gt_cavities = static_cast<int>(gt.cavities.size());
  out.detected = static_cast<int>(s.cavities.cavities.size());
  std::vector<bool> used(s.cavities.cavities.size(), false);
  for (const synth::CavityTruth& t : gt.cavities) {
    int best = -1;
    double best_d = 0.5 * t.radius;
    for (std::size_t i = 0; i < s.cavities.cavities.size(); ++i) {
      if (used[i]) continue;
      const PointF c = s.cavities.cavities[i].center;
      const double d = std::hypot(c.x - t.center.x, c.y - t.center.y);
      if (d <= best_d) best = static_cast<int>(i), best_d = d;
    }
    if (best < 0) continue;
    used[best] = true;
    ++out.matched;
    const seg::Cavity& c = s.cavities.cavities[best];
    out.cavity_dice.push_back(placed_dice(t.cavity_crop, t.crop_x0, t.crop_y0, c.crop_mask(), c.crop_x0, c.crop_y0));
    const seg::OrganoidTrack& tr = s.tracks[best];
    std::vector<double> per_frame;
    for (std::size_t k = 0; k < tr.masks.size(); ++k) {
      const std::size_t src = static_cast<std::size_t>(first_frame) + k;
      if (src >= t.organoid_crops.size()) break;
      per_frame.push_back(placed_dice(t.organoid_crops[src], t.crop_x0, t.crop_y0, tr.masks[k], c.crop_x0, c.crop_y0));
    }
    out.track_dice.push_back(mean_of(per_frame));
  }
  out.cavity_recall = out.gt_cavities ? static_cast<double>(out.matched) / out.gt_cavities : 1.0;
  out.mean_cavity_dice = mean_of(out.cavity_dice);
  out.mean_track_dice = mean_of(out.track_dice);
  return out;
}

Json to_json(const SegmentationScore& s) {
  return {{"gt_cavities", s.gt_cavities},         {"detected", s.detected},
          {"matched", s.matched},                 {"cavity_recall", s.cavity_recall},
          {"mean_cavity_dice", s.mean_cavity_dice}, {"mean_track_dice", s.mean_track_dice},
          {"cavity_dice", s.cavity_dice},         {"track_dice", s.track_dice}};
}

}  // namespace oatp::eval
