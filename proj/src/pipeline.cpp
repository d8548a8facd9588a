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

#include "oatp/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include "oatp/layout.hpp"
#include "oatp/random.hpp"
#include "oatp/version.hpp"

namespace oatp::pipeline {

void PipelineConfig::apply_seed() {
  synth.seed = seed;
  train.seed = derive_seed(seed, "train");
}

std::string PipelineConfig::hash() const { return json_hash(to_json(*this)); }

Json to_json(const PipelineConfig& c) {
  Json synth = synth::to_json(c.synth);
  synth.erase("seed");
  Json train = model::to_json(c.train);
  train.erase("seed");
  return Json{{"seed", c.seed},
              {"synth", synth},
              {"preprocess", prep::to_json(c.preprocess)},
              {"segment", seg::to_json(c.segment)},
              {"features", {{"backend", c.features.backend}, {"pad", c.features.pad}}},
              {"model", model::to_json(c.model)},
              {"train", train},
              {"forecast", {{"mode", c.forecast.mode}, {"grid", c.forecast.grid}}},
              {"reduced_history_frames", c.reduced_history_frames}};
}

namespace {

void reject_seed(const Json& section, const std::string& name) {
  if (section.is_object() && section.contains("seed"))
    throw ValidationError("config." + name + ": 'seed' is set at the top level only");
}

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  StrictObject o(j, "config");
  o.get("seed", c.seed).get("reduced_history_frames", c.reduced_history_frames);
  if (o.has("synth")) {
    const Json& s = o.child("synth");
    reject_seed(s, "synth");
    c.synth = synth::synth_config_from_json(s);
  }
  if (o.has("preprocess")) c.preprocess = prep::preprocess_config_from_json(o.child("preprocess"));
  if (o.has("segment")) c.segment = seg::segment_config_from_json(o.child("segment"));
  if (o.has("features")) {
    StrictObject f(o.child("features"), "config.features");
    f.get("backend", c.features.backend).get("pad", c.features.pad).finish();
  }
  if (o.has("model")) c.model = model::model_config_from_json(o.child("model"));
  if (o.has("train")) {
    const Json& t = o.child("train");
    reject_seed(t, "train");
    c.train = model::train_config_from_json(t);
  }
  if (o.has("forecast")) {
    StrictObject f(o.child("forecast"), "config.forecast");
    f.get("mode", c.forecast.mode).get("grid", c.forecast.grid).finish();
    eval::parse_forecast_mode(c.forecast.mode);
  }
  o.finish();
  if (c.features.pad < 0) throw ValidationError("config.features.pad must be >= 0");
  feat::make_backend(c.features.backend);
  if (c.reduced_history_frames < 2) throw ValidationError("config.reduced_history_frames must be >= 2");
  if (c.train.folds != c.synth.folds)
    throw ValidationError("config: train.folds (" + std::to_string(c.train.folds) + ") differs from synth.folds (" +
                          std::to_string(c.synth.folds) + ")");
  c.synth.validate();
  c.train.validate();
  c.apply_seed();
  return c;
}

Json preset_json(const std::string& name) {
  if (name == "desk") return {{"train", {{"lr", 1e-2}, {"patience", 500}}}};
  if (name == "paper") {
    Json s = synth::to_json(synth::SynthConfig::paper_scale());
    s.erase("seed");
    return {{"synth", s}};
  }
  throw ValidationError("preset must be desk or paper, got '" + name + "'");
}

void set_dotted(Json& j, const std::string& key, const std::string& value) {
  if (key.empty()) throw ValidationError("--set: empty key");
  Json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("--set: malformed key '" + key + "'");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      Json v = Json::parse(value, nullptr, false);
      (*node)[part] = v.is_discarded() ? Json(value) : v;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

Json stamp(const PipelineConfig& c) { return Json{{"tool_version", kToolVersion}, {"config_hash", c.hash()}}; }

std::string csv_stamp(const PipelineConfig& c) {
  return std::string("# oatp ") + kToolVersion + " config " + c.hash() + "\n";
}

// ---- paths ----------------------------------------------------------------

fs::path preprocessed_dir(const fs::path& work, int well) { return work / layout::well_dir(well) / "preprocessed"; }
fs::path segmentation_dir(const fs::path& work, int well) { return work / "segmentation" / layout::well_dir(well); }
fs::path features_path(const fs::path& work, int well) {
  return work / "features" / (layout::well_dir(well) + ".otfc");
}

// ---- stages -----------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw IoError("cannot write " + path.string());
}

synth::Manifest load_manifest(const fs::path& data) {
  const fs::path p = data / "manifest.json";
  if (!fs::exists(p)) throw ValidationError("no manifest at " + p.string());
  return synth::read_manifest(p);
}

void note_preprocess(StageSummary& s, const std::string& id, const prep::PreprocessResult& r) {
  int flagged = 0;
  for (bool b : r.registration.flagged) flagged += b;
  if (flagged) s.warnings.push_back(id + ": " + std::to_string(flagged) + " frames with low registration confidence");
  if (!r.contrast_warnings.empty())
    s.warnings.push_back(id + ": " + std::to_string(r.contrast_warnings.size()) + " frames with zero contrast spread");
  s.details[id] = {{"frames", r.frames.size()}, {"first_frame", r.first_frame}, {"flagged", flagged}};
}

Json segmentation_counts(const seg::WellSegmentation& s) {
  int valid = 0;
  for (const auto& t : s.tracks) valid += t.valid;
  return {{"cavities", s.cavities.cavities.size()}, {"valid_tracks", valid}};
}

void note_segment(StageSummary& s, const std::string& id, const seg::WellSegmentation& w) {
  const Json c = segmentation_counts(w);
  const int invalid = static_cast<int>(w.tracks.size()) - c["valid_tracks"].get<int>();
  if (invalid) s.warnings.push_back(id + ": " + std::to_string(invalid) + " tracks excluded");
  if (w.cavities.cavities.empty()) s.warnings.push_back(id + ": no cavities detected");
  s.details[id] = c;
}

}  // namespace

synth::Manifest run_synth(const Context& ctx, const fs::path& data) {
  ctx.log("synth: " + std::to_string(ctx.config.synth.wells) + " wells -> " + data.string());
  return synth::generate_dataset(ctx.config.synth, data, ctx.workers);
}

StageSummary run_preprocess(const Context& ctx, const fs::path& data, const fs::path& work) {
  const synth::Manifest m = load_manifest(data);
  StageSummary s;
  for (const auto& rec : m.wells) {
    const fs::path dir = data / rec.raw_dir;
    const prep::RawLayout lay = prep::discover_raw(dir);
    const int overlap = m.config.overlap;
    const auto r = prep::preprocess_well(
        [&](int t) { return prep::read_raw_frame(dir, t, lay.z_levels, overlap); }, lay.frames, ctx.config.preprocess,
        ctx.workers);
    prep::write_preprocessed(preprocessed_dir(work, rec.index), r);
    note_preprocess(s, rec.well_id, r);
    ctx.log("preprocess: " + rec.well_id);
  }
  return s;
}

StageSummary run_segment(const Context& ctx, const fs::path& data, const fs::path& work) {
  const synth::Manifest m = load_manifest(data);
  const auto segmenter = seg::make_segmenter(ctx.config.segment.segmenter);
  StageSummary s;
  for (const auto& rec : m.wells) {
    const auto r = prep::read_preprocessed(preprocessed_dir(work, rec.index));
    const auto w = seg::segment_well(r.frames, *segmenter, ctx.config.segment, ctx.workers);
    seg::write_segmentation(segmentation_dir(work, rec.index), w);
    note_segment(s, rec.well_id, w);
    ctx.log("segment: " + rec.well_id);
  }
  return s;
}

StageSummary run_featurize(const Context& ctx, const fs::path& data, const fs::path& work) {
  const synth::Manifest m = load_manifest(data);
  const auto backend = feat::make_backend(ctx.config.features.backend);
  const Json st = stamp(ctx.config);
  StageSummary s;
  for (const auto& rec : m.wells) {
    const auto r = prep::read_preprocessed(preprocessed_dir(work, rec.index));
    const auto w = seg::read_segmentation(segmentation_dir(work, rec.index));
    feat::FeatureCube cube = feat::build_feature_cube(r.frames, w, *backend, {ctx.config.features.pad, ctx.workers});
    cube.well_id = rec.well_id;
    feat::export_features(features_path(work, rec.index), cube, st);
    if (cube.sanitized) s.warnings.push_back(rec.well_id + ": " + std::to_string(cube.sanitized) + " sanitized vectors");
    s.details[rec.well_id] = {{"n", cube.n}, {"k", cube.k}, {"f", cube.f}, {"excluded_tracks", cube.excluded_tracks}};
    ctx.log("featurize: " + rec.well_id);
  }
  return s;
}

std::vector<eval::WellFeatures> load_features(const synth::Manifest& manifest, const fs::path& features_dir) {
  std::vector<eval::WellFeatures> out;
  for (const auto& rec : manifest.wells) {
    const fs::path p = features_dir / (layout::well_dir(rec.index) + ".otfc");
    if (!fs::exists(p)) throw ValidationError("missing feature file " + p.string());
    eval::WellFeatures w;
    w.well_id = rec.well_id;
    w.atp = rec.atp;
    w.fold = rec.fold;
    w.cube = feat::import_features(p);
    if (w.cube.n == 0) throw ValidationError(p.string() + ": no cavities");
    out.push_back(std::move(w));
  }
  return out;
}

eval::CvOptions cv_options(const Context& ctx) {
  eval::CvOptions o;
  o.model = ctx.config.model;
  o.train = ctx.config.train;
  o.workers = ctx.workers;
  return o;
}

namespace {

std::string fold_name(int fold) { return "fold_" + std::to_string(fold); }

Json norm_json(const feat::NormStats& n) {
  return {{"mean", n.mean}, {"sd", n.sd}, {"train_wells", n.train_wells}};
}

feat::NormStats norm_from_json(const Json& j) {
  feat::NormStats n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.sd = j.at("sd").get<std::vector<double>>();
  n.train_wells = j.at("train_wells").get<std::vector<std::string>>();
  return n;
}

std::string predictions_csv(const std::vector<eval::WellFeatures>& wells, const std::vector<double>& oof) {
  std::ostringstream os;
  os.precision(17);
  os << "well_id,fold,atp,prediction\n";
  for (std::size_t i = 0; i < wells.size(); ++i)
    os << wells[i].well_id << ',' << wells[i].fold << ',' << wells[i].atp << ',' << oof[i] << '\n';
  return os.str();
}

Json report_json(const eval::ExperimentReport& r, const std::vector<std::string>& warnings) {
  Json j = eval::to_json(r);
  j["warnings"] = warnings;
  return j;
}

}  // namespace

eval::CvResult run_train(const Context& ctx, const std::vector<eval::WellFeatures>& wells, const fs::path& out) {
  const eval::CvOptions opt = cv_options(ctx);
  eval::CvResult cv = eval::cross_validate(wells, opt, "train");
  cv.report.config_hash = ctx.config.hash();
  cv.report.tool_version = kToolVersion;
  fs::create_directories(out);
  const Json st = stamp(ctx.config);
  const std::string cs = csv_stamp(ctx.config);
  const int f = wells.front().cube.f;
  for (const auto& run : cv.folds) {
    std::vector<std::string> val;
    for (std::size_t i : run.val_wells) val.push_back(wells[i].well_id);
    const Json extra{{"fold", run.fold}, {"norm", norm_json(run.norm)}, {"val_wells", val},
                     {"t0", opt.t0},     {"t1", opt.t1 < 0 ? f : opt.t1}, {"best_epoch", run.result.best_epoch},
                     {"stamp", st}};
    model::save_checkpoint(out / (fold_name(run.fold) + ".otck"), run.result.model, extra);
    write_text(out / ("history_" + fold_name(run.fold) + ".csv"), cs + model::history_csv(run.result.history));
  }
  write_json_file(out / "report.json", report_json(cv.report, cv.warnings));
  write_text(out / "predictions.csv", cs + predictions_csv(wells, cv.oof));
  write_text(out / "bins.csv", cs + eval::bins_csv(cv.report.bins));
  return cv;
}

eval::ExperimentReport run_eval(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                const fs::path& checkpoints) {
  const auto start = std::chrono::steady_clock::now();
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < wells.size(); ++i) by_id[wells[i].well_id] = i;
  eval::ExperimentReport rep;
  rep.name = "train";
  rep.config_hash = ctx.config.hash();
  rep.tool_version = kToolVersion;
  std::vector<double> y_all, p_all;
  for (int fold = 0; fold < ctx.config.train.folds; ++fold) {
    const fs::path p = checkpoints / (fold_name(fold) + ".otck");
    if (!fs::exists(p)) throw ValidationError("missing checkpoint " + p.string());
    Json extra;
    const model::AtpModel m = model::load_checkpoint(p, &extra);
    const feat::NormStats norm = norm_from_json(extra.at("norm"));
    const int t0 = extra.at("t0").get<int>(), t1 = extra.at("t1").get<int>();
    std::vector<double> y, pred;
    for (const auto& id : extra.at("val_wells").get<std::vector<std::string>>()) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError(p.string() + ": validation well " + id + " has no features");
      const eval::WellFeatures& w = wells[it->second];
      const feat::FeatureCube& c = w.cube;
      if (c.k != m.k || t1 > c.f || t1 - t0 != m.f)
        throw ValidationError(w.well_id + ": feature cube does not fit checkpoint " + p.string());
      feat::FeatureCube s;
      s.n = c.n, s.k = c.k, s.f = t1 - t0;
      s.backend = c.backend;
      s.well_id = c.well_id;
      s.cavity_ids = c.cavity_ids;
      s.values.resize(static_cast<std::size_t>(s.n) * s.k * s.f);
      for (int a = 0; a < s.n; ++a)
        for (int j = 0; j < s.k; ++j)
          for (int t = 0; t < s.f; ++t) s.at(a, j, t) = c.at(a, j, t0 + t);
      feat::apply_norm(s, norm);
      const model::Bag bag = model::bag_from_cube(s);
      const std::vector<model::Sample> one{{&bag, w.atp}};
      y.push_back(w.atp);
      pred.push_back(model::predict(m, one)[0]);
    }
    eval::FoldMetrics fm;
    fm.fold = fold;
    fm.n = y.size();
    fm.mape = eval::mape(y, pred);
    try {
      fm.pearson = eval::pearson(y, pred);
    } catch (const ValidationError&) {
      fm.pearson = 0.0;
      rep.failed = true;
    }
    rep.folds.push_back(fm);
    y_all.insert(y_all.end(), y.begin(), y.end());
    p_all.insert(p_all.end(), pred.begin(), pred.end());
  }
  rep.bins = eval::binned_mape(y_all, p_all);
  rep.finalize();
  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

eval::ForecastCurve run_forecast(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                 eval::ForecastMode mode, const std::vector<int>& grid, const fs::path& out) {
  const std::vector<int> g = grid.empty() ? eval::default_forecast_grid(wells.front().cube.f) : grid;
  eval::ForecastCurve c = eval::forecast_experiment(wells, cv_options(ctx), mode, g);
  const std::string base = "forecast_" + eval::to_string(mode);
  write_text(out / (base + ".csv"), csv_stamp(ctx.config) + eval::forecast_csv(c));
  Json j = eval::to_json(c);
  j["stamp"] = stamp(ctx.config);
  write_json_file(out / (base + ".json"), j);
  return c;
}

eval::AttentionExport run_attention(const fs::path& checkpoint, const fs::path& out, const Json& extra_stamp) {
  if (!fs::exists(checkpoint)) throw ValidationError("missing checkpoint " + checkpoint.string());
  const model::AtpModel m = model::load_checkpoint(checkpoint);
  const eval::AttentionExport a = eval::export_attention(m);
  std::vector<std::string> names;
  if (m.k == feat::kClassicalDim)
    for (const char* n : feat::classical_names()) names.emplace_back(n);
  std::string cs;
  if (extra_stamp.contains("config_hash"))
    cs = "# oatp " + extra_stamp.value("tool_version", std::string(kToolVersion)) + " config " +
         extra_stamp["config_hash"].get<std::string>() + "\n";
  write_text(out / "attention_temporal.csv", cs + eval::temporal_csv(a));
  write_text(out / "attention_features.csv", cs + eval::feature_csv(a, names));
  write_json_file(out / "attention.json", {{"temporal", a.temporal},
                                           {"feature_order", a.feature_order},
                                           {"feature_weight", a.feature_weight},
                                           {"ratio", a.ratio},
                                           {"stamp", extra_stamp}});
  return a;
}

std::vector<eval::AblationTable> run_ablation(const Context& ctx, const std::vector<eval::WellFeatures>& wells,
                                              const std::string& which, const fs::path& out) {
  if (which != "aggregation" && which != "attention" && which != "all")
    throw ValidationError("ablation must be aggregation, attention or all, got '" + which + "'");
  const eval::CvOptions opt = cv_options(ctx);
  std::vector<eval::AblationTable> tables;
  if (which != "attention") tables.push_back(eval::aggregation_ablation(wells, opt));
  if (which != "aggregation") tables.push_back(eval::attention_ablation(wells, opt));
  const std::string cs = csv_stamp(ctx.config);
  for (const auto& t : tables) {
    const std::string base = "ablation_" + t.name;
    write_text(out / (base + ".md"), eval::table_markdown(t));
    write_text(out / (base + ".csv"), cs + eval::table_csv(t));
    Json j = eval::to_json(t);
    j["stamp"] = stamp(ctx.config);
    write_json_file(out / (base + ".json"), j);
    ctx.log("ablation " + t.name + " done");
  }
  return tables;
}

// ---- end to end -------------------------------------------------------------

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

E2EResult run_e2e(const Context& ctx, const fs::path& out, const E2EOptions& options) {
  const PipelineConfig& cfg = ctx.config;
  E2EResult res;
  const auto t_start = std::chrono::steady_clock::now();
  res.manifest = synth::manifest_header(cfg.synth);
  const auto folds = synth::assign_folds(cfg.synth);
  const auto segmenter = seg::make_segmenter(cfg.segment.segmenter);
  const auto backend = feat::make_backend(cfg.features.backend);
  const Json st = stamp(cfg);
  fs::create_directories(out);

  std::vector<eval::WellFeatures> wells;
  for (int i = 0; i < cfg.synth.wells; ++i) {
    const synth::WellGenerator gen(cfg.synth, i);
    synth::WellRecord rec = gen.record();
    rec.fold = folds[i];
    if (options.keep_raw) synth::write_raw_well(gen, out);
    const auto pre = prep::preprocess_well([&](int t) { return gen.frame(t); }, gen.frames(), cfg.preprocess,
                                           ctx.workers);
    const auto segm = seg::segment_well(pre.frames, *segmenter, cfg.segment, ctx.workers);
    if (options.keep_intermediate) {
      prep::write_preprocessed(preprocessed_dir(out, i), pre);
      seg::write_segmentation(segmentation_dir(out, i), segm);
    }
    res.segmentation.push_back(eval::score_segmentation(segm, gen.ground_truth(), pre.first_frame));
    if (options.reduced_history) {
      const int keep = std::min(cfg.reduced_history_frames, static_cast<int>(pre.frames.size()));
      const auto d = eval::reduced_history_dice(pre.frames, segm, *segmenter, cfg.segment.track, keep, ctx.workers);
      res.reduced_history.insert(res.reduced_history.end(), d.begin(), d.end());
    }
    feat::FeatureCube cube = feat::build_feature_cube(pre.frames, segm, *backend, {cfg.features.pad, ctx.workers});
    cube.well_id = rec.well_id;
    feat::export_features(features_path(out, i), cube, st);
    if (cube.n == 0) throw ValidationError(rec.well_id + ": no valid organoid tracks");
    wells.push_back({rec.well_id, rec.atp, rec.fold, std::move(cube)});
    ctx.log("e2e: " + rec.well_id + " " + std::to_string(res.segmentation.back().matched) + "/" +
            std::to_string(res.segmentation.back().gt_cavities) + " cavities");
    res.manifest.wells[i] = std::move(rec);
  }
  write_json_file(out / "manifest.json", synth::to_json(res.manifest));
  const auto t_data = std::chrono::steady_clock::now();
  res.seconds_data = std::chrono::duration<double>(t_data - t_start).count();

  res.cv = run_train(ctx, wells, out / "train");
  res.seconds_train = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_data).count();
  if (options.ablate) res.ablations = run_ablation(ctx, wells, "all", out / "ablation");
  if (options.forecast)
    for (auto mode : {eval::ForecastMode::prefix, eval::ForecastMode::suffix})
      res.forecasts.push_back(run_forecast(ctx, wells, mode, cfg.forecast.grid, out / "forecast"));

  Json seg_j = Json::array();
  std::vector<double> recall, cdice, tdice;
  for (std::size_t i = 0; i < res.segmentation.size(); ++i) {
    Json w = eval::to_json(res.segmentation[i]);
    w["well_id"] = res.manifest.wells[i].well_id;
    seg_j.push_back(w);
    recall.push_back(res.segmentation[i].cavity_recall);
    cdice.insert(cdice.end(), res.segmentation[i].cavity_dice.begin(), res.segmentation[i].cavity_dice.end());
    tdice.insert(tdice.end(), res.segmentation[i].track_dice.begin(), res.segmentation[i].track_dice.end());
  }
  Json summary{{"stamp", st},
               {"mean_mape", res.cv.report.mean_mape},
               {"mean_pearson", res.cv.report.mean_pearson},
               {"cavity_recall", mean_of(recall)},
               {"cavity_dice", mean_of(cdice)},
               {"track_dice", mean_of(tdice)},
               {"seconds_data", res.seconds_data},
               {"seconds_train", res.seconds_train},
               {"wells", seg_j}};
  if (options.reduced_history)
    summary["reduced_history"] = {{"frames", cfg.reduced_history_frames},
                                  {"mean_dice", mean_of(res.reduced_history)},
                                  {"tracks", res.reduced_history.size()}};
  write_json_file(out / "e2e.json", summary);
  return res;
}

}  // namespace oatp::pipeline
