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

// oatp: command-line front end for the organoid timelapse pipeline.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 I/O or runtime
// failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "oatp/errors.hpp"
#include "oatp/pipeline.hpp"
#include "oatp/version.hpp"

namespace fs = std::filesystem;
using namespace oatp;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int wells = 0, frames = 0;
  int workers = 0;
  bool quiet = false;
  fs::path data = "data", work = "work", out;
};

pipeline::PipelineConfig resolve_config(const Common& c) {
  Json j = pipeline::preset_json(c.preset);
  if (!c.config_file.empty()) {
    if (!fs::exists(c.config_file)) throw ValidationError("config file not found: " + c.config_file);
    j.merge_patch(read_json_file(c.config_file));
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
    pipeline::set_dotted(j, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed_given) j["seed"] = c.seed;
  if (c.wells > 0) j["synth"]["wells"] = c.wells;
  if (c.frames > 0) j["synth"]["frames"] = c.frames;
  return pipeline::pipeline_config_from_json(j);
}

pipeline::Context make_context(const Common& c) {
  pipeline::Context ctx;
  ctx.config = resolve_config(c);
  ctx.workers = c.workers > 0 ? c.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (!c.quiet) ctx.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return ctx;
}

void write_summary(const fs::path& dir, const std::string& command, const pipeline::Context* ctx,
                   const std::string& status, const Json& outputs, const std::vector<std::string>& warnings,
                   double seconds) {
  Json j{{"command", command},
         {"tool_version", kToolVersion},
         {"config_hash", ctx ? ctx->config.hash() : ""},
         {"status", status},
         {"outputs", outputs},
         {"warnings", warnings},
         {"runtime_seconds", seconds}};
  fs::create_directories(dir);
  write_json_file(dir / "summary.json", j);
}

void print_report(const eval::ExperimentReport& r) {
  for (const auto& f : r.folds)
    std::printf("fold %d  n=%zu  MAPE %.4f  Pearson %.4f\n", f.fold, f.n, f.mape, f.pearson);
  std::printf("mean    MAPE %.4f  Pearson %.4f%s\n", r.mean_mape, r.mean_pearson, r.failed ? "  (failed)" : "");
}

std::vector<eval::WellFeatures> features_for(const Common& c) {
  const fs::path m = c.data / "manifest.json";
  if (!fs::exists(m)) throw ValidationError("no manifest at " + m.string());
  return pipeline::load_features(synth::read_manifest(m), c.work / "features");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Organoid timelapse ATP pipeline"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Common c;

  auto common = [&](CLI::App* sub, bool data, bool work) {
    sub->add_option("--config", c.config_file, "JSON configuration file");
    sub->add_option("--set", c.sets, "Override a configuration key, e.g. train.lr=0.01");
    sub->add_option("--seed", c.seed, "Root seed")
        ->each([&](const std::string&) { c.seed_given = true; })
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--workers", c.workers, "Worker threads (default: all cores)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--preset", c.preset, "Scale preset: desk or paper")->capture_default_str();
    sub->add_flag("--quiet", c.quiet, "No progress on stderr");
    if (data) sub->add_option("--data", c.data, "Dataset root")->capture_default_str();
    if (work) sub->add_option("--work", c.work, "Working directory")->capture_default_str();
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth_cmd, true, false);
  synth_cmd->add_option("--wells", c.wells, "Number of wells");
  synth_cmd->add_option("--frames", c.frames, "Frames per well");

  auto* pre_cmd = app.add_subcommand("preprocess", "Stitch, focus, normalize and register raw frames");
  common(pre_cmd, true, true);
  auto* seg_cmd = app.add_subcommand("segment", "Detect cavities and track organoids");
  common(seg_cmd, true, true);
  auto* feat_cmd = app.add_subcommand("featurize", "Extract per-frame organoid features");
  common(feat_cmd, true, true);
  auto* train_cmd = app.add_subcommand("train", "Cross-validated training");
  common(train_cmd, true, true);

  auto* eval_cmd = app.add_subcommand("eval", "Score saved fold checkpoints");
  common(eval_cmd, true, true);
  fs::path checkpoints;
  eval_cmd->add_option("--checkpoints", checkpoints, "Checkpoint directory (default: WORK/train)");

  auto* fc_cmd = app.add_subcommand("forecast", "MAPE against the number of frames given to the model");
  common(fc_cmd, true, true);
  std::string fc_mode;
  std::vector<int> fc_grid;
  fc_cmd->add_option("--mode", fc_mode, "prefix or suffix (default: from config)");
  fc_cmd->add_option("--grid", fc_grid, "Frame counts")->delimiter(',');

  auto* att_cmd = app.add_subcommand("attention", "Export learned attention weights");
  common(att_cmd, true, true);
  fs::path checkpoint;
  att_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file (default: WORK/train/fold_0.otck)");

  auto* abl_cmd = app.add_subcommand("ablate", "Aggregation and attention ablations");
  common(abl_cmd, true, true);
  std::string which = "all";
  abl_cmd->add_option("--which", which, "aggregation, attention or all")->capture_default_str();

  auto* e2e_cmd = app.add_subcommand("e2e", "Synthetic data to report in one streaming pass");
  common(e2e_cmd, false, false);
  e2e_cmd->add_option("--out", c.out, "Output directory")->required();
  e2e_cmd->add_option("--wells", c.wells, "Number of wells");
  e2e_cmd->add_option("--frames", c.frames, "Frames per well");
  pipeline::E2EOptions e2e;
  e2e_cmd->add_flag("--keep-raw", e2e.keep_raw, "Also write raw frames and ground truth");
  e2e_cmd->add_flag("--keep-intermediate", e2e.keep_intermediate, "Also write preprocessed frames and segmentation");
  e2e_cmd->add_flag("--ablate", e2e.ablate, "Run both ablations");
  e2e_cmd->add_flag("--forecast", e2e.forecast, "Run prefix and suffix forecasting");
  e2e_cmd->add_flag("--reduced-history", e2e.reduced_history, "Re-track on the last frames only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  fs::path summary_dir = command == "synth" ? c.data : command == "e2e" ? c.out : c.work;
  std::optional<pipeline::Context> ctx;
  try {
    ctx = make_context(c);
    Json outputs = Json::object();
    std::vector<std::string> warnings;
    if (command == "synth") {
      const auto m = pipeline::run_synth(*ctx, c.data);
      outputs = {{"manifest", (c.data / "manifest.json").string()}, {"wells", m.wells.size()}};
    } else if (command == "preprocess" || command == "segment" || command == "featurize") {
      const auto s = command == "preprocess" ? pipeline::run_preprocess(*ctx, c.data, c.work)
                     : command == "segment"  ? pipeline::run_segment(*ctx, c.data, c.work)
                                             : pipeline::run_featurize(*ctx, c.data, c.work);
      outputs = s.details;
      warnings = s.warnings;
    } else if (command == "train") {
      const auto cv = pipeline::run_train(*ctx, features_for(c), c.work / "train");
      print_report(cv.report);
      outputs = {{"report", (c.work / "train" / "report.json").string()},
                 {"mean_mape", cv.report.mean_mape},
                 {"mean_pearson", cv.report.mean_pearson}};
      warnings = cv.warnings;
    } else if (command == "eval") {
      const fs::path dir = checkpoints.empty() ? c.work / "train" : checkpoints;
      const auto rep = pipeline::run_eval(*ctx, features_for(c), dir);
      print_report(rep);
      write_json_file(c.work / "eval" / "report.json", eval::to_json(rep));
      outputs = {{"report", (c.work / "eval" / "report.json").string()},
                 {"mean_mape", rep.mean_mape},
                 {"mean_pearson", rep.mean_pearson}};
    } else if (command == "forecast") {
      const auto mode = eval::parse_forecast_mode(fc_mode.empty() ? ctx->config.forecast.mode : fc_mode);
      const auto curve = pipeline::run_forecast(*ctx, features_for(c), mode,
                                                fc_grid.empty() ? ctx->config.forecast.grid : fc_grid,
                                                c.work / "forecast");
      for (const auto& p : curve.points)
        std::printf("%3d frames [%d, %d)  MAPE %.4f  Pearson %.4f%s\n", p.frames, p.t0, p.t1, p.mape, p.pearson,
                    p.failed ? "  (failed)" : "");
      outputs = eval::to_json(curve);
    } else if (command == "attention") {
      const fs::path ck = checkpoint.empty() ? c.work / "train" / "fold_0.otck" : checkpoint;
      const auto a = pipeline::run_attention(ck, c.work / "attention", pipeline::stamp(ctx->config));
      std::printf("feature weight ratio max/min %.4f\n", a.ratio);
      outputs = {{"dir", (c.work / "attention").string()}, {"ratio", a.ratio}};
    } else if (command == "ablate") {
      const auto tables = pipeline::run_ablation(*ctx, features_for(c), which, c.work / "ablation");
      for (const auto& t : tables) std::cout << eval::table_markdown(t) << '\n';
      for (const auto& t : tables) outputs[t.name] = eval::to_json(t);
    } else if (command == "e2e") {
      const auto r = pipeline::run_e2e(*ctx, c.out, e2e);
      print_report(r.cv.report);
      for (const auto& t : r.ablations) std::cout << '\n' << eval::table_markdown(t);
      std::printf("data %.1f s, training %.1f s\n", r.seconds_data, r.seconds_train);
      outputs = {{"e2e", (c.out / "e2e.json").string()},
                 {"mean_mape", r.cv.report.mean_mape},
                 {"mean_pearson", r.cv.report.mean_pearson}};
      warnings = r.cv.warnings;
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    write_summary(summary_dir, command, &*ctx, "ok", outputs, warnings, elapsed());
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "oatp " << command << ": " << e.what() << '\n';
    try {
      if (!summary_dir.empty() && fs::exists(summary_dir))
        write_summary(summary_dir, command, ctx ? &*ctx : nullptr, "invalid", Json::object(), {e.what()}, elapsed());
    } catch (...) {
    }
    return 2;
  } catch (const Json::exception& e) {
    std::cerr << "oatp " << command << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "oatp " << command << ": " << e.what() << '\n';
    try {
      if (!summary_dir.empty() && fs::exists(summary_dir))
        write_summary(summary_dir, command, ctx ? &*ctx : nullptr, "error", Json::object(), {e.what()}, elapsed());
    } catch (...) {
    }
    return 3;
  }
}
