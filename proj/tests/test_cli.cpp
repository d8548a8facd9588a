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

#include <cstdlib>
#include <sys/wait.h>

#include "oatp/json_util.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using oatp::Json;
using oatp::test::read_bytes;
using oatp::test::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

Run oatp_cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(OATP_CLI) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_bytes(err)};
}

const std::string kSmall =
    " --quiet --workers 2 --seed 7 --set synth.wells=8 --set synth.frames=6 --set synth.cavities_min=4"
    " --set synth.cavities_max=4 --set train.max_epochs=30 --set train.patience=5";

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  TempDir tmp("cli_usage");
  CHECK(oatp_cli("--help", tmp.path()).code == 0);
  CHECK(oatp_cli("", tmp.path()).code == 2);
  CHECK(oatp_cli("nonsense", tmp.path()).code == 2);
  const std::string data = " --data " + (tmp.path() / "d").string();
  Run r = oatp_cli("synth" + data + " --set train.bogus=1", tmp.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("bogus") != std::string::npos);
  r = oatp_cli("synth" + data + " --set train.seed=3", tmp.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("top level") != std::string::npos);
  CHECK(oatp_cli("synth" + data + " --preset huge", tmp.path()).code == 2);
  CHECK(oatp_cli("synth" + data + " --config " + (tmp.path() / "none.json").string(), tmp.path()).code == 2);
  CHECK(oatp_cli("preprocess --data " + (tmp.path() / "missing").string(), tmp.path()).code == 2);
  CHECK(!fs::exists(tmp.path() / "d"));
}

TEST_CASE("cli: unwritable output exits 3") {
  TempDir tmp("cli_io");
  std::ofstream(tmp.path() / "file") << "x";
  CHECK(oatp_cli("synth --quiet --wells 4 --frames 2 --data " + (tmp.path() / "file" / "d").string(), tmp.path())
            .code == 3);
}

TEST_CASE("cli: staged run equals e2e, eval reproduces train, missing features named") {
  TempDir tmp("cli_stages");
  const std::string data = (tmp.path() / "data").string(), work = (tmp.path() / "work").string();
  const std::string dw = kSmall + " --data " + data + " --work " + work;
  REQUIRE(oatp_cli("synth" + kSmall + " --data " + data, tmp.path()).code == 0);
  REQUIRE(oatp_cli("preprocess" + dw, tmp.path()).code == 0);
  REQUIRE(oatp_cli("segment" + dw, tmp.path()).code == 0);

  Run r = oatp_cli("train" + dw, tmp.path());
  CHECK(r.code == 2);
  CHECK(r.err.find((fs::path(work) / "features" / "well_000.otfc").string()) != std::string::npos);

  REQUIRE(oatp_cli("featurize" + dw, tmp.path()).code == 0);
  REQUIRE(oatp_cli("train" + dw, tmp.path()).code == 0);
  REQUIRE(oatp_cli("eval" + dw, tmp.path()).code == 0);

  const Json train = oatp::read_json_file(fs::path(work) / "train" / "report.json");
  const Json ev = oatp::read_json_file(fs::path(work) / "eval" / "report.json");
  REQUIRE(train["folds"].size() == 4);
  CHECK(train["folds"] == ev["folds"]);
  CHECK(train["mean_mape"] == ev["mean_mape"]);
  CHECK(train["bins"] == ev["bins"]);

  const Json summary = oatp::read_json_file(fs::path(work) / "summary.json");
  CHECK(summary["command"] == "eval");
  CHECK(summary["status"] == "ok");
  const std::string hash = summary["config_hash"];
  CHECK(hash == train["config_hash"]);
  const std::string pred = read_bytes(fs::path(work) / "train" / "predictions.csv");
  CHECK(pred.rfind("# oatp ", 0) == 0);
  CHECK(pred.find(hash) != std::string::npos);
  CHECK(oatp::read_json_file(fs::path(work) / "features" / "well_000.otfc.json")["stamp"]["config_hash"] == hash);

  const fs::path out = tmp.path() / "e2e";
  REQUIRE(oatp_cli("e2e" + kSmall + " --out " + out.string(), tmp.path()).code == 0);
  for (int w = 0; w < 8; ++w) {
    const std::string name = "well_00" + std::to_string(w) + ".otfc";
    CHECK(read_bytes(out / "features" / name) == read_bytes(fs::path(work) / "features" / name));
  }
  const Json e2e = oatp::read_json_file(out / "train" / "report.json");
  CHECK(e2e["folds"] == train["folds"]);
  CHECK(read_bytes(out / "train" / "predictions.csv") == pred);
  CHECK(read_bytes(out / "train" / "fold_0.otck") == read_bytes(fs::path(work) / "train" / "fold_0.otck"));

  REQUIRE(oatp_cli("attention" + dw, tmp.path()).code == 0);
  CHECK(fs::exists(fs::path(work) / "attention" / "attention_features.csv"));
  REQUIRE(oatp_cli("forecast" + dw + " --mode suffix --grid 3,6", tmp.path()).code == 0);
  const Json fc = oatp::read_json_file(fs::path(work) / "forecast" / "forecast_suffix.json");
  REQUIRE(fc["points"].size() == 2);
  CHECK(fc["points"][1]["mape"] == train["mean_mape"]);
}

TEST_CASE("cli: e2e is deterministic and independent of worker count") {
  TempDir tmp("cli_det");
  const fs::path a = tmp.path() / "a", b = tmp.path() / "b";
  REQUIRE(oatp_cli("e2e" + kSmall + " --out " + a.string(), tmp.path()).code == 0);
  REQUIRE(oatp_cli("e2e" + kSmall + " --workers 1 --out " + b.string(), tmp.path()).code == 0);
  CHECK(read_bytes(a / "train" / "predictions.csv") == read_bytes(b / "train" / "predictions.csv"));
  CHECK(read_bytes(a / "train" / "fold_3.otck") == read_bytes(b / "train" / "fold_3.otck"));
  CHECK(read_bytes(a / "features" / "well_005.otfc") == read_bytes(b / "features" / "well_005.otfc"));

  const fs::path c = tmp.path() / "c";
  REQUIRE(oatp_cli("e2e" + kSmall + " --seed 8 --out " + c.string(), tmp.path()).code == 0);
  CHECK(read_bytes(a / "train" / "predictions.csv") != read_bytes(c / "train" / "predictions.csv"));
}
