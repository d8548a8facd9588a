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
#include <vector>

#include "oatp/errors.hpp"
#include "oatp/eval.hpp"

using namespace oatp;
using namespace oatp::eval;

TEST_CASE("mape") {
  const std::vector<double> y{100, 200}, p{110, 180};
  CHECK(mape(y, p) == doctest::Approx(0.1));
  CHECK(mape(y, y) == 0.0);
  const std::vector<double> zero{0.0, 1.0};
  CHECK_THROWS_AS(mape(zero, zero), ValidationError);
  CHECK_THROWS_AS(mape(y, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("pearson") {
  const std::vector<double> y{1, 2, 3, 4};
  CHECK(pearson(y, std::vector<double>{2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(pearson(y, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_THROWS_WITH_AS(pearson(y, std::vector<double>{5, 5, 5, 5}), doctest::Contains("undefined"), ValidationError);

  // Two-pass reference with the textbook formula.
  const std::vector<double> a{3.1, 0.4, 7.7, 2.2, 5.0}, b{2.0, 1.1, 6.3, 2.9, 4.4};
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / a.size(), mb += b[i] / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(pearson(a, b) == doctest::Approx(sab / std::sqrt(saa * sbb)).epsilon(1e-12));
}

TEST_CASE("kfold split") {
  const auto a = kfold_split(116, 4, 7);
  const auto sizes = a.sizes();
  CHECK(sizes == std::vector<std::size_t>{29, 29, 29, 29});
  CHECK(a.members(0).size() + a.complement(0).size() == 116);
  for (std::size_t i : a.members(2)) CHECK(a.fold[i] == 2);
  CHECK(kfold_split(116, 4, 7).fold == a.fold);
  CHECK_FALSE(kfold_split(116, 4, 8).fold == a.fold);
  const auto b = kfold_split(10, 4, 1).sizes();
  CHECK(*std::max_element(b.begin(), b.end()) - *std::min_element(b.begin(), b.end()) <= 1);
  CHECK_THROWS_AS(kfold_split(3, 4, 1), ValidationError);
  CHECK_THROWS_AS(kfold_split(3, 0, 1), ValidationError);
}

TEST_CASE("binned mape uses equal-width bins") {
  // Labels spread over [1e5, 1.5e6]; published bin edges (1e5 units) rounded down.
  std::vector<double> y, p;
  for (int i = 0; i <= 140; ++i) {
    y.push_back(1.1e5 + i * (1.49e6 - 1.1e5) / 140.0);
    p.push_back(y.back() * 1.1);
  }
  const auto bins = binned_mape(y, p, 8);
  REQUIRE(bins.size() == 8);
  const double edges[9] = {1.1, 2.8, 4.5, 6.2, 8.0, 9.7, 11.4, 13.1, 14.9};
  for (int b = 0; b < 8; ++b) {
    CHECK(std::floor(bins[b].lo / 1e5 * 10 + 1e-9) / 10 == doctest::Approx(edges[b]));
    CHECK(bins[b].mape.has_value());
    CHECK(*bins[b].mape == doctest::Approx(0.1));
  }
  CHECK(std::floor(bins[7].hi / 1e5 * 10 + 1e-9) / 10 == doctest::Approx(edges[8]));
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == y.size());
}

TEST_CASE("binned mape empty bins and edges") {
  const std::vector<double> y{0.0 + 1, 1, 10}, p{1, 1, 10};
  const auto bins = binned_mape(y, p, 3);
  CHECK(bins[0].count == 2);
  CHECK_FALSE(bins[1].mape.has_value());
  CHECK(bins[2].count == 1);  // maximum lands in the closed last bin
  CHECK(bins_csv(bins).find("NA") != std::string::npos);
}

TEST_CASE("report means and json") {
  ExperimentReport r;
  r.name = "baseline";
  r.folds = {{0, 0.1, 0.9, 10}, {1, 0.3, 0.7, 10}};
  r.finalize();
  CHECK(r.mean_mape == doctest::Approx(0.2));
  CHECK(r.consistent());
  r.bins = binned_mape(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}, 2);
  const auto back = report_from_json(to_json(r));
  CHECK(back.mean_pearson == r.mean_pearson);
  CHECK(back.bins.size() == 2);
  CHECK(back.consistent());
  r.mean_mape = 0.5;
  CHECK_FALSE(r.consistent());
}
