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

// Regression metrics and cross-validation bookkeeping.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oatp/json_util.hpp"

namespace oatp::eval {

/// Mean of |y - y_hat| / y. Every y must be positive.
double mape(std::span<const double> y, std::span<const double> y_hat);

/// Sample Pearson correlation,
///   sum (y - mean y)(p - mean p) / (sqrt(sum (y - mean y)^2) * sqrt(sum (p - mean p)^2)).
/// The two sums of squares sit under separate radicals (the usual
/// definition). Throws for constant input.
double pearson(std::span<const double> y, std::span<const double> y_hat);

struct FoldAssignment {
  std::vector<int> fold;  // per well, in input order
  int k = 0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> members(int f) const;
  std::vector<std::size_t> complement(int f) const;
  std::vector<std::size_t> sizes() const;
};

/// Seeded shuffle followed by round-robin assignment; sizes differ by <= 1.
FoldAssignment kfold_split(std::size_t n_wells, int k, std::uint64_t seed);

struct Bin {
  double lo = 0.0, hi = 0.0;  // [lo, hi), last bin closed
  std::size_t count = 0;
  std::optional<double> mape;  // empty for an empty bin ("NA")
};

/// Equal-width bins over [min y, max y].
std::vector<Bin> binned_mape(std::span<const double> y, std::span<const double> y_hat, int bins = 8);

struct FoldMetrics {
  int fold = 0;
  double mape = 0.0;
  double pearson = 0.0;
  std::size_t n = 0;
};

struct ExperimentReport {
  std::string name;
  std::string config_hash;
  std::string tool_version;
  std::vector<FoldMetrics> folds;
  double mean_mape = 0.0;
  double mean_pearson = 0.0;
  std::vector<Bin> bins;
  double runtime_seconds = 0.0;
  bool failed = false;

  /// Recomputes the means from the fold entries.
  void finalize();
  /// Mean fields equal the arithmetic mean of the fold fields.
  bool consistent() const;
};

Json to_json(const ExperimentReport& r);
ExperimentReport report_from_json(const Json& j);
std::string bins_csv(const std::vector<Bin>& bins);

}  // namespace oatp::eval
