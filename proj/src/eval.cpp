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

#include "oatp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "oatp/errors.hpp"
#include "oatp/random.hpp"

namespace oatp::eval {

double mape(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size() || y.empty()) throw ValidationError("mape: lengths must match and be >= 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) throw ValidationError("mape: labels must be positive");
    acc += std::abs(y[i] - y_hat[i]) / y[i];
  }
  return acc / static_cast<double>(y.size());
}

double pearson(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size() || y.size() < 2) throw ValidationError("pearson: need >= 2 paired values");
  const double n = static_cast<double>(y.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  const double mp = std::accumulate(y_hat.begin(), y_hat.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] - my, b = y_hat[i] - mp;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: undefined correlation (constant input)");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

std::vector<std::size_t> FoldAssignment::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::sizes() const {
  std::vector<std::size_t> s(k, 0);
  for (int f : fold) ++s[f];
  return s;
}

FoldAssignment kfold_split(std::size_t n_wells, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("kfold_split: k must be >= 1");
  if (static_cast<std::size_t>(k) > n_wells)
    throw ValidationError("kfold_split: k=" + std::to_string(k) + " exceeds the number of wells (" +
                          std::to_string(n_wells) + ")");
  std::vector<std::size_t> order(n_wells);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(order);
  FoldAssignment a;
  a.k = k;
  a.seed = seed;
  a.fold.assign(n_wells, 0);
  for (std::size_t r = 0; r < order.size(); ++r) a.fold[order[r]] = static_cast<int>(r % k);
  return a;
}

std::vector<Bin> binned_mape(std::span<const double> y, std::span<const double> y_hat, int bins) {
  if (y.empty() || y.size() != y_hat.size()) throw ValidationError("binned_mape: need paired, non-empty input");
  if (bins < 1) throw ValidationError("binned_mape: bins must be >= 1");
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / bins;
  std::vector<Bin> out(bins);
  std::vector<double> err(bins, 0.0);
  for (int b = 0; b < bins; ++b) {
    out[b].lo = lo + b * width;
    out[b].hi = b + 1 == bins ? hi : lo + (b + 1) * width;
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    int b = width > 0.0 ? static_cast<int>((y[i] - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    // Guard the floating edge: a value equal to a bin's lower edge belongs there.
    while (b > 0 && y[i] < out[b].lo) --b;
    while (b + 1 < bins && y[i] >= out[b + 1].lo) ++b;
    ++out[b].count;
    err[b] += std::abs(y[i] - y_hat[i]) / y[i];
  }
  for (int b = 0; b < bins; ++b)
    if (out[b].count > 0) out[b].mape = err[b] / static_cast<double>(out[b].count);
  return out;
}

void ExperimentReport::finalize() {
  mean_mape = 0.0;
  mean_pearson = 0.0;
  if (folds.empty()) return;
  for (const auto& f : folds) {
    mean_mape += f.mape;
    mean_pearson += f.pearson;
  }
  mean_mape /= static_cast<double>(folds.size());
  mean_pearson /= static_cast<double>(folds.size());
}

bool ExperimentReport::consistent() const {
  ExperimentReport copy = *this;
  copy.finalize();
  return copy.mean_mape == mean_mape && copy.mean_pearson == mean_pearson;
}

Json to_json(const ExperimentReport& r) {
  Json folds = Json::array();
  for (const auto& f : r.folds) folds.push_back({{"fold", f.fold}, {"mape", f.mape}, {"pearson", f.pearson}, {"n", f.n}});
  Json bins = Json::array();
  for (const auto& b : r.bins) {
    Json jb{{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}};
    jb["mape"] = b.mape ? Json(*b.mape) : Json("NA");
    bins.push_back(jb);
  }
  return {{"name", r.name},
          {"config_hash", r.config_hash},
          {"tool_version", r.tool_version},
          {"folds", folds},
          {"mean_mape", r.mean_mape},
          {"mean_pearson", r.mean_pearson},
          {"bins", bins},
          {"runtime_seconds", r.runtime_seconds},
          {"failed", r.failed}};
}

ExperimentReport report_from_json(const Json& j) {
  ExperimentReport r;
  r.name = j.value("name", "");
  r.config_hash = j.value("config_hash", "");
  r.tool_version = j.value("tool_version", "");
  for (const auto& f : j.at("folds"))
    r.folds.push_back({f.at("fold").get<int>(), f.at("mape").get<double>(), f.at("pearson").get<double>(),
                       f.at("n").get<std::size_t>()});
  r.mean_mape = j.at("mean_mape").get<double>();
  r.mean_pearson = j.at("mean_pearson").get<double>();
  for (const auto& b : j.value("bins", Json::array())) {
    Bin bin{b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("count").get<std::size_t>(), std::nullopt};
    if (b.at("mape").is_number()) bin.mape = b.at("mape").get<double>();
    r.bins.push_back(bin);
  }
  r.runtime_seconds = j.value("runtime_seconds", 0.0);
  r.failed = j.value("failed", false);
  return r;
}

std::string bins_csv(const std::vector<Bin>& bins) {
  std::ostringstream os;
  os.precision(10);
  os << "lo,hi,count,mape\n";
  for (const auto& b : bins) {
    os << b.lo << ',' << b.hi << ',' << b.count << ',';
    if (b.mape) os << *b.mape;
    else os << "NA";
    os << '\n';
  }
  return os.str();
}

}  // namespace oatp::eval
