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
#include <cstring>

#include "oatp/eval.hpp"
#include "oatp/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oatp;
using namespace oatp::model;

namespace {

Bag random_bag(int n, int k, int f, std::uint64_t seed) {
  Rng rng(seed);
  Bag b{n, k, f, {}};
  b.values.resize(static_cast<std::size_t>(n) * k * f);
  for (double& v : b.values) v = rng.normal();
  return b;
}

Bag constant_bag(const std::vector<double>& levels, int k, int f) {
  Bag b{static_cast<int>(levels.size()), k, f, {}};
  for (double v : levels) b.values.insert(b.values.end(), static_cast<std::size_t>(k) * f, v);
  return b;
}

AtpModel random_model(int k, int f, ModelConfig mc, std::uint64_t seed) {
  AtpModel m = AtpModel::create(k, f, mc, seed);
  Rng rng(seed ^ 0x9e37);
  for (double& w : m.w_t()) w = rng.uniform(-1.0, 1.0);
  for (double& w : m.w_k()) w = rng.uniform(0.2, 2.0);
  for (std::size_t p = m.layout.W[0]; p < m.params.size(); ++p)
    if (m.params[p] == 0.0) m.params[p] = rng.uniform(-0.2, 0.2);
  m.y_scale = 3.0;
  return m;
}

}  // namespace

TEST_CASE("aggregate: one cavity is its own min, max, mean and sum") {
  const Bag b = random_bag(1, 3, 4, 1);
  for (auto mode : {Aggregation::min, Aggregation::max, Aggregation::mean, Aggregation::sum})
    CHECK(aggregate(b, mode) == b.values);
}

TEST_CASE("aggregate: constant cavities 1 and 3") {
  const Bag b = constant_bag({1.0, 3.0}, 2, 3);
  for (double v : aggregate(b, Aggregation::mean)) CHECK(v == 2.0);
  for (double v : aggregate(b, Aggregation::sum)) CHECK(v == 4.0);
  for (double v : aggregate(b, Aggregation::min)) CHECK(v == 1.0);
  for (double v : aggregate(b, Aggregation::max)) CHECK(v == 3.0);
  CHECK_THROWS_AS(aggregate(Bag{0, 2, 3, {}}, Aggregation::mean), ValidationError);
}

TEST_CASE("aggregate: SE with a zeroed gate MLP is half the sum") {
  const Bag b = random_bag(5, 3, 4, 2);
  ModelConfig mc;
  mc.aggregation = Aggregation::se;
  AtpModel m = AtpModel::create(3, 4, mc, 7);
  const Layout& L = m.layout;
  std::fill(m.params.begin() + static_cast<std::ptrdiff_t>(L.se_w1), m.params.begin() + static_cast<std::ptrdiff_t>(L.se_b2) + 1, 0.0);
  const auto se = aggregate(m, b);
  const auto sum = aggregate(b, Aggregation::sum);
  for (std::size_t e = 0; e < sum.size(); ++e) CHECK(se[e] == doctest::Approx(0.5 * sum[e]).epsilon(1e-14));
}

TEST_CASE("forward: one-hot w_t on the last frame equals last_frame mode") {
  const Bag b = random_bag(4, 6, 5, 3);
  ModelConfig mc;
  mc.feature = FeatureMode::none;
  AtpModel wt = random_model(6, 5, mc, 11);
  for (double& w : wt.w_t()) w = 0.0;
  wt.w_t()[4] = 1.0;
  AtpModel last = wt;
  last.config.temporal = TemporalMode::last_frame;
  CHECK(forward(wt, b) == forward(last, b));
}

TEST_CASE("forward: w_k of ones equals no feature weighting") {
  const Bag b = random_bag(3, 6, 5, 4);
  ModelConfig mc;
  AtpModel a = random_model(6, 5, mc, 12);
  for (double& w : a.w_k()) w = 1.0;
  AtpModel none = a;
  none.config.feature = FeatureMode::none;
  CHECK(forward(a, b) == forward(none, b));
}

TEST_CASE("forward: mean aggregation ignores permutation and bag duplication") {
  Bag b = random_bag(4, 6, 5, 5);
  // Magnitudes far apart make naive summation order-dependent.
  for (std::size_t e = 0; e < 30; ++e) b.values[e] *= 1e8, b.values[60 + e] *= 1e-8;
  const AtpModel m = random_model(6, 5, {}, 13);
  Bag perm = b;
  const std::size_t kf = 30;
  const int order[] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    std::copy_n(b.values.begin() + order[i] * kf, kf, perm.values.begin() + i * kf);
  Bag dup = b;
  dup.n = 8;
  dup.values.insert(dup.values.end(), b.values.begin(), b.values.end());
  const double y = forward(m, b);
  CHECK(aggregate(perm, Aggregation::mean) == aggregate(b, Aggregation::mean));
  CHECK(aggregate(dup, Aggregation::mean) == aggregate(b, Aggregation::mean));
  CHECK(forward(m, dup) == y);
  CHECK(forward(m, perm) == y);

  AtpModel s = m;
  s.config.aggregation = Aggregation::sum;
  CHECK(forward(s, dup) != forward(s, b));
}

TEST_CASE("forward: scaling w_t leaves the prediction unchanged") {
  const Bag b = random_bag(3, 6, 5, 6);
  AtpModel m = random_model(6, 5, {}, 14);
  const double y = forward(m, b);
  for (double c : {0.001, 0.5, 7.0, 1e4}) {
    AtpModel s = m;
    for (double& w : s.w_t()) w *= c;
    CHECK(std::abs(forward(s, b) - y) <= 1e-6 * std::abs(y));
  }
  double mass = 0.0;
  for (double u : m.temporal_weights()) mass += std::abs(u);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward: shape mismatch is rejected") {
  const AtpModel m = AtpModel::create(6, 5, {}, 1);
  CHECK_THROWS_AS(forward(m, random_bag(2, 6, 4, 1)), ValidationError);
  CHECK_THROWS_AS(forward(m, random_bag(2, 7, 5, 1)), ValidationError);
  CHECK(m.layout.dims[1] == 32);
  CHECK(AtpModel::create(768, 5, {}, 1).layout.dims[1] == 256);
}

TEST_CASE("loss: examples") {
  CHECK(loss(100, 100, 200, 0.5) == 0.0);
  CHECK(loss(100, 50, 200, 0.5) == 0.375);
  const double y = 80.0, p = 92.0;
  CHECK(loss(y, p, 500, 1.0) == eval::mape(std::vector<double>{y}, std::vector<double>{p}));
  CHECK_THROWS_AS(loss(0, 1, 2, 0.5), ValidationError);
  CHECK_THROWS_AS(loss(-1, 1, 2, 0.5), ValidationError);
  CHECK(loss_grad(100, 100, 200, 0.5) == 0.0);
}

TEST_CASE("prelu: examples") {
  CHECK(prelu(2.0, 0.25) == 2.0);
  CHECK(prelu(2.0, -3.0) == 2.0);
  CHECK(prelu(-3.0, 0.25) == -0.75);
  for (double x : {-5.0, -0.1, 0.0, 4.0}) CHECK(prelu(x, 1.0) == x);
}

TEST_CASE("gradients: central differences on 100 random small models") {
  int redrawn = 0;
  const oracle::GradCheck g = oracle::gradient_suite(100, 2026, &redrawn);
  INFO("worst parameter " << g.worst_param << ", redrawn " << redrawn);
  CHECK(g.max_rel_error <= 1e-4);
}

TEST_CASE("gradients: zero at the loss kink and for a zero cube") {
  oracle::GradInstance g = oracle::random_grad_instance(5, 0);
  for (std::uint64_t s = 6; forward(g.model, g.bag) <= 0.0; ++s) g = oracle::random_grad_instance(s, 0);
  g.y = forward(g.model, g.bag);
  std::vector<double> grad;
  accumulate_gradient(g.model, &g.bag, nullptr, g.y, 3.0, 0.5, grad);
  for (double x : grad) CHECK(x == 0.0);

  for (int trial : {0, 1, 2}) {
    oracle::GradInstance z = oracle::random_grad_instance(9, trial);
    std::fill(z.bag.values.begin(), z.bag.values.end(), 0.0);
    z.y = 1e6;  // far from any prediction
    std::vector<double> gz;
    accumulate_gradient(z.model, &z.bag, nullptr, z.y, z.y, 0.5, gz);
    for (int t = 0; t < z.model.f; ++t) CHECK(gz[z.model.layout.w_t + t] == 0.0);
    for (int j = 0; j < z.model.k; ++j) CHECK(gz[z.model.layout.w_k + j] == 0.0);
  }
}

TEST_CASE("adamw: zero gradient without decay leaves parameters alone") {
  std::vector<double> p{1.0, -2.0, 3.5}, g(3, 0.0);
  const auto keep = p;
  AdamState st;
  for (int i = 0; i < 10; ++i) adamw_step(p, g, st, 1e-3, 0.0);
  CHECK(p == keep);
}

TEST_CASE("adamw: constant gradient approaches lr * sign(g)") {
  // Closed form: after t steps m_hat = g and v_hat = g^2 exactly, so each
  // step is lr * g / (|g| + eps).
  std::vector<double> p{0.0, 0.0}, g{0.3, -2.0};
  AdamState st;
  std::vector<double> before;
  for (int i = 0; i < 1000; ++i) {
    before = p;
    adamw_step(p, g, st, 1e-3, 0.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double step = before[i] - p[i];
    const double expect = 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(std::abs(step - expect) <= 1e-3 * 1e-3);
    CHECK(std::abs(std::abs(step) - 1e-3) <= 1e-3 * 1e-3);
  }
}

TEST_CASE("adamw: decay alone shrinks by (1 - lr wd) per step") {
  std::vector<double> p{2.0, -1.0}, g(2, 0.0);
  AdamState st;
  for (int i = 0; i < 5; ++i) adamw_step(p, g, st, 1e-2, 0.1);
  CHECK(p[0] == doctest::Approx(2.0 * std::pow(1.0 - 1e-3, 5)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-std::pow(1.0 - 1e-3, 5)).epsilon(1e-14));
}

namespace {

// Wells whose label is linear in the summed final-frame first feature.
struct ToyData {
  std::vector<Bag> bags;
  std::vector<double> y;
};

ToyData toy_data(int wells, std::uint64_t seed) {
  Rng rng(seed);
  ToyData d;
  for (int w = 0; w < wells; ++w) {
    Bag b = random_bag(3, 4, 6, rng.next());
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int t = 0; t < 6; ++t) b.at(i, 0, t) = 0.2 * t + rng.uniform(0.0, 1.0);
      s += b.at(i, 0, 5);
    }
    d.bags.push_back(b);
    d.y.push_back(100.0 + 40.0 * s);
  }
  return d;
}

std::vector<Sample> samples(const ToyData& d, std::size_t lo, std::size_t hi) {
  std::vector<Sample> s;
  for (std::size_t i = lo; i < hi; ++i) s.push_back({&d.bags[i], d.y[i]});
  return s;
}

}  // namespace

TEST_CASE("train: learns a toy problem, restores the best epoch, deterministic") {
  const ToyData d = toy_data(24, 77);
  TrainConfig tc;
  tc.max_epochs = 300;
  tc.patience = 60;
  ModelConfig mc;
  mc.hidden = {8, 8, 4};
  const auto tr = samples(d, 0, 18), va = samples(d, 18, 24);
  const FoldResult a = train_fold(tr, va, 4, 6, mc, tc, 5);
  const FoldResult b = train_fold(tr, va, 4, 6, mc, tc, 5);
  REQUIRE(a.history.size() == b.history.size());
  CHECK(std::memcmp(a.history.data(), b.history.data(), a.history.size() * sizeof(EpochRecord)) == 0);
  CHECK(a.model.params == b.model.params);

  double best = 1e300;
  for (const auto& r : a.history) best = std::min(best, r.val_loss);
  CHECK(a.history[a.best_epoch].val_loss == best);
  std::vector<double> y, p = predict(a.model, va);
  for (const auto& s : va) y.push_back(s.y);
  double vl = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) vl += loss(y[i], p[i], a.model.y_scale, tc.alpha);
  CHECK(vl / static_cast<double>(y.size()) == doctest::Approx(best).epsilon(1e-12));
  CHECK(a.history.front().val_mape > a.history[a.best_epoch].val_mape);
  CHECK(a.history[a.best_epoch].val_mape < 0.1);
}

TEST_CASE("train: patience 0 stops at the first epoch without improvement") {
  const ToyData d = toy_data(12, 3);
  TrainConfig tc;
  tc.max_epochs = 500;
  tc.patience = 0;
  tc.lr = 0.05;  // large steps make an early non-improvement likely
  const FoldResult r = train_fold(samples(d, 0, 9), samples(d, 9, 12), 4, 6, {}, tc, 1);
  std::size_t first_worse = 0;
  double best = 1e300;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    if (r.history[e].val_loss < best) {
      best = r.history[e].val_loss;
    } else {
      first_worse = e;
      break;
    }
  }
  REQUIRE(first_worse > 0);
  CHECK(r.history.size() == first_worse + 1);
  CHECK(r.best_epoch == static_cast<int>(first_worse) - 1);
}

TEST_CASE("train: small folds shrink the batch with a warning") {
  const ToyData d = toy_data(7, 4);
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.patience = 2;
  const FoldResult r = train_fold(samples(d, 0, 5), samples(d, 5, 7), 4, 6, {}, tc, 1);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("batch") != std::string::npos);
  tc.patience = 5;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
}

TEST_CASE("checkpoint: save, load, forward is bit-identical") {
  test::TempDir dir("model");
  ModelConfig mc;
  mc.aggregation = Aggregation::se;
  const AtpModel m = random_model(6, 5, mc, 21);
  save_checkpoint(dir.path() / "m.otck", m, {{"fold", 2}});
  Json extra;
  const AtpModel r = load_checkpoint(dir.path() / "m.otck", &extra);
  CHECK(extra["fold"] == 2);
  CHECK(r.params == m.params);
  CHECK(r.y_scale == m.y_scale);
  CHECK(r.config.aggregation == Aggregation::se);
  const Bag b = random_bag(3, 6, 5, 8);
  CHECK(forward(r, b) == forward(m, b));

  const std::string bytes = test::read_bytes(dir.path() / "m.otck");
  std::ofstream(dir.path() / "cut.otck", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "cut.otck"), ValidationError);
}

TEST_CASE("config: JSON round trip and unknown keys") {
  ModelConfig mc;
  mc.aggregation = Aggregation::max;
  mc.temporal = TemporalMode::last_frame;
  mc.hidden = {5, 4, 3};
  const ModelConfig r = model_config_from_json(to_json(mc));
  CHECK(r.aggregation == Aggregation::max);
  CHECK(r.temporal == TemporalMode::last_frame);
  CHECK(r.hidden == mc.hidden);
  CHECK_THROWS_AS(model_config_from_json({{"aggregaton", "mean"}}), ValidationError);
  CHECK_THROWS_AS(model_config_from_json({{"aggregation", "median"}}), ValidationError);
  ModelConfig two;
  two.hidden = {8, 4};
  CHECK_THROWS_AS(AtpModel::create(6, 4, two, 1), ValidationError);
  TrainConfig tc;
  tc.seed = 99;
  CHECK(train_config_from_json(to_json(tc)).seed == 99);
  CHECK_THROWS_AS(train_config_from_json({{"alpha", 1.5}}), ValidationError);
}
