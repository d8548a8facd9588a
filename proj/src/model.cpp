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

#include "oatp/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "oatp/eval.hpp"
#include "oatp/kernels/kernels.hpp"
#include "oatp/random.hpp"

namespace oatp::model {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Correctly rounded sum (Shewchuk partials, as in Python's math.fsum). The
// result depends only on the multiset of inputs.
double exact_sum(std::span<const double> xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  double hi = 0.0;
  std::size_t n = partials.size();
  if (n == 0) return hi;
  hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi, y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0, x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

}  // namespace

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::min: return "min";
    case Aggregation::se: return "se";
    case Aggregation::max: return "max";
    case Aggregation::sum: return "sum";
    case Aggregation::mean: return "mean";
  }
  return "?";
}

std::string to_string(TemporalMode m) { return m == TemporalMode::w_t ? "w_t" : "last_frame"; }
std::string to_string(FeatureMode m) { return m == FeatureMode::w_k ? "w_k" : "none"; }

Aggregation parse_aggregation(const std::string& s) {
  for (auto a : {Aggregation::min, Aggregation::se, Aggregation::max, Aggregation::sum, Aggregation::mean})
    if (s == to_string(a)) return a;
  throw ValidationError("aggregation: unknown mode '" + s + "' (min, se, max, sum, mean)");
}

TemporalMode parse_temporal(const std::string& s) {
  if (s == "w_t") return TemporalMode::w_t;
  if (s == "last_frame") return TemporalMode::last_frame;
  throw ValidationError("temporal: unknown mode '" + s + "' (last_frame, w_t)");
}

FeatureMode parse_feature(const std::string& s) {
  if (s == "w_k") return FeatureMode::w_k;
  if (s == "none") return FeatureMode::none;
  throw ValidationError("feature: unknown mode '" + s + "' (none, w_k)");
}

Bag bag_from_cube(const feat::FeatureCube& cube, int t0, int t1) {
  if (t1 < 0) t1 = cube.f;
  if (t0 < 0 || t1 > cube.f || t0 >= t1)
    throw ValidationError("frame range [" + std::to_string(t0) + ", " + std::to_string(t1) + ") outside 0.." +
                          std::to_string(cube.f));
  Bag b;
  b.n = cube.n, b.k = cube.k, b.f = t1 - t0;
  b.values.resize(static_cast<std::size_t>(b.n) * b.k * b.f);
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < b.k; ++j)
      for (int t = 0; t < b.f; ++t) b.at(i, j, t) = cube.at(i, j, t0 + t);
  return b;
}

std::vector<double> aggregate(const Bag& bag, Aggregation mode) {
  if (bag.n < 1) throw ValidationError("aggregate: empty bag");
  if (mode == Aggregation::se) throw std::logic_error("aggregate: SE needs model parameters");
  const std::size_t kf = static_cast<std::size_t>(bag.k) * bag.f;
  std::vector<double> a(kf), column(bag.n);
  for (std::size_t e = 0; e < kf; ++e) {
    for (int i = 0; i < bag.n; ++i) column[i] = bag.values[i * kf + e];
    switch (mode) {
      case Aggregation::min: a[e] = *std::min_element(column.begin(), column.end()); break;
      case Aggregation::max: a[e] = *std::max_element(column.begin(), column.end()); break;
      case Aggregation::sum: a[e] = exact_sum(column); break;
      default: a[e] = exact_sum(column) / bag.n;
    }
  }
  return a;
}

Json to_json(const ModelConfig& c) {
  return {{"aggregation", to_string(c.aggregation)},
          {"temporal", to_string(c.temporal)},
          {"feature", to_string(c.feature)},
          {"hidden", c.hidden},
          {"se_hidden", c.se_hidden}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  std::string agg = to_string(c.aggregation), tm = to_string(c.temporal), fm = to_string(c.feature);
  StrictObject o(j, "model");
  o.get("aggregation", agg).get("temporal", tm).get("feature", fm).get("hidden", c.hidden).get("se_hidden", c.se_hidden);
  o.finish();
  c.aggregation = parse_aggregation(agg);
  c.temporal = parse_temporal(tm);
  c.feature = parse_feature(fm);
  if (!c.hidden.empty() && c.hidden.size() != 3) throw ValidationError("model.hidden: need three widths");
  for (int h : c.hidden)
    if (h < 1) throw ValidationError("model.hidden: widths must be >= 1");
  if (c.se_hidden < 1) throw ValidationError("model.se_hidden: must be >= 1");
  return c;
}

std::vector<int> default_hidden(int k) { return k >= 256 ? std::vector<int>{256, 64, 16} : std::vector<int>{32, 16, 8}; }

Layout make_layout(int k, int f, const ModelConfig& config) {
  if (k < 1 || f < 1) throw ValidationError("model: k and f must be >= 1");
  const std::vector<int> hidden = config.hidden.empty() ? default_hidden(k) : config.hidden;
  if (hidden.size() != 3) throw ValidationError("model.hidden: need three widths");
  Layout L;
  std::size_t p = 0;
  L.w_t = p, p += f;
  L.w_k = p, p += k;
  L.se_hidden = config.se_hidden;
  L.se_w1 = p, p += config.se_hidden;
  L.se_b1 = p, p += config.se_hidden;
  L.se_w2 = p, p += config.se_hidden;
  L.se_b2 = p, p += 1;
  L.dims[0] = k;
  for (int l = 0; l < 3; ++l) L.dims[l + 1] = hidden[l];
  L.dims[4] = 1;
  for (int l = 0; l < 4; ++l) {
    L.W[l] = p, p += static_cast<std::size_t>(L.dims[l]) * L.dims[l + 1];
    L.b[l] = p, p += L.dims[l + 1];
    if (l < 3) L.prelu[l] = p, p += 1;
  }
  L.total = p;
  return L;
}

AtpModel AtpModel::create(int k, int f, const ModelConfig& config, std::uint64_t seed) {
  AtpModel m;
  m.k = k, m.f = f;
  m.config = config;
  m.layout = make_layout(k, f, config);
  m.params.assign(m.layout.total, 0.0);
  const Layout& L = m.layout;
  std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(L.w_t), f, 1.0);
  std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(L.w_k), k, 1.0);
  Rng rng(seed);
  for (int r = 0; r < L.se_hidden; ++r) m.params[L.se_w1 + r] = rng.uniform(-1.0, 1.0);
  const double se_bound = 1.0 / std::sqrt(static_cast<double>(L.se_hidden));
  for (int r = 0; r < L.se_hidden; ++r) m.params[L.se_w2 + r] = rng.uniform(-se_bound, se_bound);
  for (int l = 0; l < 4; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.dims[l]));
    const std::size_t count = static_cast<std::size_t>(L.dims[l]) * L.dims[l + 1];
    for (std::size_t e = 0; e < count; ++e) m.params[L.W[l] + e] = rng.uniform(-bound, bound);
    if (l < 3) m.params[L.prelu[l]] = 0.25;
  }
  return m;
}

std::vector<double> AtpModel::temporal_weights() const {
  const auto w = w_t();
  double s = 0.0;
  for (double x : w) s += std::abs(x);
  std::vector<double> u(w.begin(), w.end());
  if (s > 0.0)
    for (double& x : u) x /= s;
  return u;
}

std::string AtpModel::param_name(std::size_t p) const {
  const Layout& L = layout;
  auto idx = [&](std::size_t base) { return "[" + std::to_string(p - base) + "]"; };
  if (p < L.w_k) return "w_t" + idx(L.w_t);
  if (p < L.se_w1) return "w_k" + idx(L.w_k);
  if (p < L.se_b1) return "se_w1" + idx(L.se_w1);
  if (p < L.se_w2) return "se_b1" + idx(L.se_b1);
  if (p < L.se_b2) return "se_w2" + idx(L.se_w2);
  if (p < L.W[0]) return "se_b2";
  for (int l = 3; l >= 0; --l) {
    if (l < 3 && p >= L.prelu[l]) return "prelu" + std::to_string(l);
    if (p >= L.b[l]) return "b" + std::to_string(l) + idx(L.b[l]);
    if (p >= L.W[l]) return "W" + std::to_string(l) + idx(L.W[l]);
  }
  return "?";
}

double prelu(double x, double a) { return x >= 0.0 ? x : a * x; }

// ---- forward ----------------------------------------------------------------

namespace {

void check_bag(const AtpModel& m, const Bag& bag) {
  if (bag.n < 1) throw ValidationError("forward: empty bag");
  if (bag.k != m.k || bag.f != m.f)
    throw ValidationError("forward: bag is " + std::to_string(bag.k) + " x " + std::to_string(bag.f) +
                          " (k x f), model expects " + std::to_string(m.k) + " x " + std::to_string(m.f));
}

std::vector<double> se_aggregate(const AtpModel& m, const Bag& bag, Trace* tr) {
  const Layout& L = m.layout;
  const int r = L.se_hidden;
  const std::size_t kf = static_cast<std::size_t>(bag.k) * bag.f;
  const double* p = m.params.data();
  std::vector<double> a(kf, 0.0), s(bag.n), pre(static_cast<std::size_t>(bag.n) * r), hid(pre.size()), gate(bag.n);
  for (int i = 0; i < bag.n; ++i) {
    const double* c = bag.values.data() + i * kf;
    s[i] = std::accumulate(c, c + kf, 0.0) / static_cast<double>(kf);
    double e = p[L.se_b2];
    for (int q = 0; q < r; ++q) {
      pre[i * r + q] = p[L.se_w1 + q] * s[i] + p[L.se_b1 + q];
      hid[i * r + q] = std::max(0.0, pre[i * r + q]);
      e += p[L.se_w2 + q] * hid[i * r + q];
    }
    gate[i] = 1.0 / (1.0 + std::exp(-e));
    kernels::axpy(gate[i], {c, kf}, a);
  }
  if (tr) {
    tr->se_s = std::move(s);
    tr->se_pre = std::move(pre);
    tr->se_hid = std::move(hid);
    tr->se_gate = std::move(gate);
  }
  return a;
}

double run_from_agg(const AtpModel& m, std::vector<double> agg, Trace& tr) {
  const Layout& L = m.layout;
  const double* p = m.params.data();
  std::vector<double> v(m.k);
  if (m.config.temporal == TemporalMode::w_t) {
    const std::vector<double> u = m.temporal_weights();
    for (int j = 0; j < m.k; ++j) v[j] = kernels::dot({agg.data() + static_cast<std::size_t>(j) * m.f, u.size()}, u);
  } else {
    for (int j = 0; j < m.k; ++j) v[j] = agg[static_cast<std::size_t>(j) * m.f + m.f - 1];
  }
  tr.v_time = v;
  if (m.config.feature == FeatureMode::w_k)
    for (int j = 0; j < m.k; ++j) v[j] *= p[L.w_k + j];
  tr.agg = std::move(agg);
  tr.z.assign(4, {});
  tr.h.assign(4, {});
  const std::vector<double>* in = &v;
  for (int l = 0; l < 4; ++l) {
    const int ni = L.dims[l], no = L.dims[l + 1];
    std::vector<double>& z = tr.z[l];
    z.resize(no);
    for (int o = 0; o < no; ++o)
      z[o] = p[L.b[l] + o] + kernels::dot({p + L.W[l] + static_cast<std::size_t>(o) * ni, static_cast<std::size_t>(ni)},
                                          *in);
    std::vector<double>& h = tr.h[l];
    h = z;
    if (l < 3)
      for (double& x : h) x = prelu(x, p[L.prelu[l]]);
    in = &h;
  }
  tr.v = std::move(v);
  tr.out = tr.h[3][0];
  tr.y_hat = m.y_scale * tr.out;
  return tr.y_hat;
}

}  // namespace

std::vector<double> aggregate(const AtpModel& m, const Bag& bag) {
  check_bag(m, bag);
  if (m.config.aggregation == Aggregation::se) return se_aggregate(m, bag, nullptr);
  return aggregate(bag, m.config.aggregation);
}

double forward(const AtpModel& m, const Bag& bag, Trace* trace) {
  check_bag(m, bag);
  Trace local;
  Trace& tr = trace ? *trace : local;
  std::vector<double> agg = m.config.aggregation == Aggregation::se ? se_aggregate(m, bag, &tr)
                                                                     : aggregate(bag, m.config.aggregation);
  return run_from_agg(m, std::move(agg), tr);
}

double forward_aggregated(const AtpModel& m, const std::vector<double>& agg, Trace* trace) {
  if (m.config.aggregation == Aggregation::se) throw std::logic_error("forward_aggregated: SE needs the bag");
  if (agg.size() != static_cast<std::size_t>(m.k) * m.f) throw ValidationError("forward: aggregate size mismatch");
  Trace local;
  return run_from_agg(m, agg, trace ? *trace : local);
}

// ---- loss and gradients -----------------------------------------------------

double loss(double y, double y_hat, double y_max, double alpha) {
  if (!(y > 0.0)) throw ValidationError("loss: ATP label must be > 0");
  if (!(y_max > 0.0)) throw ValidationError("loss: y_max must be > 0");
  const double d = std::abs(y - y_hat);
  return alpha * d / y + (1.0 - alpha) * d / y_max;
}

double loss_grad(double y, double y_hat, double y_max, double alpha) {
  return -sgn(y - y_hat) * (alpha / y + (1.0 - alpha) / y_max);
}

double accumulate_gradient(const AtpModel& m, const Bag* bag, const std::vector<double>* agg, double y, double y_max,
                           double alpha, std::vector<double>& grad) {
  if (grad.size() != m.params.size()) grad.assign(m.params.size(), 0.0);
  Trace tr;
  const double y_hat = bag ? forward(m, *bag, &tr) : forward_aggregated(m, *agg, &tr);
  const double l = loss(y, y_hat, y_max, alpha);
  const double d_out = loss_grad(y, y_hat, y_max, alpha) * m.y_scale;
  if (d_out == 0.0) return l;

  const Layout& L = m.layout;
  const double* p = m.params.data();
  double* g = grad.data();

  std::vector<double> dh{d_out};
  for (int l3 = 3; l3 >= 0; --l3) {
    const int ni = L.dims[l3], no = L.dims[l3 + 1];
    const std::vector<double>& z = tr.z[l3];
    std::vector<double> dz(no);
    for (int o = 0; o < no; ++o) {
      if (l3 < 3) {
        const double a = p[L.prelu[l3]];
        dz[o] = z[o] > 0.0 ? dh[o] : a * dh[o];
        if (z[o] < 0.0) g[L.prelu[l3]] += dh[o] * z[o];
      } else {
        dz[o] = dh[o];
      }
    }
    const std::vector<double>& in = l3 > 0 ? tr.h[l3 - 1] : tr.v;
    std::vector<double> din(ni, 0.0);
    for (int o = 0; o < no; ++o) {
      if (dz[o] == 0.0) continue;
      g[L.b[l3] + o] += dz[o];
      kernels::axpy(dz[o], in, {g + L.W[l3] + static_cast<std::size_t>(o) * ni, static_cast<std::size_t>(ni)});
      kernels::axpy(dz[o], {p + L.W[l3] + static_cast<std::size_t>(o) * ni, static_cast<std::size_t>(ni)}, din);
    }
    dh = std::move(din);
  }

  // dh is now d/dv.
  std::vector<double> dvt = dh;
  if (m.config.feature == FeatureMode::w_k)
    for (int j = 0; j < m.k; ++j) {
      g[L.w_k + j] += dh[j] * tr.v_time[j];
      dvt[j] = dh[j] * p[L.w_k + j];
    }

  const bool se = m.config.aggregation == Aggregation::se;
  std::vector<double> dagg;
  if (se) dagg.assign(static_cast<std::size_t>(m.k) * m.f, 0.0);
  if (m.config.temporal == TemporalMode::w_t) {
    double S = 0.0;
    for (int t = 0; t < m.f; ++t) S += std::abs(p[L.w_t + t]);
    if (S > 0.0) {
      std::vector<double> du(m.f, 0.0);
      for (int j = 0; j < m.k; ++j)
        kernels::axpy(dvt[j], {tr.agg.data() + static_cast<std::size_t>(j) * m.f, static_cast<std::size_t>(m.f)}, du);
      const double cross = kernels::dot(du, {p + L.w_t, static_cast<std::size_t>(m.f)});
      for (int t = 0; t < m.f; ++t) g[L.w_t + t] += du[t] / S - sgn(p[L.w_t + t]) * cross / (S * S);
      if (se)
        for (int j = 0; j < m.k; ++j)
          for (int t = 0; t < m.f; ++t) dagg[static_cast<std::size_t>(j) * m.f + t] = dvt[j] * p[L.w_t + t] / S;
    }
  } else if (se) {
    for (int j = 0; j < m.k; ++j) dagg[static_cast<std::size_t>(j) * m.f + m.f - 1] = dvt[j];
  }

  if (se) {
    const int r = L.se_hidden;
    const std::size_t kf = dagg.size();
    for (int i = 0; i < bag->n; ++i) {
      const double dg = kernels::dot(dagg, {bag->values.data() + i * kf, kf});
      const double gi = tr.se_gate[i];
      const double de = dg * gi * (1.0 - gi);
      g[L.se_b2] += de;
      for (int q = 0; q < r; ++q) {
        g[L.se_w2 + q] += de * tr.se_hid[i * r + q];
        if (tr.se_pre[i * r + q] > 0.0) {
          const double dpre = de * p[L.se_w2 + q];
          g[L.se_w1 + q] += dpre * tr.se_s[i];
          g[L.se_b1 + q] += dpre;
        }
      }
    }
  }
  return l;
}

double batch_gradient(const AtpModel& m, const std::vector<const Bag*>& bags, std::span<const double> y, double y_max,
                      double alpha, std::vector<double>& grad) {
  if (bags.empty() || bags.size() != y.size()) throw ValidationError("batch_gradient: need one label per bag");
  grad.assign(m.params.size(), 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < bags.size(); ++b) total += accumulate_gradient(m, bags[b], nullptr, y[b], y_max, alpha, grad);
  const double inv = 1.0 / static_cast<double>(bags.size());
  for (double& x : grad) x *= inv;
  return total * inv;
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st, double lr, double wd,
                double beta1, double beta2, double eps) {
  if (st.m.size() != params.size()) st.m.assign(params.size(), 0.0), st.v.assign(params.size(), 0.0), st.step = 0;
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= 1.0 - lr * wd;
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mh = st.m[i] / c1, vh = st.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

// ---- training -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train.lr: must be > 0");
  if (weight_decay < 0.0) throw ValidationError("train.weight_decay: must be >= 0");
  if (batch < 1) throw ValidationError("train.batch: must be >= 1");
  if (max_epochs < 1) throw ValidationError("train.max_epochs: must be >= 1");
  if (patience < 0 || patience > max_epochs) throw ValidationError("train.patience: need 0 <= patience <= max_epochs");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("train.alpha: need 0 <= alpha <= 1");
  if (folds < 2) throw ValidationError("train.folds: must be >= 2");
}

Json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch", c.batch},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"alpha", c.alpha},
          {"folds", c.folds},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  StrictObject o(j, "train");
  o.get("lr", c.lr)
      .get("weight_decay", c.weight_decay)
      .get("batch", c.batch)
      .get("max_epochs", c.max_epochs)
      .get("patience", c.patience)
      .get("alpha", c.alpha)
      .get("folds", c.folds)
      .get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

FoldResult train_fold(const std::vector<Sample>& train, const std::vector<Sample>& val, int k, int f,
                      const ModelConfig& mc, const TrainConfig& tc, std::uint64_t seed) {
  tc.validate();
  if (train.empty()) throw ValidationError("train: no training wells");
  FoldResult res;
  double y_max = 0.0;
  for (const Sample& s : train) y_max = std::max(y_max, s.y);
  AtpModel model = AtpModel::create(k, f, mc, derive_seed(seed, "init"));
  model.y_scale = y_max;
  for (const auto* set : {&train, &val})
    for (const Sample& s : *set) check_bag(model, *s.bag);

  int batch = tc.batch;
  if (static_cast<int>(train.size()) < batch) {
    batch = static_cast<int>(train.size());
    res.warnings.push_back("batch shrunk from " + std::to_string(tc.batch) + " to " + std::to_string(batch) +
                           " (only " + std::to_string(train.size()) + " training wells)");
  }

  // Parameter-free aggregation does not change during training.
  const bool se = mc.aggregation == Aggregation::se;
  std::vector<std::vector<double>> train_agg, val_agg;
  if (!se) {
    for (const Sample& s : train) train_agg.push_back(aggregate(*s.bag, mc.aggregation));
    for (const Sample& s : val) val_agg.push_back(aggregate(*s.bag, mc.aggregation));
  }
  auto predict_one = [&](const AtpModel& m, const std::vector<Sample>& set, const std::vector<std::vector<double>>& agg,
                         std::size_t i) { return se ? forward(m, *set[i].bag) : forward_aggregated(m, agg[i]); };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  AdamState state;
  std::vector<double> grad(model.params.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = model.params;
  int since = 0;
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double train_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = b0; b < b1; ++b) {
        const std::size_t i = order[b];
        train_loss += accumulate_gradient(model, se ? train[i].bag : nullptr, se ? nullptr : &train_agg[i], train[i].y,
                                          y_max, tc.alpha, grad);
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (double& x : grad) x *= inv;
      adamw_step(model.params, grad, state, tc.lr, tc.weight_decay);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss / static_cast<double>(train.size());
    double monitor = rec.train_loss;
    if (!val.empty()) {
      std::vector<double> y(val.size()), p(val.size());
      double vl = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        y[i] = val[i].y;
        p[i] = predict_one(model, val, val_agg, i);
        vl += loss(y[i], p[i], y_max, tc.alpha);
      }
      rec.val_loss = vl / static_cast<double>(val.size());
      rec.val_mape = eval::mape(y, p);
      monitor = rec.val_loss;
    }
    res.history.push_back(rec);
    if (monitor < best) {
      best = monitor;
      best_params = model.params;
      res.best_epoch = epoch;
      since = 0;
    } else if (++since > tc.patience) {
      break;
    }
  }
  model.params = std::move(best_params);
  res.model = std::move(model);
  return res;
}

std::vector<double> predict(const AtpModel& m, const std::vector<Sample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(forward(m, *s.bag));
  return out;
}

// ---- files ------------------------------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t u) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("checkpoint: truncated");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return u;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AtpModel& m, const Json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const Json header{{"k", m.k}, {"f", m.f}, {"config", to_json(m.config)}, {"params", m.params.size()},
                    {"y_scale", m.y_scale}, {"extra", extra}};
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "OTCK1\n";
  put_u64(os, h.size());
  os << h;
  put_u64(os, std::bit_cast<std::uint64_t>(m.y_scale));
  for (double x : m.params) put_u64(os, std::bit_cast<std::uint64_t>(x));
  if (!os) throw IoError("write failed: " + path.string());
}

AtpModel load_checkpoint(const std::filesystem::path& path, Json* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != "OTCK1") throw ValidationError(path.string() + ": not an OTCK1 checkpoint");
  const std::uint64_t hl = get_u64(is);
  if (hl > (1u << 26)) throw ValidationError(path.string() + ": implausible header length");
  std::string h(hl, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(hl))) throw ValidationError(path.string() + ": truncated");
  Json header;
  try {
    header = Json::parse(h);
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": bad header: " + e.what());
  }
  AtpModel m;
  m.k = header.at("k").get<int>();
  m.f = header.at("f").get<int>();
  m.config = model_config_from_json(header.at("config"));
  m.layout = make_layout(m.k, m.f, m.config);
  if (header.at("params").get<std::size_t>() != m.layout.total)
    throw ValidationError(path.string() + ": parameter count does not match the configuration");
  m.y_scale = std::bit_cast<double>(get_u64(is));
  m.params.resize(m.layout.total);
  for (double& x : m.params) x = std::bit_cast<double>(get_u64(is));
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError(path.string() + ": trailing bytes");
  if (extra) *extra = header.value("extra", Json::object());
  return m;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_loss,val_loss,val_mape\n";
  for (const auto& r : history) os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_mape << '\n';
  return os.str();
}

}  // namespace oatp::model
