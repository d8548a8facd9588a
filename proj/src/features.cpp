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

#include "oatp/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "oatp/imgproc.hpp"
#include "oatp/parallel.hpp"

namespace oatp::feat {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kLevels = 16;
constexpr int kOffsets[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

MaskedCrop masked_crop(const Image& frame, const Mask& mask, int pad, int min_size) {
  if (frame.width() != mask.width() || frame.height() != mask.height())
    throw ValidationError("masked_crop: mask size differs from the frame");
  if (pad < 0) throw ValidationError("masked_crop: pad must be >= 0");
  MaskedCrop out;
  const BoxI box = bounding_box(mask);
  if (box.empty()) {
    const int side = std::max(1, min_size);
    out.image = Image(side, side, 0.0f);
    out.mask = Mask(side, side, 0);
    out.flagged = true;
    return out;
  }
  const int bw = box.width(), bh = box.height();
  const int side = std::max(bw, bh) + 2 * pad;
  const int x0 = box.x0 - pad - (side - 2 * pad - bw) / 2;
  const int y0 = box.y0 - pad - (side - 2 * pad - bh) / 2;
  out.image = Image(side, side, 0.0f);
  out.mask = Mask(side, side, 0);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int fx = x0 + x, fy = y0 + y;
      if (mask.contains(fx, fy) && mask(fx, fy)) {
        out.mask(x, y) = 1;
        out.image(x, y) = frame(fx, fy);
      }
    }
  return out;
}

const std::array<const char*, kClassicalDim>& classical_names() {
  static const std::array<const char*, kClassicalDim> names = {
      "fo_mean", "fo_std", "fo_skewness", "fo_kurtosis", "fo_min", "fo_max", "fo_median", "fo_p10",
      "fo_p90", "fo_energy", "fo_entropy", "fo_range", "fo_iqr", "fo_mad", "fo_rmad", "fo_rms",
      "glcm_contrast_1_0", "glcm_correlation_1_0", "glcm_energy_1_0", "glcm_homogeneity_1_0",
      "glcm_contrast_0_1", "glcm_correlation_0_1", "glcm_energy_0_1", "glcm_homogeneity_0_1",
      "glcm_contrast_1_1", "glcm_correlation_1_1", "glcm_energy_1_1", "glcm_homogeneity_1_1",
      "glcm_contrast_1_m1", "glcm_correlation_1_m1", "glcm_energy_1_m1", "glcm_homogeneity_1_m1",
      "glcm_contrast_mean", "glcm_correlation_mean", "glcm_energy_mean", "glcm_homogeneity_mean",
      "glcm_entropy_mean", "glcm_dissimilarity_mean", "glcm_maxprob_mean", "glcm_sumaverage_mean",
      "shape_area", "shape_perimeter", "shape_circularity", "shape_eccentricity", "shape_solidity",
      "shape_extent", "shape_equivalent_diameter", "shape_major_axis"};
  return names;
}

int gray_level(float v) { return std::clamp(static_cast<int>(std::floor(v / 16.0f)), 0, kLevels - 1); }

std::array<double, 256> glcm(const Image& img, const Mask& mask, int dx, int dy) {
  std::array<double, 256> p{};
  double total = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int u = x + dx, v = y + dy;
      if (!mask(x, y) || !mask.contains(u, v) || !mask(u, v)) continue;
      const int a = gray_level(img(x, y)), b = gray_level(img(u, v));
      p[a * kLevels + b] += 1.0;
      p[b * kLevels + a] += 1.0;
      total += 2.0;
    }
  if (total > 0.0)
    for (double& e : p) e /= total;
  return p;
}

namespace {

struct GlcmStats {
  double contrast = kNaN, correlation = kNaN, energy = kNaN, homogeneity = kNaN;
  double entropy = kNaN, dissimilarity = kNaN, maxprob = kNaN, sumavg = kNaN;
};

GlcmStats glcm_stats(const std::array<double, 256>& p) {
  GlcmStats s;
  double sum = 0.0;
  for (double e : p) sum += e;
  if (sum <= 0.0) return s;
  double mi = 0.0, mj = 0.0;
  for (int i = 0; i < kLevels; ++i)
    for (int j = 0; j < kLevels; ++j) {
      mi += i * p[i * kLevels + j];
      mj += j * p[i * kLevels + j];
    }
  double vi = 0.0, vj = 0.0, cov = 0.0;
  s.contrast = s.energy = s.homogeneity = s.entropy = s.dissimilarity = s.maxprob = s.sumavg = 0.0;
  for (int i = 0; i < kLevels; ++i)
    for (int j = 0; j < kLevels; ++j) {
      const double e = p[i * kLevels + j];
      const double d = i - j;
      s.contrast += d * d * e;
      s.energy += e * e;
      s.homogeneity += e / (1.0 + d * d);
      s.dissimilarity += std::abs(d) * e;
      s.maxprob = std::max(s.maxprob, e);
      s.sumavg += (i + j) * e;
      if (e > 0.0) s.entropy -= e * std::log2(e);
      vi += (i - mi) * (i - mi) * e;
      vj += (j - mj) * (j - mj) * e;
      cov += (i - mi) * (j - mj) * e;
    }
  s.correlation = vi > 0.0 && vj > 0.0 ? cov / std::sqrt(vi * vj) : kNaN;
  return s;
}

double finite_mean(std::initializer_list<double> xs) {
  double s = 0.0;
  int n = 0;
  for (double x : xs)
    if (std::isfinite(x)) s += x, ++n;
  return n ? s / n : kNaN;
}

}  // namespace

FeatureVector extract_classical(const Image& crop, const Mask& mask) {
  if (crop.width() != mask.width() || crop.height() != mask.height())
    throw ValidationError("extract_classical: crop and mask differ in size");
  FeatureVector out;
  out.values.assign(kClassicalDim, 0.0);
  std::vector<double> v;
  for (std::size_t i = 0; i < crop.size(); ++i)
    if (mask.data()[i]) v.push_back(crop.data()[i]);
  if (v.empty()) {
    out.empty = true;
    return out;
  }
  auto& f = out.values;
  const double n = static_cast<double>(v.size());

  // First order.
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  double mean = 0.0, energy = 0.0;
  for (double x : v) mean += x, energy += x * x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double x : v) {
    const double d = x - mean;
    m2 += d * d, m3 += d * d * d, m4 += d * d * d * d, mad += std::abs(d);
  }
  m2 /= n, m3 /= n, m4 /= n, mad /= n;
  const double sd = std::sqrt(m2);
  std::array<int, kLevels> hist{};
  for (double x : v) ++hist[gray_level(static_cast<float>(x))];
  double entropy = 0.0;
  for (int c : hist)
    if (c > 0) entropy -= (c / n) * std::log2(c / n);
  const double p10 = percentile(sorted, 0.10), p90 = percentile(sorted, 0.90);
  double rsum = 0.0, rmean = 0.0;
  std::size_t rn = 0;
  for (double x : v)
    if (x >= p10 && x <= p90) rmean += x, ++rn;
  rmean /= static_cast<double>(rn);
  for (double x : v)
    if (x >= p10 && x <= p90) rsum += std::abs(x - rmean);
  f[0] = mean;
  f[1] = sd;
  f[2] = sd > 0.0 ? m3 / (sd * sd * sd) : kNaN;
  f[3] = sd > 0.0 ? m4 / (m2 * m2) : kNaN;
  f[4] = sorted.front();
  f[5] = sorted.back();
  f[6] = percentile(sorted, 0.5);
  f[7] = p10;
  f[8] = p90;
  f[9] = energy;
  f[10] = entropy;
  f[11] = sorted.back() - sorted.front();
  f[12] = percentile(sorted, 0.75) - percentile(sorted, 0.25);
  f[13] = mad;
  f[14] = rsum / static_cast<double>(rn);
  f[15] = std::sqrt(energy / n);

  // Texture.
  std::array<GlcmStats, 4> g;
  for (int o = 0; o < 4; ++o) {
    g[o] = glcm_stats(glcm(crop, mask, kOffsets[o][0], kOffsets[o][1]));
    f[16 + 4 * o + 0] = g[o].contrast;
    f[16 + 4 * o + 1] = g[o].correlation;
    f[16 + 4 * o + 2] = g[o].energy;
    f[16 + 4 * o + 3] = g[o].homogeneity;
  }
  f[32] = finite_mean({g[0].contrast, g[1].contrast, g[2].contrast, g[3].contrast});
  f[33] = finite_mean({g[0].correlation, g[1].correlation, g[2].correlation, g[3].correlation});
  f[34] = finite_mean({g[0].energy, g[1].energy, g[2].energy, g[3].energy});
  f[35] = finite_mean({g[0].homogeneity, g[1].homogeneity, g[2].homogeneity, g[3].homogeneity});
  f[36] = finite_mean({g[0].entropy, g[1].entropy, g[2].entropy, g[3].entropy});
  f[37] = finite_mean({g[0].dissimilarity, g[1].dissimilarity, g[2].dissimilarity, g[3].dissimilarity});
  f[38] = finite_mean({g[0].maxprob, g[1].maxprob, g[2].maxprob, g[3].maxprob});
  f[39] = finite_mean({g[0].sumavg, g[1].sumavg, g[2].sumavg, g[3].sumavg});

  // Shape.
  double cx = 0.0, cy = 0.0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(x, y)) cx += x, cy += y;
  cx /= n, cy /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(x, y)) {
        sxx += (x - cx) * (x - cx);
        syy += (y - cy) * (y - cy);
        sxy += (x - cx) * (y - cy);
      }
  // Pixel squares carry 1/12 of variance along each axis.
  sxx = sxx / n + 1.0 / 12.0, syy = syy / n + 1.0 / 12.0, sxy /= n;
  const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double l1 = tr / 2.0 + disc, l2 = std::max(0.0, tr / 2.0 - disc);
  const double perimeter = contour_length(trace_outer_contour(mask));
  const BoxI box = bounding_box(mask);
  f[40] = n;
  f[41] = perimeter;
  f[42] = perimeter > 0.0 ? std::min(1.0, 4.0 * std::numbers::pi * n / (perimeter * perimeter)) : kNaN;
  f[43] = std::sqrt(std::max(0.0, 1.0 - l2 / l1));
  f[44] = n / convex_hull_area(mask);
  f[45] = n / (static_cast<double>(box.width()) * box.height());
  f[46] = 2.0 * std::sqrt(n / std::numbers::pi);
  f[47] = 4.0 * std::sqrt(l1);

  for (double& x : f)
    if (!std::isfinite(x)) {
      x = 0.0;
      out.sanitized = true;
    }
  return out;
}

std::unique_ptr<FeatureBackend> make_backend(const std::string& name) {
  if (name == "classical") return std::make_unique<ClassicalBackend>();
  throw ValidationError("features.backend: unknown backend '" + name +
                        "' (built in: classical; other backends are imported from OTFC1 files)");
}

void FeatureCube::validate() const {
  if (n < 1 || k < 1 || f < 1) throw ValidationError("feature cube: n, k and f must be >= 1");
  if (values.size() != static_cast<std::size_t>(n) * k * f)
    throw ValidationError("feature cube: value count does not match n x k x f");
  if (cavity_ids.size() != static_cast<std::size_t>(n)) throw ValidationError("feature cube: one id per cavity");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      for (int t = 0; t < f; ++t)
        if (!std::isfinite(at(i, j, t)))
          throw ValidationError("feature cube: non-finite value at cavity " + std::to_string(i) + ", frame " +
                                std::to_string(t) + ", feature " + std::to_string(j));
}

FeatureCube build_feature_cube(const std::vector<Image>& frames, const seg::WellSegmentation& s,
                               const FeatureBackend& backend, const CubeOptions& options) {
  FeatureCube cube;
  cube.backend = backend.name();
  cube.k = backend.dim();
  cube.f = static_cast<int>(frames.size());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < s.tracks.size(); ++i) {
    if (s.tracks[i].valid && s.tracks[i].masks.size() == frames.size()) keep.push_back(i);
    else ++cube.excluded_tracks;
  }
  cube.n = static_cast<int>(keep.size());
  if (cube.n == 0) throw std::runtime_error("no valid cavity tracks (" + std::to_string(cube.excluded_tracks) + " excluded)");
  for (std::size_t i : keep) cube.cavity_ids.push_back(s.cavities.cavities[i].id);
  cube.values.assign(static_cast<std::size_t>(cube.n) * cube.k * cube.f, 0.0f);
  std::vector<unsigned char> sanitized(static_cast<std::size_t>(cube.n) * cube.f, 0), empty(sanitized.size(), 0);
  parallel_for(sanitized.size(), options.workers, [&](std::size_t job) {
    const int i = static_cast<int>(job / cube.f), t = static_cast<int>(job % cube.f);
    const seg::Cavity& cav = s.cavities.cavities[keep[i]];
    const Image window = seg::crop(frames[t], cav.crop_x0, cav.crop_y0, cav.crop_size);
    const MaskedCrop mc = masked_crop(window, s.tracks[keep[i]].masks[t], options.pad);
    const FeatureVector fv = backend.extract(mc.image, mc.mask);
    if (static_cast<int>(fv.values.size()) != cube.k) throw std::runtime_error("feature backend returned a wrong size");
    for (int j = 0; j < cube.k; ++j) cube.at(i, j, t) = static_cast<float>(fv.values[j]);
    sanitized[job] = fv.sanitized;
    empty[job] = fv.empty || mc.flagged;
  });
  for (std::size_t j = 0; j < sanitized.size(); ++j) cube.sanitized += sanitized[j], cube.empty_masks += empty[j];
  return cube;
}

NormStats compute_norm_stats(const std::vector<const FeatureCube*>& train) {
  if (train.empty()) throw ValidationError("normalization: no training cubes");
  const int k = train[0]->k;
  NormStats st;
  st.mean.assign(k, 0.0);
  st.sd.assign(k, 0.0);
  std::vector<double> count(k, 0.0);
  for (const FeatureCube* c : train) {
    if (c->k != k) throw ValidationError("normalization: cubes differ in k");
    st.train_wells.push_back(c->well_id);
    for (int i = 0; i < c->n; ++i)
      for (int j = 0; j < k; ++j)
        for (int t = 0; t < c->f; ++t) st.mean[j] += c->at(i, j, t), count[j] += 1.0;
  }
  for (int j = 0; j < k; ++j) st.mean[j] /= count[j];
  for (const FeatureCube* c : train)
    for (int i = 0; i < c->n; ++i)
      for (int j = 0; j < k; ++j)
        for (int t = 0; t < c->f; ++t) {
          const double d = c->at(i, j, t) - st.mean[j];
          st.sd[j] += d * d;
        }
  for (int j = 0; j < k; ++j) {
    st.sd[j] = std::sqrt(st.sd[j] / count[j]);
    if (!(st.sd[j] > 0.0)) st.sd[j] = 1.0;
  }
  return st;
}

void apply_norm(FeatureCube& cube, const NormStats& st) {
  if (static_cast<int>(st.mean.size()) != cube.k) throw ValidationError("normalization: k mismatch");
  for (int i = 0; i < cube.n; ++i)
    for (int j = 0; j < cube.k; ++j)
      for (int t = 0; t < cube.f; ++t)
        cube.at(i, j, t) = static_cast<float>((cube.at(i, j, t) - st.mean[j]) / st.sd[j]);
  cube.norm = st;
}

// ---- files ------------------------------------------------------------------

namespace {

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

}  // namespace

void export_features(const fs::path& path, const FeatureCube& cube, const Json& stamp) {
  cube.validate();
  if (cube.backend.empty() || cube.backend.find_first_of(" \t\n") != std::string::npos)
    throw ValidationError("feature cube: backend name must be a single non-empty token");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "OTFC1 " << cube.n << ' ' << cube.k << ' ' << cube.f << ' ' << cube.backend << '\n';
  std::vector<char> buf(cube.values.size() * 4);
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(cube.values[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path.string());
  Json side{{"format", "OTFC1"},
            {"well_id", cube.well_id},
            {"cavity_ids", cube.cavity_ids},
            {"sanitized", cube.sanitized},
            {"empty_masks", cube.empty_masks},
            {"excluded_tracks", cube.excluded_tracks}};
  if (cube.norm)
    side["normalization"] = {{"mean", cube.norm->mean}, {"sd", cube.norm->sd}, {"train_wells", cube.norm->train_wells}};
  if (!stamp.empty()) side["stamp"] = stamp;
  write_json_file(sidecar(path), side);
}

FeatureCube import_features(const fs::path& path, const ImportExpect& expect) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic;
  FeatureCube c;
  if (!(hs >> magic >> c.n >> c.k >> c.f >> c.backend) || magic != "OTFC1")
    throw ValidationError(path.string() + ": not an OTFC1 feature file");
  if (c.n < 1 || c.k < 1 || c.f < 1) throw ValidationError(path.string() + ": n, k and f must be >= 1");
  const std::size_t count = static_cast<std::size_t>(c.n) * c.k * c.f;
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() != count * 4) {
    const std::size_t have = buf.size() / 4;
    throw ValidationError(path.string() + ": header claims n=" + std::to_string(c.n) + " k=" + std::to_string(c.k) +
                          " f=" + std::to_string(c.f) + " (" + std::to_string(count) + " values) but the file holds " +
                          std::to_string(have) + " values (" +
                          std::to_string(static_cast<double>(have) / (static_cast<double>(c.n) * c.f)) +
                          " features per cavity-frame)");
  }
  c.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + b])) << (8 * b);
    c.values[i] = std::bit_cast<float>(u);
  }
  if (fs::exists(sidecar(path))) {
    const Json side = read_json_file(sidecar(path));
    c.well_id = side.value("well_id", "");
    c.cavity_ids = side.at("cavity_ids").get<std::vector<int>>();
    c.sanitized = side.value("sanitized", std::size_t{0});
    c.empty_masks = side.value("empty_masks", std::size_t{0});
    c.excluded_tracks = side.value("excluded_tracks", std::size_t{0});
    if (side.contains("normalization")) {
      NormStats st;
      st.mean = side["normalization"].at("mean").get<std::vector<double>>();
      st.sd = side["normalization"].at("sd").get<std::vector<double>>();
      st.train_wells = side["normalization"].at("train_wells").get<std::vector<std::string>>();
      c.norm = st;
    }
  } else {
    for (int i = 0; i < c.n; ++i) c.cavity_ids.push_back(i);
  }
  if (c.cavity_ids.size() != static_cast<std::size_t>(c.n))
    throw ValidationError(path.string() + ": sidecar lists " + std::to_string(c.cavity_ids.size()) +
                          " cavity ids for n=" + std::to_string(c.n));
  if (expect.k && *expect.k != c.k)
    throw ValidationError(path.string() + ": k=" + std::to_string(c.k) + ", expected " + std::to_string(*expect.k));
  if (expect.f && *expect.f != c.f)
    throw ValidationError(path.string() + ": f=" + std::to_string(c.f) + ", expected " + std::to_string(*expect.f));
  if (expect.cavity_ids && *expect.cavity_ids != c.cavity_ids)
    throw ValidationError(path.string() + ": cavity ids differ from the segmentation");
  c.validate();
  return c;
}

void export_features_csv(const fs::path& path, const FeatureCube& cube, const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(9);
  os << "cavity_id,frame";
  for (int j = 0; j < cube.k; ++j) {
    if (static_cast<int>(names.size()) == cube.k) os << ',' << names[j];
    else if (cube.backend == "classical" && cube.k == kClassicalDim) os << ',' << classical_names()[j];
    else os << ",f" << j;
  }
  os << '\n';
  for (int i = 0; i < cube.n; ++i)
    for (int t = 0; t < cube.f; ++t) {
      os << cube.cavity_ids[i] << ',' << t;
      for (int j = 0; j < cube.k; ++j) os << ',' << cube.at(i, j, t);
      os << '\n';
    }
}

}  // namespace oatp::feat
