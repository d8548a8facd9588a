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

#include "oatp/preprocess.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <regex>

#include "oatp/imgproc.hpp"
#include "oatp/layout.hpp"
#include "oatp/parallel.hpp"

namespace oatp::prep {

namespace fs = std::filesystem;

Image sobel_focus_project(const std::vector<Image>& stack, Plane<std::uint8_t>* chosen) {
  if (stack.empty()) throw ValidationError("sobel_focus_project: empty stack");
  if (stack.size() > 255) throw ValidationError("sobel_focus_project: too many slices");
  for (const auto& s : stack)
    if (!s.same_shape(stack[0])) throw ValidationError("sobel_focus_project: slices differ in size");
  const int w = stack[0].width(), h = stack[0].height();
  const int nz = static_cast<int>(stack.size());

  Plane<std::uint8_t> arg(w, h, 0);
  if (nz > 1) {
    Image best = box_mean(sobel_magnitude(stack[0]), 2);
    for (int z = 1; z < nz; ++z) {
      const Image f = box_mean(sobel_magnitude(stack[z]), 2);
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f.data()[i] > best.data()[i]) {
          best.data()[i] = f.data()[i];
          arg.data()[i] = static_cast<std::uint8_t>(z);
        }
    }
    Plane<std::uint8_t> voted(w, h, 0);
    std::vector<int> count(nz);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::fill(count.begin(), count.end(), 0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            if (arg.contains(x + dx, y + dy)) ++count[arg(x + dx, y + dy)];
        const int own = arg(x, y);
        int pick = own;
        for (int z = 0; z < nz; ++z)
          if (count[z] > count[pick]) pick = z;
        voted(x, y) = static_cast<std::uint8_t>(pick);
      }
    arg = std::move(voted);
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = stack[arg(x, y)](x, y);
  if (chosen) *chosen = std::move(arg);
  return out;
}

namespace {

// Weight of the second (right / bottom) tile at output coordinate x.
double feather(int x, int tile, int overlap) {
  if (x < tile - overlap) return 0.0;
  if (x >= tile) return 1.0;
  return (x - (tile - overlap) + 0.5) / overlap;
}

}  // namespace

Image stitch_quadrants(const std::array<Image, 4>& q, int overlap) {
  for (const auto& img : q)
    if (!img.same_shape(q[0])) throw ValidationError("stitch_quadrants: quadrant sizes differ");
  const int wq = q[0].width(), hq = q[0].height();
  if (overlap < 0) throw ValidationError("stitch_quadrants: negative overlap");
  if (overlap >= wq || overlap >= hq)
    throw ValidationError("stitch_quadrants: overlap " + std::to_string(overlap) + " is not smaller than the quadrant");
  const int w = 2 * wq - overlap, h = 2 * hq - overlap;
  const int sx = wq - overlap, sy = hq - overlap;  // origin of the right / bottom tiles
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    const double wy = feather(y, hq, overlap);
    for (int x = 0; x < w; ++x) {
      const double wx = feather(x, wq, overlap);
      double v = 0.0;
      if (wx < 1.0 && wy < 1.0) v += (1 - wx) * (1 - wy) * q[0](x, y);
      if (wx > 0.0 && wy < 1.0) v += wx * (1 - wy) * q[1](x - sx, y);
      if (wx < 1.0 && wy > 0.0) v += (1 - wx) * wy * q[2](x, y - sy);
      if (wx > 0.0 && wy > 0.0) v += wx * wy * q[3](x - sx, y - sy);
      out(x, y) = static_cast<float>(v);
    }
  }
  return out;
}

std::array<Image, 4> split_quadrants(const Image& frame, int overlap) {
  if (overlap < 0 || (frame.width() + overlap) % 2 || (frame.height() + overlap) % 2)
    throw ValidationError("split_quadrants: frame size + overlap must be even");
  const int wq = (frame.width() + overlap) / 2, hq = (frame.height() + overlap) / 2;
  std::array<Image, 4> q;
  for (int k = 0; k < 4; ++k) {
    const int ox = (k % 2) ? frame.width() - wq : 0;
    const int oy = (k / 2) ? frame.height() - hq : 0;
    q[k] = Image(wq, hq);
    for (int y = 0; y < hq; ++y)
      for (int x = 0; x < wq; ++x) q[k](x, y) = frame(ox + x, oy + y);
  }
  return q;
}

Image assemble_frame(const RawFrameSet& raw) {
  if (raw.z_levels < 1 || raw.images.size() != static_cast<std::size_t>(4 * raw.z_levels))
    throw ValidationError("frame " + std::to_string(raw.frame_index) + ": expected 4 x z_levels images");
  std::array<Image, 4> q;
  for (int k = 0; k < 4; ++k) {
    std::vector<Image> stack(raw.images.begin() + k * raw.z_levels, raw.images.begin() + (k + 1) * raw.z_levels);
    q[k] = sobel_focus_project(stack);
  }
  return stitch_quadrants(q, raw.overlap);
}

// ---- contrast ---------------------------------------------------------------

Mask central_region(int width, int height) {
  Mask m(width, height, 0);
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0, r = 0.4 * std::min(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(x, y) = std::hypot(x - cx, y - cy) <= r ? 1 : 0;
  return m;
}

namespace {

struct RobustStats {
  double mean = 0.0, sd = 0.0;
};

RobustStats robust_stats(const Image& img, const Mask& region) {
  std::vector<float> v;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (region.data()[i]) v.push_back(img.data()[i]);
  if (v.empty()) throw ValidationError("normalize_contrast: empty statistics region");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double lo = v[static_cast<std::size_t>(std::floor(0.02 * (n - 1)))];
  const double hi = v[static_cast<std::size_t>(std::ceil(0.98 * (n - 1)))];
  double s = 0.0, s2 = 0.0;
  for (float x : v) {
    const double c = std::clamp(static_cast<double>(x), lo, hi);
    s += c;
    s2 += c * c;
  }
  RobustStats r;
  r.mean = s / n;
  r.sd = std::sqrt(std::max(0.0, s2 / n - r.mean * r.mean));
  return r;
}

constexpr double kMinSd = 1e-6;

}  // namespace

ContrastResult normalize_contrast(const Timelapse& frames, const Mask& region) {
  ContrastResult r;
  if (frames.empty()) return r;
  for (const auto& f : frames)
    if (!f.same_shape(frames[0]) || region.width() != frames[0].width() || region.height() != frames[0].height())
      throw ValidationError("normalize_contrast: frame sizes differ");
  const RobustStats ref = robust_stats(frames[0], region);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const RobustStats s = t == 0 ? ref : robust_stats(frames[t], region);
    double gain = 1.0, bias = 0.0;
    if (s.sd < kMinSd || ref.sd < kMinSd) {
      bias = ref.mean - s.mean;
      r.warnings.push_back(static_cast<int>(t));
    } else {
      gain = ref.sd / s.sd;
      bias = ref.mean - gain * s.mean;
    }
    Image out(frames[t].width(), frames[t].height());
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] = static_cast<float>(std::clamp(gain * frames[t].data()[i] + bias, 0.0, 255.0));
    r.frames.push_back(std::move(out));
    r.gain.push_back(gain);
    r.bias.push_back(bias);
  }
  return r;
}

ContrastResult normalize_contrast(const Timelapse& frames) {
  if (frames.empty()) return {};
  return normalize_contrast(frames, central_region(frames[0].width(), frames[0].height()));
}

// ---- registration -----------------------------------------------------------

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};
template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> fftw_alloc(std::size_t n) {
  auto* p = static_cast<T*>(fftwf_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

class Spectrum {
 public:
  Spectrum(const Image& img) : w_(img.width()), h_(img.height()), hw_(w_ / 2 + 1) {
    auto in = fftw_alloc<float>(static_cast<std::size_t>(w_) * h_);
    data_ = fftw_alloc<fftwf_complex>(static_cast<std::size_t>(h_) * hw_);
    double mean = 0.0;
    for (float v : img.values()) mean += v;
    mean /= static_cast<double>(img.size());
    for (int y = 0; y < h_; ++y) {
      const double wy = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * y / h_);
      for (int x = 0; x < w_; ++x) {
        const double wx = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * x / w_);
        in[static_cast<std::size_t>(y) * w_ + x] = static_cast<float>((img(x, y) - mean) * wx * wy);
      }
    }
    fftwf_plan plan;
    {
      std::lock_guard lock(fftw_planner_mutex());
      plan = fftwf_plan_dft_r2c_2d(h_, w_, in.get(), data_.get(), FFTW_ESTIMATE);
    }
    fftwf_execute(plan);
    std::lock_guard lock(fftw_planner_mutex());
    fftwf_destroy_plan(plan);
  }

  int w_, h_, hw_;
  FftwBuffer<fftwf_complex> data_;
};

PointF correlate(const Spectrum& a, const Spectrum& b, double* peak) {
  const int w = a.w_, h = a.h_, hw = a.hw_;
  const std::size_t nspec = static_cast<std::size_t>(h) * hw;
  auto cross = fftw_alloc<fftwf_complex>(nspec);
  auto out = fftw_alloc<float>(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < nspec; ++i) {
    const std::complex<double> fa(a.data_[i][0], a.data_[i][1]), fb(b.data_[i][0], b.data_[i][1]);
    std::complex<double> r = fb * std::conj(fa);
    const double mag = std::abs(r);
    r = mag > 1e-20 ? r / mag : 0.0;
    cross[i][0] = static_cast<float>(r.real());
    cross[i][1] = static_cast<float>(r.imag());
  }
  fftwf_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftwf_plan_dft_c2r_2d(h, w, cross.get(), out.get(), FFTW_ESTIMATE);
  }
  fftwf_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftwf_destroy_plan(plan);
  }
  const double norm = 1.0 / (static_cast<double>(w) * h);
  auto at = [&](int x, int y) {
    x = (x % w + w) % w;
    y = (y % h + h) % h;
    return out[static_cast<std::size_t>(y) * w + x] * norm;
  };
  int px = 0, py = 0;
  double best = at(0, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (at(x, y) > best) best = at(x, y), px = x, py = y;
  auto refine = [](double l, double c, double r) {
    const double d = l - 2.0 * c + r;
    return d < 0.0 ? std::clamp(0.5 * (l - r) / d, -0.5, 0.5) : 0.0;
  };
  const double fx = refine(at(px - 1, py), best, at(px + 1, py));
  const double fy = refine(at(px, py - 1), best, at(px, py + 1));
  if (peak) *peak = std::clamp(best, 0.0, 1.0);
  const double sx = (px > w / 2 ? px - w : px) + fx;
  const double sy = (py > h / 2 ? py - h : py) + fy;
  return {sx, sy};
}

}  // namespace

PointF phase_correlate(const Image& reference, const Image& moving, double* peak) {
  if (!reference.same_shape(moving) || reference.empty())
    throw ValidationError("phase_correlate: images must be non-empty and the same size");
  return correlate(Spectrum(reference), Spectrum(moving), peak);
}

RegisterOutput register_frames(const Timelapse& frames, double min_confidence) {
  RegisterOutput r;
  const std::size_t n = frames.size();
  if (n == 0) return r;
  for (const auto& f : frames)
    if (!f.same_shape(frames[0])) throw ValidationError("register_frames: frame sizes differ");
  r.frames.resize(n);
  r.result.offsets.assign(n, PointF{});
  r.result.confidence.assign(n, 1.0);
  r.result.flagged.assign(n, false);
  r.frames[0] = frames[0];
  const Spectrum ref(frames[0]);
  for (std::size_t t = 1; t < n; ++t) {
    double peak = 0.0;
    const PointF s = correlate(ref, Spectrum(frames[t]), &peak);
    r.result.confidence[t] = peak;
    if (peak < min_confidence) {
      r.result.flagged[t] = true;
      r.frames[t] = frames[t];
      continue;
    }
    r.result.offsets[t] = s;
    r.frames[t] = shift_image(frames[t], -s.x, -s.y);
  }
  return r;
}

// ---- pipeline ---------------------------------------------------------------

Json to_json(const PreprocessConfig& c) { return {{"min_confidence", c.min_confidence}, {"keep_last", c.keep_last}}; }

PreprocessConfig preprocess_config_from_json(const Json& j) {
  PreprocessConfig c;
  StrictObject o(j, "preprocess");
  o.get("min_confidence", c.min_confidence).get("keep_last", c.keep_last);
  o.finish();
  if (c.keep_last < 0) throw ValidationError("preprocess.keep_last: must be >= 0");
  if (c.min_confidence < 0.0 || c.min_confidence > 1.0)
    throw ValidationError("preprocess.min_confidence: must be in [0, 1]");
  return c;
}

PreprocessResult preprocess_well(const FrameSource& source, int n_frames, const PreprocessConfig& config,
                                 int workers) {
  if (n_frames < 1) throw ValidationError("preprocess: no frames");
  const int first = config.keep_last > 0 && n_frames > config.keep_last ? n_frames - config.keep_last : 0;
  const int n = n_frames - first;
  Timelapse stitched(n);
  parallel_for(static_cast<std::size_t>(n), workers,
               [&](std::size_t i) { stitched[i] = assemble_frame(source(first + static_cast<int>(i))); });
  ContrastResult contrast = normalize_contrast(stitched);
  stitched.clear();
  RegisterOutput reg = register_frames(contrast.frames, config.min_confidence);
  PreprocessResult out;
  out.first_frame = first;
  out.registration = std::move(reg.result);
  out.contrast_warnings = std::move(contrast.warnings);
  out.frames.reserve(n);
  for (const auto& f : reg.frames) out.frames.push_back(quantize8(f));
  return out;
}

// ---- files ------------------------------------------------------------------

RawLayout discover_raw(const fs::path& well_dir) {
  if (!fs::is_directory(well_dir)) throw IoError("not a directory: " + well_dir.string());
  static const std::regex frame_re(R"(frame_(\d+))");
  std::vector<int> idx;
  for (const auto& e : fs::directory_iterator(well_dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_directory() && std::regex_match(name, m, frame_re)) idx.push_back(std::stoi(m[1]));
  }
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (idx[i] != static_cast<int>(i))
      throw ValidationError("frames in " + well_dir.string() + " are not numbered 0..n-1");
  RawLayout l;
  l.frames = static_cast<int>(idx.size());
  if (l.frames == 0) throw ValidationError("no frame directories in " + well_dir.string());
  while (fs::exists(well_dir / layout::frame_dir(0) / layout::quadrant_file(0, l.z_levels))) ++l.z_levels;
  if (l.z_levels == 0) throw ValidationError("no quadrant images in " + (well_dir / layout::frame_dir(0)).string());
  return l;
}

RawFrameSet read_raw_frame(const fs::path& well_dir, int t, int z_levels, int overlap) {
  RawFrameSet r;
  r.frame_index = t;
  r.z_levels = z_levels;
  r.overlap = overlap;
  for (int q = 0; q < 4; ++q)
    for (int z = 0; z < z_levels; ++z)
      r.images.push_back(read_pgm(well_dir / layout::frame_dir(t) / layout::quadrant_file(q, z)));
  return r;
}

void write_preprocessed(const fs::path& dir, const PreprocessResult& r) {
  const fs::path out = dir / "preprocessed";
  fs::create_directories(out);
  for (std::size_t t = 0; t < r.frames.size(); ++t) write_pgm(out / layout::frame_file(static_cast<int>(t)), r.frames[t]);
  Json offsets = Json::array();
  for (const auto& o : r.registration.offsets) offsets.push_back({o.x, o.y});
  Json flagged = Json::array();
  for (bool b : r.registration.flagged) flagged.push_back(b);
  write_json_file(out / "registration.json", {{"reference", r.registration.reference},
                                              {"first_frame", r.first_frame},
                                              {"frames", r.frames.size()},
                                              {"offsets", offsets},
                                              {"confidence", r.registration.confidence},
                                              {"flagged", flagged},
                                              {"contrast_warnings", r.contrast_warnings}});
}

PreprocessResult read_preprocessed(const fs::path& dir) {
  const fs::path in = dir / "preprocessed";
  const Json j = read_json_file(in / "registration.json");
  PreprocessResult r;
  r.first_frame = j.at("first_frame").get<int>();
  r.registration.reference = j.at("reference").get<int>();
  for (const auto& o : j.at("offsets")) r.registration.offsets.push_back({o[0].get<double>(), o[1].get<double>()});
  r.registration.confidence = j.at("confidence").get<std::vector<double>>();
  for (const auto& b : j.at("flagged")) r.registration.flagged.push_back(b.get<bool>());
  r.contrast_warnings = j.at("contrast_warnings").get<std::vector<int>>();
  const int n = j.at("frames").get<int>();
  for (int t = 0; t < n; ++t) r.frames.push_back(read_pgm(in / layout::frame_file(t)));
  return r;
}

}  // namespace oatp::prep
