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

#include "oatp/image.hpp"

#include <cmath>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace oatp {

std::uint8_t to_u8(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 255.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

Image quantize8(const Image& img) {
  Image out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) out.values()[i] = to_u8(img.values()[i]);
  return out;
}

namespace {

void write_header(std::ostream& os, int w, int h) { os << "P5\n" << w << ' ' << h << "\n255\n"; }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

// Skips whitespace and '#' comments between header tokens.
int read_header_int(std::istream& is, const std::string& what) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(is, dummy);
    } else if (c != EOF && std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(is >> v)) throw IoError("malformed PGM header: " + what);
  return v;
}

}  // namespace

void write_pgm(std::ostream& os, const Image& img) {
  write_header(os, img.width(), img.height());
  std::vector<char> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = static_cast<char>(to_u8(img.values()[i]));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_pgm(std::ostream& os, const Mask& mask) {
  write_header(os, mask.width(), mask.height());
  std::vector<char> buf(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) buf[i] = static_cast<char>(mask.values()[i] ? 255 : 0);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  auto os = open_out(path);
  write_pgm(os, img);
  if (!os) throw IoError("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  auto os = open_out(path);
  write_pgm(os, mask);
  if (!os) throw IoError("write failed: " + path.string());
}

Image read_pgm(std::istream& is, const std::string& what) {
  std::string magic;
  if (!(is >> magic) || magic != "P5") throw IoError("not a binary PGM (P5): " + what);
  const int w = read_header_int(is, what);
  const int h = read_header_int(is, what);
  const int maxval = read_header_int(is, what);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PGM geometry/maxval: " + what);
  is.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PGM: " + what);
  Image img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.values()[i] = static_cast<float>(buf[i]);
  return img;
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return read_pgm(is, path.string());
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  const Image img = read_pgm(path);
  Mask m(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) m.values()[i] = img.values()[i] > 0.0f ? 1 : 0;
  return m;
}

}  // namespace oatp
