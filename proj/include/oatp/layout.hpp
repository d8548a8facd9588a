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

// On-disk naming shared by every stage.
//
//   <root>/manifest.json
//   <root>/well_<i>/frame_<t>/q<q>_z<z>.pgm          raw quadrant z-stacks
//   <root>/well_<i>/gt/well_mask.pgm, cavities.json   ground truth
//   <root>/well_<i>/gt/<cavity>/cavity.pgm            cavity mask (crop)
//   <root>/well_<i>/gt/<cavity>/frame_<t>.pgm         organoid mask (crop)
//   <out>/well_<i>/preprocessed/frame_<t>.pgm, registration.json
//   <out>/segmentation/well_<i>/cavities.json
//   <out>/segmentation/well_<i>/<cavity>/frame_<t>.pgm, track.json
//   <out>/features/well_<i>.otfc (+ .json sidecar)
//
// Indices are zero-based and zero-padded to three digits.

#include <cstdio>
#include <string>

namespace oatp::layout {

inline std::string pad3(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

inline std::string well_dir(int well) { return "well_" + pad3(well); }
inline std::string frame_dir(int t) { return "frame_" + pad3(t); }
inline std::string frame_file(int t) { return "frame_" + pad3(t) + ".pgm"; }
inline std::string cavity_dir(int cavity) { return "cavity_" + pad3(cavity); }
inline std::string quadrant_file(int q, int z) {
  return "q" + std::to_string(q) + "_z" + std::to_string(z) + ".pgm";
}

}  // namespace oatp::layout
