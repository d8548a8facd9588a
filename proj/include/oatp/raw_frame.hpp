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

#include <vector>

#include "oatp/image.hpp"

namespace oatp {

/// Four quadrants (TL, TR, BL, BR) times z_levels images of one time point.
struct RawFrameSet {
  int frame_index = 0;
  int z_levels = 0;
  int overlap = 0;
  std::vector<Image> images;  // index q * z_levels + z

  const Image& at(int quadrant, int z) const { return images[quadrant * z_levels + z]; }
};

}  // namespace oatp
