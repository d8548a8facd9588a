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

// Reference external segmenter: the builtin region grower behind the
// stdin/stdout contract of ExternalSegmenter.

#include <cstdio>
#include <iostream>

#include "oatp/segment.hpp"

int main() {
  std::ios::sync_with_stdio(false);
  try {
    oatp::Image img;
    oatp::PointI prompt;
    int n = 0;
    oatp::seg::read_segment_request(std::cin, img, prompt, n);
    const oatp::seg::BuiltinSegmenter seg;
    const auto cands = prompt.x < 0 && prompt.y < 0 && n == 0 ? seg.propose(img) : seg.segment_at(img, prompt, n);
    oatp::seg::write_segment_response(std::cout, cands);
    std::cout.flush();
    return std::cout ? 0 : 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "oatp_segment_ext: %s\n", e.what());
    return 2;
  }
}
