/* Copyright 2026 The ExFuse-CPP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "exfuse/tensor.hpp"

namespace exfuse::testing {

// Literal transcription of the averaging rule: ascending (l, m), zero outside
// the image, divisor k^2.
inline Tensor<double> dap_oracle(const Tensor<double>& x, int k, std::size_t classes) {
  const Shape s = x.shape();
  Tensor<double> out(Shape{s.n, classes, s.h, s.w});
  const long half = k / 2;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < classes; ++c)
      for (long i = 0; i < long(s.h); ++i)
        for (long j = 0; j < long(s.w); ++j) {
          double acc = 0;
          for (long l = 0; l < k; ++l)
            for (long m = 0; m < k; ++m) {
              const long y = i + l - half, xx = j + m - half;
              if (y < 0 || xx < 0 || y >= long(s.h) || xx >= long(s.w)) continue;
              acc += x.at(n, std::size_t(l * k + m) * classes + c, y, xx);
            }
          out.at(n, c, i, j) = acc / double(k * k);
        }
  return out;
}

}  // namespace exfuse::testing
