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

#include <cstdint>
#include <string>
#include <vector>

#include "exfuse/config.hpp"

namespace exfuse {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;  // number of compared gradient entries
};

// Finite-difference checks, in double precision, of every differentiable op
// and decoder block. Each case compares d/dθ sum(R * f(θ)) for a fixed random
// R against central differences, over all inputs and parameters.
std::vector<std::string> gradient_case_names();
GradCheckResult run_gradient_case(const std::string& name, std::uint64_t seed = 7);

// Smallest configuration the full model supports: 32x32 input, 2 classes,
// every mechanism on, at most 8 channels anywhere.
ModelConfig tiny_model_config();

// Gradient of the total training loss of the tiny model with respect to a
// sample of entries from every parameter tensor and the input image. A stem
// weight moves every pixel, so a large eps can step across a ReLU or max-pool
// switch somewhere; that shows up as an error proportional to eps.
GradCheckResult run_end_to_end_check(std::uint64_t seed = 7, std::size_t per_tensor = 3, double eps = 1e-5);

}  // namespace exfuse
