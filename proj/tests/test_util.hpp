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

#include <random>
#include <vector>

#include "exfuse/tensor.hpp"
#include "exfuse/nn.hpp"

namespace exfuse::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(u(rng));
  Tensor<T> t(shape, std::move(v));
  if (grad) t.set_requires_grad(true);
  return t;
}

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.values()[i]) - double(b.values()[i])));
  return m;
}

}  // namespace exfuse::testing
