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

#include "exfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace exfuse {
namespace {

double central_difference(const ScalarFn& f, Tensor<double>& x, std::size_t i, double eps) {
  auto values = x.data();
  const double saved = values[i];
  values[i] = saved + eps;
  const double plus = f(x);
  values[i] = saved - eps;
  const double minus = f(x);
  values[i] = saved;
  return (plus - minus) / (2.0 * eps);
}

}  // namespace

Tensor<double> finite_diff_grad(const ScalarFn& f, Tensor<double> x, double eps) {
  NoGradGuard no_grad;
  std::vector<double> grad(x.numel());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = central_difference(f, x, i, eps);
  return Tensor<double>(x.shape(), std::move(grad));
}

std::vector<double> finite_diff_grad(const ScalarFn& f, Tensor<double> x, std::span<const std::size_t> indices,
                                     double eps) {
  NoGradGuard no_grad;
  std::vector<double> grad;
  grad.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= x.numel()) throw ShapeError("finite_diff_grad: index out of range");
    grad.push_back(central_difference(f, x, i, eps));
  }
  return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

}  // namespace exfuse
