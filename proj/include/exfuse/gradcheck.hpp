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

#include <functional>
#include <span>
#include <vector>

#include "exfuse/tensor.hpp"

namespace exfuse {

// Scalar function of the current contents of a tensor. The tensor is
// perturbed in place, so `f` may also reach it through a model that aliases it.
using ScalarFn = std::function<double(const Tensor<double>&)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
// element of x. Double precision only; x is restored afterwards.
Tensor<double> finite_diff_grad(const ScalarFn& f, Tensor<double> x, double eps = 1e-5);

// Same, restricted to the listed flat indices.
std::vector<double> finite_diff_grad(const ScalarFn& f, Tensor<double> x, std::span<const std::size_t> indices,
                                     double eps = 1e-5);

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|), the discrepancy relative
// to the gradient's scale. Zero when both vectors are identically zero.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace exfuse
