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

#include <vector>

#include "exfuse/tensor.hpp"

namespace exfuse {

// SGD with classical momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, T momentum, T weight_decay);

  void step(T lr);
  void zero_grad();

  const std::vector<Tensor<T>>& params() const { return params_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  T momentum_;
  T weight_decay_;
};

// Poly schedule: base_lr * (1 - iter / max_iter)^power.
double poly_learning_rate(double base_lr, std::size_t iter, std::size_t max_iter, double power);

}  // namespace exfuse
