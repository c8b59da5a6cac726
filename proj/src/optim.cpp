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

#include "exfuse/optim.hpp"

#include <cmath>

namespace exfuse {

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, T momentum, T weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T{0});
}

template <typename T>
void Sgd<T>::step(T lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& v = velocity_[k];
    auto values = p.data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * values[i];
      values[i] -= lr * v[i];
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double poly_learning_rate(double base_lr, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0) return base_lr;
  const double progress = static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * std::pow(std::max(0.0, 1.0 - progress), power);
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace exfuse
