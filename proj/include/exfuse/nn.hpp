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
#include <random>
#include <span>
#include <string>
#include <vector>

#include "exfuse/ops.hpp"
#include "exfuse/tensor.hpp"

namespace exfuse {

using Rng = std::mt19937_64;

// One named slot of model state. `values` aliases model storage; `parameter`
// is defined only for trainable entries (BN running statistics are not).
template <typename T>
struct StateEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::span<T> values;
  Tensor<T> parameter;

  bool trainable() const { return parameter.defined(); }
};

template <typename T>
using StateDict = std::vector<StateEntry<T>>;

template <typename T>
std::vector<Tensor<T>> trainable_parameters(const StateDict<T>& state);

template <typename T>
std::size_t parameter_count(const StateDict<T>& state);

// Zero-mean normal with std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng);
// Zero-mean normal with a fixed standard deviation, as a trainable leaf.
template <typename T>
Tensor<T> gaussian(Shape shape, double stddev, Rng& rng);

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer has no bias
  int stride = 1;
  Pad2 pad;

  Conv2d() = default;
  Conv2d(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, int stride_, Pad2 pad_, bool with_bias,
         Rng& rng);
  // Square kernel with size-preserving padding at stride 1.
  static Conv2d same(std::size_t c_in, std::size_t c_out, std::size_t k, bool with_bias, Rng& rng) {
    const int p = static_cast<int>(k / 2);
    return Conv2d(c_in, c_out, k, k, 1, Pad2(p), with_bias, rng);
  }

  std::size_t out_channels() const { return weight.shape().n; }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, StateDict<T>& out);
};

template <typename T>
struct Deconv2d {
  Tensor<T> weight;  // (c_in, c_out, k, k)
  Tensor<T> bias;
  int stride = 2;
  Pad2 pad;

  Deconv2d() = default;
  Deconv2d(std::size_t c_in, std::size_t c_out, std::size_t k, int stride_, Pad2 pad_, bool with_bias, Rng& rng);
  // Exact x2 upsampling (kernel 4, stride 2, pad 1).
  static Deconv2d upsample2x(std::size_t c_in, std::size_t c_out, bool with_bias, Rng& rng) {
    return Deconv2d(c_in, c_out, 4, 2, Pad2(1), with_bias, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return deconv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, StateDict<T>& out);
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> state;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, T gamma_init = T{1});

  Tensor<T> operator()(const Tensor<T>& x, bool training) { return batch_norm(x, gamma, beta, state, training); }
  void collect(const std::string& prefix, StateDict<T>& out);
};

}  // namespace exfuse
