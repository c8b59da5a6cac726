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

#include "exfuse/nn.hpp"

#include <cmath>

namespace exfuse {
namespace {

std::vector<std::uint32_t> dims_of(const Shape& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

template <typename T>
void push_parameter(StateDict<T>& out, std::string name, Tensor<T> t, bool per_channel) {
  std::vector<std::uint32_t> dims =
      per_channel ? std::vector<std::uint32_t>{static_cast<std::uint32_t>(t.shape().c)} : dims_of(t.shape());
  out.push_back(StateEntry<T>{std::move(name), std::move(dims), t.data(), t});
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> trainable_parameters(const StateDict<T>& state) {
  std::vector<Tensor<T>> params;
  for (const auto& e : state)
    if (e.trainable()) params.push_back(e.parameter);
  return params;
}

template <typename T>
std::size_t parameter_count(const StateDict<T>& state) {
  std::size_t count = 0;
  for (const auto& e : state)
    if (e.trainable()) count += e.values.size();
  return count;
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> values(shape.numel());
  for (T& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
Tensor<T> gaussian(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape.numel());
  for (T& v : values) v = static_cast<T>(dist(rng));
  Tensor<T> t(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, int stride_, Pad2 pad_,
                  bool with_bias, Rng& rng)
    : weight(he_normal<T>(Shape{c_out, c_in, kh, kw}, c_in * kh * kw, rng)), stride(stride_), pad(pad_) {
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor<T>(Shape{1, c_out, 1, 1}).set_requires_grad(true);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, StateDict<T>& out) {
  push_parameter(out, prefix + ".weight", weight, false);
  if (bias.defined()) push_parameter(out, prefix + ".bias", bias, true);
}

template <typename T>
Deconv2d<T>::Deconv2d(std::size_t c_in, std::size_t c_out, std::size_t k, int stride_, Pad2 pad_, bool with_bias,
                      Rng& rng)
    : stride(stride_), pad(pad_) {
  // Each output pixel sees about c_in * (k / stride)^2 inputs.
  const std::size_t taps = std::max<std::size_t>(1, (k * k) / static_cast<std::size_t>(stride_ * stride_));
  weight = he_normal<T>(Shape{c_in, c_out, k, k}, c_in * taps, rng);
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor<T>(Shape{1, c_out, 1, 1}).set_requires_grad(true);
}

template <typename T>
void Deconv2d<T>::collect(const std::string& prefix, StateDict<T>& out) {
  push_parameter(out, prefix + ".weight", weight, false);
  if (bias.defined()) push_parameter(out, prefix + ".bias", bias, true);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, T gamma_init)
    : gamma(Shape{1, channels, 1, 1}, gamma_init), beta(Shape{1, channels, 1, 1}), state(channels) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, StateDict<T>& out) {
  push_parameter(out, prefix + ".gamma", gamma, true);
  push_parameter(out, prefix + ".beta", beta, true);
  const auto c = static_cast<std::uint32_t>(state.running_mean.size());
  out.push_back(StateEntry<T>{prefix + ".running_mean", {c}, state.running_mean, {}});
  out.push_back(StateEntry<T>{prefix + ".running_var", {c}, state.running_var, {}});
}

template std::vector<Tensor<float>> trainable_parameters(const StateDict<float>&);
template std::vector<Tensor<double>> trainable_parameters(const StateDict<double>&);
template std::size_t parameter_count(const StateDict<float>&);
template std::size_t parameter_count(const StateDict<double>&);
template Tensor<float> he_normal(Shape, std::size_t, Rng&);
template Tensor<double> he_normal(Shape, std::size_t, Rng&);
template Tensor<float> gaussian(Shape, double, Rng&);
template Tensor<double> gaussian(Shape, double, Rng&);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Deconv2d<float>;
template struct Deconv2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;

}  // namespace exfuse
