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

#include <span>
#include <vector>

#include "exfuse/labels.hpp"
#include "exfuse/tensor.hpp"

namespace exfuse {

// Zero padding per spatial axis.
struct Pad2 {
  int h = 0;
  int w = 0;
  Pad2(int both = 0) : h(both), w(both) {}  // NOLINT(google-explicit-constructor)
  Pad2(int ph, int pw) : h(ph), w(pw) {}
};

// Cross-correlation. `weight` is (c_out, c_in, kh, kw); `bias` may be an
// undefined tensor, otherwise (1, c_out, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 Pad2 pad);

// Transposed convolution: the input-gradient map of conv2d with the same
// weight. `weight` is (c_in, c_out, kh, kw) where c_in matches x; output
// spatial size is stride*(h-1)+kh-2*pad.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                   Pad2 pad);

// Integer-factor bilinear resize with half-pixel (align_corners=false) centers.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor);

// (n, c*r*r, h, w) -> (n, c, r*h, r*w), out[c, r*i+a, r*j+b] = x[c*r*r+a*r+b, i, j].
template <typename T>
Tensor<T> sub_pixel_shuffle(const Tensor<T>& x, int r);

// Exact inverse of sub_pixel_shuffle.
template <typename T>
Tensor<T> sub_pixel_unshuffle(const Tensor<T>& x, int r);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

// Per-channel normalization. In training mode uses batch statistics and
// updates `state`; otherwise uses the running statistics. gamma/beta are
// (1, c, 1, 1).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel);
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x);

// Mean negative log-softmax over pixels whose label is not `ignore_label`.
// Returns zero (with zero gradient) when every pixel is ignored.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const LabelMap& labels,
                                int ignore_label = kIgnoreLabel);

// Mean element-wise logistic loss against 0/1 targets of the same shape.
template <typename T>
Tensor<T> sigmoid_binary_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets);

// Elementwise cast into a fresh leaf of another precision.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> values(x.values().begin(), x.values().end());
  return Tensor<To>(x.shape(), std::move(values));
}

}  // namespace exfuse
