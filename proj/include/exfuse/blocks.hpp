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

#include <string>
#include <vector>

#include "exfuse/nn.hpp"

namespace exfuse {

// Global convolution block: two separable large-kernel paths,
// (k x 1 then 1 x k) + (1 x k then k x 1), size preserving, no nonlinearity.
template <typename T>
class GcnBlock {
 public:
  GcnBlock() = default;
  GcnBlock(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, StateDict<T>& out);

  std::size_t kernel() const { return k_; }
  Conv2d<T> a_vertical, a_horizontal;
  Conv2d<T> b_horizontal, b_vertical;

 private:
  std::size_t k_ = 0;
};

// x + conv3x3(relu(conv3x3(x))).
template <typename T>
class BoundaryRefine {
 public:
  BoundaryRefine() = default;
  BoundaryRefine(std::size_t channels, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, StateDict<T>& out);

  Conv2d<T> conv1, conv2;
};

template <typename T>
struct SemanticSupervisionOutput {
  Tensor<T> logits;  // (n, classes, 1, 1)
  Tensor<T> tap;     // output of the second conv stack, spatial size of the input
};

// Auxiliary classification head attached to an encoder stage:
// conv3x3-BN-ReLU, conv3x3-BN-ReLU (tap), global average pool, 1x1 classifier.
template <typename T>
class SemanticSupervisionHead {
 public:
  SemanticSupervisionHead() = default;
  SemanticSupervisionHead(std::size_t c_in, std::size_t tap_channels, std::size_t classes, Rng& rng);

  SemanticSupervisionOutput<T> operator()(const Tensor<T>& x, bool training);
  void collect(const std::string& prefix, StateDict<T>& out);

  std::size_t tap_channels() const { return conv2.out_channels(); }

  Conv2d<T> conv1;
  BatchNorm2d<T> bn1;
  Conv2d<T> conv2;
  BatchNorm2d<T> bn2;
  Conv2d<T> classifier;
};

// Semantic embedding branch: the low-level path (3x3 conv) multiplied
// element-wise by every high-level path (bias-free 3x3 conv, bilinear upsample to the
// low-level resolution).
template <typename T>
class SemanticEmbeddingBranch {
 public:
  SemanticEmbeddingBranch() = default;
  SemanticEmbeddingBranch(std::size_t c_low, const std::vector<std::size_t>& c_highs, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& low, const std::vector<Tensor<T>>& highs) const;
  void collect(const std::string& prefix, StateDict<T>& out);

  Conv2d<T> low_conv;
  std::vector<Conv2d<T>> high_convs;
};

// Integer power-of-two ratio between two spatial sizes; throws ShapeError otherwise.
int upsample_ratio(std::size_t low, std::size_t high);

template <typename T>
struct EcreOutput {
  Tensor<T> upsampled;
  Tensor<T> aux_logits;  // undefined for the unsupervised variant
};

// Parameter-free sub-pixel upsampling of x plus a 1x1 classifier on the
// result that carries an auxiliary segmentation loss.
template <typename T>
EcreOutput<T> ecre_forward(const Tensor<T>& x, int r, const Conv2d<T>& classifier);

enum class EcreVariant { ecre, deconv_supervised, shuffle_only };

std::string to_string(EcreVariant v);
EcreVariant parse_ecre_variant(const std::string& s);

// One x2 decoder upsampling step in any of the three ECRE ablation forms.
// The shuffle forms first widen the channels to c_out * r^2 with a 3x3 conv.
template <typename T>
class ChannelResolutionEmbedding {
 public:
  ChannelResolutionEmbedding() = default;
  ChannelResolutionEmbedding(std::size_t c_in, std::size_t c_out, std::size_t classes, EcreVariant variant,
                             Rng& rng);

  EcreOutput<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, StateDict<T>& out);

  EcreVariant variant() const { return variant_; }
  bool supervised() const { return variant_ != EcreVariant::shuffle_only; }
  static constexpr int kRatio = 2;

  Conv2d<T> expand;
  Deconv2d<T> deconv;
  Conv2d<T> classifier;

 private:
  EcreVariant variant_ = EcreVariant::ecre;
};

// Densely adjacent prediction. x has classes * k^2 channels arranged as k^2
// groups of `classes`, group g = l*k + m predicting the pixel offset
// (l - k/2, m - k/2). Output pixel (i, j) averages, with divisor k^2, the
// group-g scores found at (i + l - k/2, j + m - k/2); out-of-range positions
// contribute zero.
template <typename T>
Tensor<T> dap_forward(const Tensor<T>& x, int k, std::size_t classes);

}  // namespace exfuse
