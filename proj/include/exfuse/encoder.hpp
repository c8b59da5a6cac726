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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "exfuse/blocks.hpp"
#include "exfuse/nn.hpp"

namespace exfuse {

inline constexpr std::size_t kStages = 4;

// Depth and width of the four encoder stages.
struct StagePlan {
  std::array<std::size_t, kStages> blocks{2, 2, 4, 2};
  std::array<std::size_t, kStages> widths{16, 24, 32, 48};
  std::size_t stem_width = 16;

  void validate() const;
  bool operator==(const StagePlan&) const = default;
};

// Baseline allocation and its rearranged counterpart (more depth in the early
// stages, widths tuned so the parameter count stays within 10%).
StagePlan baseline_plan();
StagePlan rearranged_plan();

// Pre-activation residual block:
//   conv3x3(relu(bn(conv3x3(relu(bn(x)))))) + shortcut(x)
// with a strided 1x1 projection when the width or stride changes.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t c_in, std::size_t width, int stride, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void collect(const std::string& prefix, StateDict<T>& out);

  bool has_projection() const { return projection.has_value(); }

  BatchNorm2d<T> bn1;
  Conv2d<T> conv1;
  BatchNorm2d<T> bn2;
  Conv2d<T> conv2;
  std::optional<Conv2d<T>> projection;
};

template <typename T>
struct EncoderOutput {
  // Features handed to the decoder, strides {4, 8, 16, 32}. These are the
  // supervision-head taps when semantic supervision is attached.
  std::array<Tensor<T>, kStages> features;
  std::array<Tensor<T>, kStages> stage_outputs;
  std::vector<Tensor<T>> class_logits;  // one per stage when supervised
};

// Stem (3x3 conv stride 2, BN, ReLU, 2x2 max-reduce) followed by four
// residual stages. Stage 1 keeps the stride-4 resolution of the stem; every
// later stage halves it. Pre-activation chains leave stage outputs
// unnormalized, so each stage hands relu(bn(h)) to the decoder and to the
// supervision head while the next stage continues from h.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const StagePlan& plan, Rng& rng);

  // Adds a semantic supervision head to every stage tail. tap_width 0 keeps
  // each stage's own width.
  void attach_semantic_supervision(std::size_t classes, std::size_t tap_width, Rng& rng);
  bool supervised() const { return !heads_.empty(); }

  EncoderOutput<T> operator()(const Tensor<T>& images, bool training);
  void collect(const std::string& prefix, StateDict<T>& out);

  // Channel count of each decoder-facing feature.
  std::array<std::size_t, kStages> feature_channels() const;
  const StagePlan& plan() const { return plan_; }
  std::vector<std::vector<ResidualBlock<T>>>& stages() { return stages_; }
  std::vector<SemanticSupervisionHead<T>>& heads() { return heads_; }

 private:
  StagePlan plan_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  std::vector<BatchNorm2d<T>> tail_bn_;  // closes each stage: relu(bn(h))
  std::vector<SemanticSupervisionHead<T>> heads_;
};

}  // namespace exfuse
