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

#include "exfuse/encoder.hpp"

namespace exfuse {

void StagePlan::validate() const {
  if (stem_width == 0) throw ConfigError("stage plan: stem width must be positive");
  for (std::size_t s = 0; s < kStages; ++s) {
    if (blocks[s] == 0 || widths[s] == 0) {
      throw ConfigError("stage plan: stage " + std::to_string(s + 1) + " needs positive depth and width");
    }
  }
}

StagePlan baseline_plan() { return StagePlan{{2, 2, 4, 2}, {16, 24, 32, 48}, 16}; }

StagePlan rearranged_plan() { return StagePlan{{3, 3, 2, 2}, {20, 28, 32, 48}, 16}; }

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t c_in, std::size_t width, int stride, Rng& rng)
    : bn1(c_in),
      conv1(c_in, width, 3, 3, stride, Pad2(1), false, rng),
      bn2(width),
      conv2(Conv2d<T>::same(width, width, 3, false, rng)) {
  if (c_in != width || stride != 1) projection = Conv2d<T>(c_in, width, 1, 1, stride, Pad2(0), false, rng);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x, bool training) {
  Tensor<T> h = conv1(relu(bn1(x, training)));
  h = conv2(relu(bn2(h, training)));
  return add(projection ? (*projection)(x) : x, h);
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, StateDict<T>& out) {
  bn1.collect(prefix + ".bn1", out);
  conv1.collect(prefix + ".conv1", out);
  bn2.collect(prefix + ".bn2", out);
  conv2.collect(prefix + ".conv2", out);
  if (projection) projection->collect(prefix + ".projection", out);
}

template <typename T>
Encoder<T>::Encoder(const StagePlan& plan, Rng& rng)
    : plan_(plan), stem_conv_(3, plan.stem_width, 3, 3, 2, Pad2(1), false, rng), stem_bn_(plan.stem_width) {
  plan.validate();
  std::size_t c_in = plan.stem_width;
  for (std::size_t s = 0; s < kStages; ++s) {
    std::vector<ResidualBlock<T>> stage;
    for (std::size_t b = 0; b < plan.blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      stage.emplace_back(c_in, plan.widths[s], stride, rng);
      c_in = plan.widths[s];
    }
    stages_.push_back(std::move(stage));
    tail_bn_.emplace_back(plan.widths[s]);
  }
}

template <typename T>
void Encoder<T>::attach_semantic_supervision(std::size_t classes, std::size_t tap_width, Rng& rng) {
  heads_.clear();
  for (std::size_t s = 0; s < kStages; ++s) {
    heads_.emplace_back(plan_.widths[s], tap_width == 0 ? plan_.widths[s] : tap_width, classes, rng);
  }
}

template <typename T>
EncoderOutput<T> Encoder<T>::operator()(const Tensor<T>& images, bool training) {
  if (images.shape().c != 3) throw ShapeError("encoder expects 3-channel images, got " + images.shape().str());
  EncoderOutput<T> out;
  Tensor<T> h = max_pool2d(relu(stem_bn_(stem_conv_(images), training)), 2);
  for (std::size_t s = 0; s < kStages; ++s) {
    for (auto& block : stages_[s]) h = block(h, training);
    out.stage_outputs[s] = h;
    const Tensor<T> tail = relu(tail_bn_[s](h, training));
    if (supervised()) {
      auto head = heads_[s](tail, training);
      out.features[s] = head.tap;
      out.class_logits.push_back(head.logits);
    } else {
      out.features[s] = tail;
    }
  }
  return out;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, StateDict<T>& out) {
  stem_conv_.collect(prefix + ".stem.conv", out);
  stem_bn_.collect(prefix + ".stem.bn", out);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b), out);
  for (std::size_t s = 0; s < tail_bn_.size(); ++s) tail_bn_[s].collect(prefix + ".stage" + std::to_string(s + 1) + ".tail_bn", out);
  for (std::size_t s = 0; s < heads_.size(); ++s) heads_[s].collect(prefix + ".ss" + std::to_string(s + 1), out);
}

template <typename T>
std::array<std::size_t, kStages> Encoder<T>::feature_channels() const {
  std::array<std::size_t, kStages> channels{};
  for (std::size_t s = 0; s < kStages; ++s) channels[s] = supervised() ? heads_[s].tap_channels() : plan_.widths[s];
  return channels;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace exfuse
