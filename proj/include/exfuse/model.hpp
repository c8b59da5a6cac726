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
#include <vector>

#include "exfuse/blocks.hpp"
#include "exfuse/config.hpp"
#include "exfuse/encoder.hpp"
#include "exfuse/labels.hpp"

namespace exfuse {

template <typename T>
struct ForwardOutputs {
  Tensor<T> seg_logits;                    // (n, classes, input, input)
  std::vector<Tensor<T>> ss_class_logits;  // one per stage when ss is on
  Tensor<T> ecre_aux_logits;               // defined for supervised ECRE variants
  Tensor<T> decoder_output;                // scores before the DAP head
};

// Encoder + residual fusion decoder with optional SS, LR, ECRE, SEB and DAP.
//
// Decoder, from the top level down:
//   y_4 = BR(GCN(x_4))
//   y_l = Upsample(y_{l+1}) + BR(GCN(r_l))       if l in levels
//   y_l = Upsample(y_{l+1})                      otherwise
// with r_l = x_l, or SEB(x_l, {x_m : m > l, m in levels}) when seb is on.
// The 4 -> 3 upsampling is the ECRE step when ecre is on. Two further x2
// upsamplings reach full resolution; the last emits classes (or classes*k^2
// feeding DAP) channels.
template <typename T>
class ExFuseModel {
 public:
  using Features = std::array<Tensor<T>, kStages>;

  ExFuseModel(ModelConfig config, std::uint64_t seed);
  ExFuseModel(const ExFuseModel&) = delete;
  ExFuseModel& operator=(const ExFuseModel&) = delete;

  ForwardOutputs<T> forward(const Tensor<T>& images, bool training);
  EncoderOutput<T> encode(const Tensor<T>& images, bool training) { return encoder_(images, training); }

  // Decoder only. `ecre_aux` receives the auxiliary logits when present.
  Tensor<T> decode(const Features& features, Tensor<T>* ecre_aux = nullptr) const;
  // One fusion step: y_level from y_{level+1} and the encoder features.
  Tensor<T> fuse_level(int level, const Tensor<T>& y_next, const Features& features,
                       Tensor<T>* ecre_aux = nullptr) const;
  // The residual term added at `level`, or an undefined tensor when the level is excluded.
  Tensor<T> level_residual(int level, const Features& features) const;

  // Named parameters and buffers; spans alias the model and stay valid for
  // its lifetime.
  StateDict<T> state();
  std::vector<Tensor<T>> parameters() { return trainable_parameters(state()); }

  const ModelConfig& config() const { return config_; }
  Encoder<T>& encoder() { return encoder_; }
  std::size_t decoder_output_channels() const { return config_.decoder_output_channels(); }

 private:
  Tensor<T> upsample(int level, const Tensor<T>& y, Tensor<T>* ecre_aux) const;
  Tensor<T> head(const Tensor<T>& y) const;

  ModelConfig config_;
  Encoder<T> encoder_;
  std::array<std::optional<GcnBlock<T>>, kStages> gcn_;
  std::array<std::optional<BoundaryRefine<T>>, kStages> refine_;
  std::array<std::optional<SemanticEmbeddingBranch<T>>, kStages> seb_;
  // up_[l] maps level l+2 to level l+1 (index 0: 2 -> 1).
  std::array<std::optional<Deconv2d<T>>, kStages - 1> up_;
  std::optional<ChannelResolutionEmbedding<T>> ecre_;
  std::optional<Deconv2d<T>> final_up1_;
  std::optional<Deconv2d<T>> final_up2_;
  std::optional<Conv2d<T>> classifier_;  // bilinear mode only
};

struct LossBreakdown {
  double main = 0;
  double ss = 0;    // unweighted sum over stages
  double ecre = 0;  // unweighted
  double total = 0;
};

// Per-image class presence (n, classes, 1, 1); ignore pixels never count.
template <typename T>
Tensor<T> presence_targets(const LabelMap& labels, std::size_t classes);

// Nearest-neighbour label subsampling by an integer factor, sampling the
// centre pixel of each factor x factor cell.
LabelMap downsample_labels(const LabelMap& labels, std::size_t factor);

// main CE + ss_weight * sum of SS presence losses + ecre_weight * ECRE CE.
template <typename T>
Tensor<T> total_loss(const ForwardOutputs<T>& outputs, const LabelMap& labels, const ModelConfig& config,
                     LossBreakdown* breakdown = nullptr);

// Class scores used for prediction; with flip_average, the mean of the scores
// of the image and the un-flipped scores of its mirror.
template <typename T>
Tensor<T> predict_scores(ExFuseModel<T>& model, const Tensor<T>& images, bool flip_average);

// Arg-max over channels; ties resolve to the lowest class index.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores);

template <typename T>
LabelMap predict(ExFuseModel<T>& model, const Tensor<T>& images, bool flip_average);

}  // namespace exfuse
