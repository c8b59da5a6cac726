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

#include "exfuse/model.hpp"

namespace exfuse {

namespace {
// Score layers start near zero so the first loss is close to log(classes).
constexpr double kHeadInitStd = 0.01;
}  // namespace

template <typename T>
ExFuseModel<T>::ExFuseModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  encoder_ = Encoder<T>(config_.active_plan(), rng);
  if (config_.ss) encoder_.attach_semantic_supervision(config_.classes, config_.ss_tap_width, rng);

  const auto channels = encoder_.feature_channels();
  const std::size_t width = config_.decoder_width;
  for (int level = 1; level <= 4; ++level) {
    if (!config_.uses_level(level)) continue;
    const auto idx = static_cast<std::size_t>(level - 1);
    if (config_.seb && level < 4) {
      std::vector<std::size_t> highs;
      for (int m : config_.levels)
        if (m > level) highs.push_back(channels[static_cast<std::size_t>(m - 1)]);
      seb_[idx].emplace(channels[idx], highs, rng);
    }
    gcn_[idx].emplace(channels[idx], width, config_.gcn_kernel, rng);
    refine_[idx].emplace(width, rng);
  }
  for (int level = 1; level <= 3; ++level) {
    if (level == 3 && config_.ecre) {
      ecre_.emplace(width, width, config_.classes, config_.ecre_variant, rng);
    } else if (config_.upsample_kind == UpsampleKind::deconv) {
      up_[static_cast<std::size_t>(level - 1)] = Deconv2d<T>::upsample2x(width, width, false, rng);
    }
  }
  const std::size_t out_channels = config_.decoder_output_channels();
  if (config_.upsample_kind == UpsampleKind::deconv) {
    final_up1_ = Deconv2d<T>::upsample2x(width, width, false, rng);
    final_up2_ = Deconv2d<T>::upsample2x(width, out_channels, true, rng);
    final_up2_->weight = gaussian<T>(final_up2_->weight.shape(), kHeadInitStd, rng);
  } else {
    classifier_ = Conv2d<T>::same(width, out_channels, 1, true, rng);
    classifier_->weight = gaussian<T>(classifier_->weight.shape(), kHeadInitStd, rng);
  }
}

template <typename T>
Tensor<T> ExFuseModel<T>::upsample(int level, const Tensor<T>& y, Tensor<T>* ecre_aux) const {
  if (level == 3 && ecre_) {
    EcreOutput<T> out = (*ecre_)(y);
    if (ecre_aux) *ecre_aux = out.aux_logits;
    return out.upsampled;
  }
  const auto& deconv = up_[static_cast<std::size_t>(level - 1)];
  return deconv ? (*deconv)(y) : bilinear_upsample(y, 2);
}

template <typename T>
Tensor<T> ExFuseModel<T>::level_residual(int level, const Features& features) const {
  if (!config_.uses_level(level)) return {};
  const auto idx = static_cast<std::size_t>(level - 1);
  Tensor<T> r = features[idx];
  if (seb_[idx]) {
    std::vector<Tensor<T>> highs;
    for (int m : config_.levels)
      if (m > level) highs.push_back(features[static_cast<std::size_t>(m - 1)]);
    r = (*seb_[idx])(r, highs);
  }
  return (*refine_[idx])((*gcn_[idx])(r));
}

template <typename T>
Tensor<T> ExFuseModel<T>::fuse_level(int level, const Tensor<T>& y_next, const Features& features,
                                     Tensor<T>* ecre_aux) const {
  if (level < 1 || level > 3) throw ShapeError("fuse_level: level must be 1, 2 or 3");
  Tensor<T> up = upsample(level, y_next, ecre_aux);
  Tensor<T> residual = level_residual(level, features);
  if (!residual.defined()) return up;
  if (up.shape() != residual.shape()) {
    throw ShapeError("fuse_level " + std::to_string(level) + ": upsampled " + up.shape().str() +
                     " does not match residual " + residual.shape().str());
  }
  return add(up, residual);
}

template <typename T>
Tensor<T> ExFuseModel<T>::head(const Tensor<T>& y) const {
  if (classifier_) return (*classifier_)(bilinear_upsample(bilinear_upsample(y, 2), 2));
  return (*final_up2_)((*final_up1_)(y));
}

template <typename T>
Tensor<T> ExFuseModel<T>::decode(const Features& features, Tensor<T>* ecre_aux) const {
  Tensor<T> y = level_residual(4, features);
  for (int level = 3; level >= 1; --level) y = fuse_level(level, y, features, ecre_aux);
  return head(y);
}

template <typename T>
ForwardOutputs<T> ExFuseModel<T>::forward(const Tensor<T>& images, bool training) {
  const Shape s = images.shape();
  if (s.h != config_.input_size || s.w != config_.input_size) {
    throw ShapeError("model built for " + std::to_string(config_.input_size) + "px inputs, got " + s.str());
  }
  EncoderOutput<T> enc = encoder_(images, training);
  ForwardOutputs<T> out;
  out.ss_class_logits = std::move(enc.class_logits);
  out.decoder_output = decode(enc.features, &out.ecre_aux_logits);
  out.seg_logits =
      config_.dap ? dap_forward(out.decoder_output, config_.dap_k, config_.classes) : out.decoder_output;
  return out;
}

template <typename T>
StateDict<T> ExFuseModel<T>::state() {
  StateDict<T> out;
  encoder_.collect("encoder", out);
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::string prefix = "decoder.level" + std::to_string(i + 1);
    if (seb_[i]) seb_[i]->collect(prefix + ".seb", out);
    if (gcn_[i]) gcn_[i]->collect(prefix + ".gcn", out);
    if (refine_[i]) refine_[i]->collect(prefix + ".refine", out);
  }
  for (std::size_t i = 0; i < up_.size(); ++i)
    if (up_[i]) up_[i]->collect("decoder.up" + std::to_string(i + 2) + "to" + std::to_string(i + 1), out);
  if (ecre_) ecre_->collect("decoder.ecre", out);
  if (final_up1_) final_up1_->collect("decoder.final_up1", out);
  if (final_up2_) final_up2_->collect("decoder.final_up2", out);
  if (classifier_) classifier_->collect("decoder.classifier", out);
  return out;
}

template <typename T>
Tensor<T> presence_targets(const LabelMap& labels, std::size_t classes) {
  Tensor<T> targets(Shape{labels.n, classes, 1, 1});
  const std::size_t plane = labels.h * labels.w;
  for (std::size_t b = 0; b < labels.n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t y = labels.data[b * plane + p];
      if (y >= 0 && static_cast<std::size_t>(y) < classes) targets.at(b, static_cast<std::size_t>(y), 0, 0) = T{1};
    }
  return targets;
}

LabelMap downsample_labels(const LabelMap& labels, std::size_t factor) {
  if (factor == 0 || labels.h % factor != 0 || labels.w % factor != 0) {
    throw ShapeError("downsample_labels: factor must divide the label size");
  }
  LabelMap out(labels.n, labels.h / factor, labels.w / factor);
  for (std::size_t b = 0; b < labels.n; ++b)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out.at(b, y, x) = labels.at(b, y * factor + factor / 2, x * factor + factor / 2);
  return out;
}

template <typename T>
Tensor<T> total_loss(const ForwardOutputs<T>& outputs, const LabelMap& labels, const ModelConfig& config,
                     LossBreakdown* breakdown) {
  Tensor<T> main = softmax_cross_entropy(outputs.seg_logits, labels);
  Tensor<T> total = main;
  LossBreakdown parts;
  parts.main = static_cast<double>(main.item());
  if (config.ss) {
    if (outputs.ss_class_logits.size() != kStages) {
      throw GraphError("total_loss: semantic supervision enabled but " +
                       std::to_string(outputs.ss_class_logits.size()) + " auxiliary outputs present");
    }
    const Tensor<T> targets = presence_targets<T>(labels, config.classes);
    Tensor<T> ss_sum = sigmoid_binary_cross_entropy(outputs.ss_class_logits[0], targets);
    for (std::size_t s = 1; s < kStages; ++s)
      ss_sum = add(ss_sum, sigmoid_binary_cross_entropy(outputs.ss_class_logits[s], targets));
    parts.ss = static_cast<double>(ss_sum.item());
    if (config.ss_weight != 0) total = add(total, scale(ss_sum, static_cast<T>(config.ss_weight)));
  }
  if (config.ecre && config.ecre_variant != EcreVariant::shuffle_only) {
    if (!outputs.ecre_aux_logits.defined()) {
      throw GraphError("total_loss: ECRE supervision enabled but no auxiliary logits present");
    }
    const std::size_t factor = labels.h / outputs.ecre_aux_logits.shape().h;
    Tensor<T> aux = softmax_cross_entropy(outputs.ecre_aux_logits, downsample_labels(labels, factor));
    parts.ecre = static_cast<double>(aux.item());
    if (config.ecre_weight != 0) total = add(total, scale(aux, static_cast<T>(config.ecre_weight)));
  }
  parts.total = static_cast<double>(total.item());
  if (breakdown) *breakdown = parts;
  return total;
}

template <typename T>
Tensor<T> predict_scores(ExFuseModel<T>& model, const Tensor<T>& images, bool flip_average) {
  NoGradGuard no_grad;
  Tensor<T> scores = model.forward(images, false).seg_logits;
  if (!flip_average) return scores;
  Tensor<T> mirrored = flip_horizontal(model.forward(flip_horizontal(images), false).seg_logits);
  return scale(add(scores, mirrored), T(0.5));
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  const Shape s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  const std::size_t plane = s.plane();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const T* z = scores.values().data() + b * s.c * plane + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c; ++c)
        if (z[c * plane] > z[best * plane]) best = c;
      out.data[b * plane + p] = static_cast<std::int32_t>(best);
    }
  return out;
}

template <typename T>
LabelMap predict(ExFuseModel<T>& model, const Tensor<T>& images, bool flip_average) {
  return argmax_labels(predict_scores(model, images, flip_average));
}

template class ExFuseModel<float>;
template class ExFuseModel<double>;
template Tensor<float> presence_targets(const LabelMap&, std::size_t);
template Tensor<double> presence_targets(const LabelMap&, std::size_t);
template Tensor<float> total_loss(const ForwardOutputs<float>&, const LabelMap&, const ModelConfig&, LossBreakdown*);
template Tensor<double> total_loss(const ForwardOutputs<double>&, const LabelMap&, const ModelConfig&, LossBreakdown*);
template Tensor<float> predict_scores(ExFuseModel<float>&, const Tensor<float>&, bool);
template Tensor<double> predict_scores(ExFuseModel<double>&, const Tensor<double>&, bool);
template LabelMap argmax_labels(const Tensor<float>&);
template LabelMap argmax_labels(const Tensor<double>&);
template LabelMap predict(ExFuseModel<float>&, const Tensor<float>&, bool);
template LabelMap predict(ExFuseModel<double>&, const Tensor<double>&, bool);

}  // namespace exfuse
