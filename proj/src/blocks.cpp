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

#include "exfuse/blocks.hpp"

#include <bit>

namespace exfuse {

template <typename T>
GcnBlock<T>::GcnBlock(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng) : k_(k) {
  if (k == 0 || k % 2 == 0) throw ConfigError("gcn_block: kernel size must be odd, got " + std::to_string(k));
  const int p = static_cast<int>(k / 2);
  a_vertical = Conv2d<T>(c_in, c_out, k, 1, 1, Pad2(p, 0), false, rng);
  a_horizontal = Conv2d<T>(c_out, c_out, 1, k, 1, Pad2(0, p), true, rng);
  b_horizontal = Conv2d<T>(c_in, c_out, 1, k, 1, Pad2(0, p), false, rng);
  b_vertical = Conv2d<T>(c_out, c_out, k, 1, 1, Pad2(p, 0), true, rng);
}

template <typename T>
Tensor<T> GcnBlock<T>::operator()(const Tensor<T>& x) const {
  return add(a_horizontal(a_vertical(x)), b_vertical(b_horizontal(x)));
}

template <typename T>
void GcnBlock<T>::collect(const std::string& prefix, StateDict<T>& out) {
  a_vertical.collect(prefix + ".a_vertical", out);
  a_horizontal.collect(prefix + ".a_horizontal", out);
  b_horizontal.collect(prefix + ".b_horizontal", out);
  b_vertical.collect(prefix + ".b_vertical", out);
}

template <typename T>
BoundaryRefine<T>::BoundaryRefine(std::size_t channels, Rng& rng)
    : conv1(Conv2d<T>::same(channels, channels, 3, true, rng)), conv2(Conv2d<T>::same(channels, channels, 3, true, rng)) {}

template <typename T>
Tensor<T> BoundaryRefine<T>::operator()(const Tensor<T>& x) const {
  return add(x, conv2(relu(conv1(x))));
}

template <typename T>
void BoundaryRefine<T>::collect(const std::string& prefix, StateDict<T>& out) {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
}

template <typename T>
SemanticSupervisionHead<T>::SemanticSupervisionHead(std::size_t c_in, std::size_t tap_channels, std::size_t classes,
                                                    Rng& rng)
    : conv1(Conv2d<T>::same(c_in, tap_channels, 3, false, rng)),
      bn1(tap_channels),
      conv2(Conv2d<T>::same(tap_channels, tap_channels, 3, false, rng)),
      bn2(tap_channels),
      classifier(Conv2d<T>::same(tap_channels, classes, 1, true, rng)) {}

template <typename T>
SemanticSupervisionOutput<T> SemanticSupervisionHead<T>::operator()(const Tensor<T>& x, bool training) {
  Tensor<T> h = relu(bn1(conv1(x), training));
  Tensor<T> tap = relu(bn2(conv2(h), training));
  return {classifier(global_avg_pool(tap)), tap};
}

template <typename T>
void SemanticSupervisionHead<T>::collect(const std::string& prefix, StateDict<T>& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  classifier.collect(prefix + ".classifier", out);
}

int upsample_ratio(std::size_t low, std::size_t high) {
  if (high == 0 || low < high || low % high != 0 || !std::has_single_bit(low / high)) {
    throw ShapeError("non-integer or non power-of-two upsample ratio " + std::to_string(low) + "/" +
                     std::to_string(high));
  }
  return static_cast<int>(low / high);
}

template <typename T>
SemanticEmbeddingBranch<T>::SemanticEmbeddingBranch(std::size_t c_low, const std::vector<std::size_t>& c_highs,
                                                    Rng& rng)
    : low_conv(Conv2d<T>::same(c_low, c_low, 3, true, rng)) {
  for (std::size_t c : c_highs) high_convs.push_back(Conv2d<T>::same(c, c_low, 3, false, rng));
}

template <typename T>
Tensor<T> SemanticEmbeddingBranch<T>::operator()(const Tensor<T>& low, const std::vector<Tensor<T>>& highs) const {
  if (highs.size() != high_convs.size()) {
    throw ShapeError("seb_forward: expected " + std::to_string(high_convs.size()) + " high-level inputs, got " +
                     std::to_string(highs.size()));
  }
  Tensor<T> out = low_conv(low);
  for (std::size_t i = 0; i < highs.size(); ++i) {
    const int ry = upsample_ratio(low.shape().h, highs[i].shape().h);
    const int rx = upsample_ratio(low.shape().w, highs[i].shape().w);
    if (ry != rx) throw ShapeError("seb_forward: anisotropic upsample ratio");
    out = mul(out, bilinear_upsample(high_convs[i](highs[i]), ry));
  }
  return out;
}

template <typename T>
void SemanticEmbeddingBranch<T>::collect(const std::string& prefix, StateDict<T>& out) {
  low_conv.collect(prefix + ".low", out);
  for (std::size_t i = 0; i < high_convs.size(); ++i) high_convs[i].collect(prefix + ".high" + std::to_string(i), out);
}

template <typename T>
EcreOutput<T> ecre_forward(const Tensor<T>& x, int r, const Conv2d<T>& classifier) {
  Tensor<T> up = sub_pixel_shuffle(x, r);
  return {up, classifier(up)};
}

std::string to_string(EcreVariant v) {
  switch (v) {
    case EcreVariant::ecre:
      return "ecre";
    case EcreVariant::deconv_supervised:
      return "deconv_supervised";
    case EcreVariant::shuffle_only:
      return "shuffle_only";
  }
  return "ecre";
}

EcreVariant parse_ecre_variant(const std::string& s) {
  if (s == "ecre") return EcreVariant::ecre;
  if (s == "deconv_supervised") return EcreVariant::deconv_supervised;
  if (s == "shuffle_only") return EcreVariant::shuffle_only;
  throw ConfigError("unknown ecre_variant '" + s + "' (expected ecre, deconv_supervised, shuffle_only)");
}

template <typename T>
ChannelResolutionEmbedding<T>::ChannelResolutionEmbedding(std::size_t c_in, std::size_t c_out, std::size_t classes,
                                                          EcreVariant variant, Rng& rng)
    : variant_(variant) {
  const auto rr = static_cast<std::size_t>(kRatio * kRatio);
  if (variant == EcreVariant::deconv_supervised) {
    deconv = Deconv2d<T>::upsample2x(c_in, c_out, false, rng);
  } else {
    expand = Conv2d<T>::same(c_in, c_out * rr, 3, true, rng);
  }
  if (supervised()) classifier = Conv2d<T>::same(c_out, classes, 1, true, rng);
}

template <typename T>
EcreOutput<T> ChannelResolutionEmbedding<T>::operator()(const Tensor<T>& x) const {
  switch (variant_) {
    case EcreVariant::ecre:
      return ecre_forward(expand(x), kRatio, classifier);
    case EcreVariant::shuffle_only:
      return {sub_pixel_shuffle(expand(x), kRatio), Tensor<T>()};
    case EcreVariant::deconv_supervised: {
      Tensor<T> up = deconv(x);
      return {up, classifier(up)};
    }
  }
  return {};
}

template <typename T>
void ChannelResolutionEmbedding<T>::collect(const std::string& prefix, StateDict<T>& out) {
  if (variant_ == EcreVariant::deconv_supervised) {
    deconv.collect(prefix + ".deconv", out);
  } else {
    expand.collect(prefix + ".expand", out);
  }
  if (supervised()) classifier.collect(prefix + ".classifier", out);
}

template <typename T>
Tensor<T> dap_forward(const Tensor<T>& x, int k, std::size_t classes) {
  if (k < 1 || k % 2 == 0) throw ShapeError("dap_forward: window k must be odd, got " + std::to_string(k));
  const Shape xs = x.shape();
  const auto kk = static_cast<std::size_t>(k) * static_cast<std::size_t>(k);
  if (classes == 0 || xs.c != classes * kk) {
    throw ShapeError("dap_forward: input has " + std::to_string(xs.c) + " channels, expected classes * k^2 = " +
                     std::to_string(classes * kk));
  }
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto height = static_cast<std::ptrdiff_t>(xs.h);
  const auto width = static_cast<std::ptrdiff_t>(xs.w);
  const T divisor = static_cast<T>(kk);
  Shape out_shape{xs.n, classes, xs.h, xs.w};
  std::vector<T> values(out_shape.numel());
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t cls = 0; cls < classes; ++cls)
      for (std::ptrdiff_t i = 0; i < height; ++i)
        for (std::ptrdiff_t j = 0; j < width; ++j) {
          T acc{0};
          for (std::ptrdiff_t l = 0; l < k; ++l) {
            const std::ptrdiff_t y = i + l - half;
            if (y < 0 || y >= height) continue;
            for (std::ptrdiff_t m = 0; m < k; ++m) {
              const std::ptrdiff_t xx = j + m - half;
              if (xx < 0 || xx >= width) continue;
              const auto group = static_cast<std::size_t>(l * k + m);
              acc += x.at(b, group * classes + cls, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
            }
          }
          values[((b * classes + cls) * xs.h + static_cast<std::size_t>(i)) * xs.w + static_cast<std::size_t>(j)] =
              acc / divisor;
        }
  return Tensor<T>::make_result(
      "dap_forward", out_shape, std::move(values), {x}, [xs, k, classes, half, divisor](detail::Node<T>& self) {
        auto* g = grad_sink(*self.parents[0]);
        if (!g) return;
        const auto height = static_cast<std::ptrdiff_t>(xs.h);
        const auto width = static_cast<std::ptrdiff_t>(xs.w);
        for (std::size_t b = 0; b < xs.n; ++b)
          for (std::size_t cls = 0; cls < classes; ++cls)
            for (std::ptrdiff_t i = 0; i < height; ++i)
              for (std::ptrdiff_t j = 0; j < width; ++j) {
                const T go = self.grad[((b * classes + cls) * xs.h + static_cast<std::size_t>(i)) * xs.w +
                                       static_cast<std::size_t>(j)] /
                             divisor;
                for (std::ptrdiff_t l = 0; l < k; ++l) {
                  const std::ptrdiff_t y = i + l - half;
                  if (y < 0 || y >= height) continue;
                  for (std::ptrdiff_t m = 0; m < k; ++m) {
                    const std::ptrdiff_t xx = j + m - half;
                    if (xx < 0 || xx >= width) continue;
                    const auto c = static_cast<std::size_t>(l * k + m) * classes + cls;
                    (*g)[((b * xs.c + c) * xs.h + static_cast<std::size_t>(y)) * xs.w + static_cast<std::size_t>(xx)] +=
                        go;
                  }
                }
              }
      });
}

template class GcnBlock<float>;
template class GcnBlock<double>;
template class BoundaryRefine<float>;
template class BoundaryRefine<double>;
template class SemanticSupervisionHead<float>;
template class SemanticSupervisionHead<double>;
template class SemanticEmbeddingBranch<float>;
template class SemanticEmbeddingBranch<double>;
template class ChannelResolutionEmbedding<float>;
template class ChannelResolutionEmbedding<double>;
template EcreOutput<float> ecre_forward(const Tensor<float>&, int, const Conv2d<float>&);
template EcreOutput<double> ecre_forward(const Tensor<double>&, int, const Conv2d<double>&);
template Tensor<float> dap_forward(const Tensor<float>&, int, std::size_t);
template Tensor<double> dap_forward(const Tensor<double>&, int, std::size_t);

}  // namespace exfuse
