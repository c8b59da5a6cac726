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

#include "exfuse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace exfuse {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Geometry of a cross-correlation from an (in_h, in_w) plane to (out_h, out_w).
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t kh = 0, kw = 0;
  std::size_t out_h = 0, out_w = 0;
  int stride = 1;
  Pad2 pad;

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad.h == 0 && pad.w == 0; }
};

// Writes the patches of one image into columns [col_offset, col_offset +
// out_plane) of a (rows x ld) row-major matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col, std::size_t ld, std::size_t col_offset) {
  const auto in_h = static_cast<std::ptrdiff_t>(g.in_h);
  const auto in_w = static_cast<std::ptrdiff_t>(g.in_w);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad.h +
                                    static_cast<std::ptrdiff_t>(ki);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= in_h) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad.w +
                                      static_cast<std::ptrdiff_t>(kj);
            dst[ox] = (ix < 0 || ix >= in_w) ? T{0} : plane[iy * in_w + ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into an image.
template <typename T>
void col2im(const T* col, std::size_t ld, std::size_t col_offset, const ConvGeometry& g, T* image) {
  const auto in_h = static_cast<std::ptrdiff_t>(g.in_h);
  const auto in_w = static_cast<std::ptrdiff_t>(g.in_w);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad.h +
                                    static_cast<std::ptrdiff_t>(ki);
          if (iy < 0 || iy >= in_h) continue;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad.w +
                                      static_cast<std::ptrdiff_t>(kj);
            if (ix >= 0 && ix < in_w) plane[iy * in_w + ix] += src[ox];
          }
        }
      }
    }
  }
}

// Stacks all images of a batch into a (rows x n*out_plane) patch matrix.
template <typename T>
std::vector<T> batch_im2col(const std::vector<T>& images, std::size_t n, const ConvGeometry& g) {
  const std::size_t ld = n * g.out_plane();
  std::vector<T> col(g.rows() * ld);
  const std::size_t image_size = g.channels * g.in_h * g.in_w;
  if (g.pointwise()) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        std::copy_n(images.data() + b * image_size + c * g.out_plane(), g.out_plane(),
                    col.data() + c * ld + b * g.out_plane());
      }
    }
    return col;
  }
  for (std::size_t b = 0; b < n; ++b) im2col(images.data() + b * image_size, g, col.data(), ld, b * g.out_plane());
  return col;
}

template <typename T>
void batch_col2im(const std::vector<T>& col, std::size_t n, const ConvGeometry& g, std::vector<T>& images) {
  const std::size_t ld = n * g.out_plane();
  const std::size_t image_size = g.channels * g.in_h * g.in_w;
  if (g.pointwise()) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        const T* src = col.data() + c * ld + b * g.out_plane();
        T* dst = images.data() + b * image_size + c * g.out_plane();
        for (std::size_t p = 0; p < g.out_plane(); ++p) dst[p] += src[p];
      }
    }
    return;
  }
  for (std::size_t b = 0; b < n; ++b) col2im(col.data(), ld, b * g.out_plane(), g, images.data() + b * image_size);
}

// (n, c, p) <-> (c, n*p) layout changes.
template <typename T>
std::vector<T> to_channel_major(std::span<const T> x, std::size_t n, std::size_t c, std::size_t p) {
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x.data() + (b * c + ch) * p, p, out.data() + ch * n * p + b * p);
  return out;
}

template <typename T>
std::vector<T> to_batch_major(std::span<const T> x, std::size_t n, std::size_t c, std::size_t p) {
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x.data() + ch * n * p + b * p, p, out.data() + (b * c + ch) * p);
  return out;
}

template <typename T>
void require_bias_shape(const Tensor<T>& bias, std::size_t channels, const char* op) {
  if (bias.defined() && bias.shape() != Shape{1, channels, 1, 1}) {
    throw ShapeError(std::string(op) + ": bias shape " + bias.shape().str() + " expected (1, " +
                     std::to_string(channels) + ", 1, 1)");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() +
                     " differ (no implicit broadcasting)");
  }
}

template <typename T>
std::vector<Tensor<T>> with_optional(std::vector<Tensor<T>> parents, const Tensor<T>& maybe) {
  if (maybe.defined()) parents.push_back(maybe);
  return parents;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, Pad2 pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight " + ws.str());
  }
  if (stride < 1 || pad.h < 0 || pad.w < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  require_bias_shape(bias, ws.n, "conv2d");
  const auto span_h = static_cast<std::ptrdiff_t>(xs.h) + 2 * pad.h - static_cast<std::ptrdiff_t>(ws.h);
  const auto span_w = static_cast<std::ptrdiff_t>(xs.w) + 2 * pad.w - static_cast<std::ptrdiff_t>(ws.w);
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + ws.str() + " larger than padded input " + xs.str());
  }
  ConvGeometry g;
  g.channels = xs.c;
  g.in_h = xs.h;
  g.in_w = xs.w;
  g.kh = ws.h;
  g.kw = ws.w;
  g.stride = stride;
  g.pad = pad;
  g.out_h = static_cast<std::size_t>(span_h / stride + 1);
  g.out_w = static_cast<std::size_t>(span_w / stride + 1);

  const std::size_t n = xs.n;
  const std::size_t c_out = ws.n;
  const std::size_t np = n * g.out_plane();
  const std::vector<T> col = batch_im2col(x.values(), n, g);
  std::vector<T> out_cm(c_out * np);
  MatrixMap<T> out_mat(out_cm.data(), c_out, np);
  out_mat.noalias() = ConstMatrixMap<T>(weight.values().data(), c_out, g.rows()) *
                      ConstMatrixMap<T>(col.data(), g.rows(), np);
  if (bias.defined()) {
    for (std::size_t co = 0; co < c_out; ++co) out_mat.row(co).array() += bias.values()[co];
  }
  Shape out_shape{n, c_out, g.out_h, g.out_w};
  auto values = to_batch_major<T>(out_cm, n, c_out, g.out_plane());

  return Tensor<T>::make_result(
      "conv2d", out_shape, std::move(values), with_optional<T>({x, weight}, bias),
      [g, n, c_out, has_bias = bias.defined()](detail::Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const std::size_t np = n * g.out_plane();
        const std::vector<T> grad_cm = to_channel_major<T>(self.grad, n, c_out, g.out_plane());
        ConstMatrixMap<T> grad_mat(grad_cm.data(), c_out, np);
        if (auto* gw = grad_sink(wn)) {
          const std::vector<T> col = batch_im2col(xn.data, n, g);
          MatrixMap<T>(gw->data(), c_out, g.rows()).noalias() +=
              grad_mat * ConstMatrixMap<T>(col.data(), g.rows(), np).transpose();
        }
        if (has_bias) {
          if (auto* gb = grad_sink(*self.parents[2])) {
            for (std::size_t co = 0; co < c_out; ++co) {
              T acc{0};
              const T* row = grad_cm.data() + co * np;
              for (std::size_t p = 0; p < np; ++p) acc += row[p];
              (*gb)[co] += acc;
            }
          }
        }
        if (auto* gx = grad_sink(xn)) {
          std::vector<T> dcol(g.rows() * np);
          MatrixMap<T>(dcol.data(), g.rows(), np).noalias() =
              ConstMatrixMap<T>(wn.data.data(), c_out, g.rows()).transpose() * grad_mat;
          batch_col2im(dcol, n, g, *gx);
        }
      });
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, Pad2 pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c) {
    throw ShapeError("deconv2d: input has " + std::to_string(xs.c) + " channels, weight " + ws.str());
  }
  if (stride < 1 || pad.h < 0 || pad.w < 0) throw ShapeError("deconv2d: stride must be >= 1 and pad >= 0");
  const std::size_t c_out = ws.c;
  require_bias_shape(bias, c_out, "deconv2d");
  const auto out_h = static_cast<std::ptrdiff_t>(stride) * (static_cast<std::ptrdiff_t>(xs.h) - 1) +
                     static_cast<std::ptrdiff_t>(ws.h) - 2 * pad.h;
  const auto out_w = static_cast<std::ptrdiff_t>(stride) * (static_cast<std::ptrdiff_t>(xs.w) - 1) +
                     static_cast<std::ptrdiff_t>(ws.w) - 2 * pad.w;
  if (xs.h == 0 || xs.w == 0 || out_h <= 0 || out_w <= 0) {
    throw ShapeError("deconv2d: non-positive output size for input " + xs.str() + " and weight " + ws.str());
  }
  // The deconvolution output plays the role of the conv input.
  ConvGeometry g;
  g.channels = c_out;
  g.in_h = static_cast<std::size_t>(out_h);
  g.in_w = static_cast<std::size_t>(out_w);
  g.kh = ws.h;
  g.kw = ws.w;
  g.stride = stride;
  g.pad = pad;
  g.out_h = xs.h;
  g.out_w = xs.w;

  const std::size_t n = xs.n;
  const std::size_t c_in = xs.c;
  const std::size_t np = n * g.out_plane();
  const std::vector<T> x_cm = to_channel_major<T>(x.values(), n, c_in, g.out_plane());
  std::vector<T> col(g.rows() * np);
  MatrixMap<T>(col.data(), g.rows(), np).noalias() =
      ConstMatrixMap<T>(weight.values().data(), c_in, g.rows()).transpose() *
      ConstMatrixMap<T>(x_cm.data(), c_in, np);
  Shape out_shape{n, c_out, g.in_h, g.in_w};
  std::vector<T> values(out_shape.numel(), T{0});
  batch_col2im(col, n, g, values);
  if (bias.defined()) {
    const std::size_t plane = out_shape.plane();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t co = 0; co < c_out; ++co) {
        T* dst = values.data() + (b * c_out + co) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += bias.values()[co];
      }
  }

  return Tensor<T>::make_result(
      "deconv2d", out_shape, std::move(values), with_optional<T>({x, weight}, bias),
      [g, n, c_in, c_out, has_bias = bias.defined()](detail::Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const std::size_t np = n * g.out_plane();
        const std::vector<T> dcol = batch_im2col(self.grad, n, g);
        ConstMatrixMap<T> dcol_mat(dcol.data(), g.rows(), np);
        if (auto* gw = grad_sink(wn)) {
          const std::vector<T> x_cm = to_channel_major<T>(xn.data, n, c_in, g.out_plane());
          MatrixMap<T>(gw->data(), c_in, g.rows()).noalias() +=
              ConstMatrixMap<T>(x_cm.data(), c_in, np) * dcol_mat.transpose();
        }
        if (has_bias) {
          if (auto* gb = grad_sink(*self.parents[2])) {
            const std::size_t plane = g.in_h * g.in_w;
            for (std::size_t co = 0; co < c_out; ++co) {
              T acc{0};
              for (std::size_t b = 0; b < n; ++b) {
                const T* src = self.grad.data() + (b * c_out + co) * plane;
                for (std::size_t p = 0; p < plane; ++p) acc += src[p];
              }
              (*gb)[co] += acc;
            }
          }
        }
        if (auto* gx = grad_sink(xn)) {
          std::vector<T> dx_cm(c_in * np);
          MatrixMap<T>(dx_cm.data(), c_in, np).noalias() =
              ConstMatrixMap<T>(wn.data.data(), c_in, g.rows()) * dcol_mat;
          const std::vector<T> dx = to_batch_major<T>(dx_cm, n, c_in, g.out_plane());
          for (std::size_t i = 0; i < dx.size(); ++i) (*gx)[i] += dx[i];
        }
      });
}

namespace {

// Source index pair and weight of the upper neighbour for each output index.
struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps bilinear_taps(std::size_t in, int factor) {
  const std::size_t out = in * static_cast<std::size_t>(factor);
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    taps.lo[i] = lo;
    taps.hi[i] = std::min(lo + 1, in - 1);
    taps.frac[i] = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const Shape xs = x.shape();
  if (factor == 1) {
    return Tensor<T>::make_result("bilinear_upsample", xs, x.values(), {x}, [](detail::Node<T>& self) {
      if (auto* gx = grad_sink(*self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    });
  }
  if (xs.h == 0 || xs.w == 0) throw ShapeError("bilinear_upsample: empty spatial input");
  const auto f = static_cast<std::size_t>(factor);
  Shape out_shape{xs.n, xs.c, xs.h * f, xs.w * f};
  const AxisTaps ty = bilinear_taps(xs.h, factor);
  const AxisTaps tx = bilinear_taps(xs.w, factor);
  std::vector<T> values(out_shape.numel());
  const std::size_t planes = xs.n * xs.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.values().data() + p * xs.plane();
    T* dst = values.data() + p * out_shape.plane();
    for (std::size_t i = 0; i < out_shape.h; ++i) {
      const T fy = static_cast<T>(ty.frac[i]);
      const T* r0 = src + ty.lo[i] * xs.w;
      const T* r1 = src + ty.hi[i] * xs.w;
      for (std::size_t j = 0; j < out_shape.w; ++j) {
        const T fx = static_cast<T>(tx.frac[j]);
        const T top = r0[tx.lo[j]] * (T{1} - fx) + r0[tx.hi[j]] * fx;
        const T bottom = r1[tx.lo[j]] * (T{1} - fx) + r1[tx.hi[j]] * fx;
        dst[i * out_shape.w + j] = top * (T{1} - fy) + bottom * fy;
      }
    }
  }
  return Tensor<T>::make_result(
      "bilinear_upsample", out_shape, std::move(values), {x},
      [ty, tx, xs, out_shape](detail::Node<T>& self) {
        auto* gx = grad_sink(*self.parents[0]);
        if (!gx) return;
        const std::size_t planes = xs.n * xs.c;
        for (std::size_t p = 0; p < planes; ++p) {
          const T* g = self.grad.data() + p * out_shape.plane();
          T* dst = gx->data() + p * xs.plane();
          for (std::size_t i = 0; i < out_shape.h; ++i) {
            const T fy = static_cast<T>(ty.frac[i]);
            T* r0 = dst + ty.lo[i] * xs.w;
            T* r1 = dst + ty.hi[i] * xs.w;
            for (std::size_t j = 0; j < out_shape.w; ++j) {
              const T fx = static_cast<T>(tx.frac[j]);
              const T v = g[i * out_shape.w + j];
              r0[tx.lo[j]] += v * (T{1} - fy) * (T{1} - fx);
              r0[tx.hi[j]] += v * (T{1} - fy) * fx;
              r1[tx.lo[j]] += v * fy * (T{1} - fx);
              r1[tx.hi[j]] += v * fy * fx;
            }
          }
        }
      });
}

namespace {

// Source flat index (in the channel-deep layout) for each flat index of the
// spatially expanded layout.
std::vector<std::size_t> shuffle_permutation(const Shape& deep, int r) {
  const auto rr = static_cast<std::size_t>(r);
  const std::size_t c_out = deep.c / (rr * rr);
  const std::size_t oh = deep.h * rr, ow = deep.w * rr;
  std::vector<std::size_t> perm(deep.numel());
  std::size_t k = 0;
  for (std::size_t b = 0; b < deep.n; ++b)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t i = y / rr, a = y % rr, j = x / rr, bb = x % rr;
          const std::size_t src_c = c * rr * rr + a * rr + bb;
          perm[k++] = ((b * deep.c + src_c) * deep.h + i) * deep.w + j;
        }
  return perm;
}

}  // namespace

template <typename T>
Tensor<T> sub_pixel_shuffle(const Tensor<T>& x, int r) {
  const Shape xs = x.shape();
  if (r < 1) throw ShapeError("sub_pixel_shuffle: r must be >= 1");
  const auto rr = static_cast<std::size_t>(r);
  if (xs.c % (rr * rr) != 0) {
    throw ShapeError("sub_pixel_shuffle: channels " + std::to_string(xs.c) + " not divisible by r^2 = " +
                     std::to_string(rr * rr));
  }
  Shape out_shape{xs.n, xs.c / (rr * rr), xs.h * rr, xs.w * rr};
  auto perm = std::make_shared<const std::vector<std::size_t>>(shuffle_permutation(xs, r));
  std::vector<T> values(xs.numel());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = x.values()[(*perm)[k]];
  return Tensor<T>::make_result("sub_pixel_shuffle", out_shape, std::move(values), {x},
                                [perm](detail::Node<T>& self) {
                                  if (auto* gx = grad_sink(*self.parents[0]))
                                    for (std::size_t k = 0; k < perm->size(); ++k)
                                      (*gx)[(*perm)[k]] += self.grad[k];
                                });
}

template <typename T>
Tensor<T> sub_pixel_unshuffle(const Tensor<T>& x, int r) {
  const Shape xs = x.shape();
  if (r < 1) throw ShapeError("sub_pixel_unshuffle: r must be >= 1");
  const auto rr = static_cast<std::size_t>(r);
  if (xs.h % rr != 0 || xs.w % rr != 0) {
    throw ShapeError("sub_pixel_unshuffle: spatial size " + xs.str() + " not divisible by r");
  }
  Shape deep{xs.n, xs.c * rr * rr, xs.h / rr, xs.w / rr};
  auto perm = std::make_shared<const std::vector<std::size_t>>(shuffle_permutation(deep, r));
  std::vector<T> values(xs.numel());
  for (std::size_t k = 0; k < values.size(); ++k) values[(*perm)[k]] = x.values()[k];
  return Tensor<T>::make_result("sub_pixel_unshuffle", deep, std::move(values), {x},
                                [perm](detail::Node<T>& self) {
                                  if (auto* gx = grad_sink(*self.parents[0]))
                                    for (std::size_t k = 0; k < perm->size(); ++k)
                                      (*gx)[k] += self.grad[(*perm)[k]];
                                });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
  const Shape xs = x.shape();
  const Shape param_shape{1, xs.c, 1, 1};
  if (gamma.shape() != param_shape || beta.shape() != param_shape) {
    throw ShapeError("batch_norm: gamma/beta must be " + param_shape.str() + " for input " + xs.str());
  }
  if (state.running_mean.size() != xs.c || state.running_var.size() != xs.c) {
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  }
  const std::size_t count = xs.n * xs.plane();
  if (count == 0) throw ShapeError("batch_norm: empty input");
  std::vector<T> mean(xs.c), inv_std(xs.c);
  if (training) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      T acc{0};
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* src = x.values().data() + (b * xs.c + c) * xs.plane();
        for (std::size_t p = 0; p < xs.plane(); ++p) acc += src[p];
      }
      const T mu = acc / static_cast<T>(count);
      T sq{0};
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* src = x.values().data() + (b * xs.c + c) * xs.plane();
        for (std::size_t p = 0; p < xs.plane(); ++p) sq += (src[p] - mu) * (src[p] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + state.eps);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (T{1} - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < xs.c; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<T> xhat(xs.numel()), values(xs.numel());
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const std::size_t off = (b * xs.c + c) * xs.plane();
      const T g = gamma.values()[c], bt = beta.values()[c];
      for (std::size_t p = 0; p < xs.plane(); ++p) {
        xhat[off + p] = (x.values()[off + p] - mean[c]) * inv_std[c];
        values[off + p] = g * xhat[off + p] + bt;
      }
    }
  return Tensor<T>::make_result(
      "batch_norm", xs, std::move(values), {x, gamma, beta},
      [xs, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto* gx = grad_sink(*self.parents[0]);
        auto* gg = grad_sink(*self.parents[1]);
        auto* gb = grad_sink(*self.parents[2]);
        const auto& gamma_v = self.parents[1]->data;
        for (std::size_t c = 0; c < xs.c; ++c) {
          T sum_dy{0}, sum_dy_xhat{0};
          for (std::size_t b = 0; b < xs.n; ++b) {
            const std::size_t off = (b * xs.c + c) * xs.plane();
            for (std::size_t p = 0; p < xs.plane(); ++p) {
              sum_dy += self.grad[off + p];
              sum_dy_xhat += self.grad[off + p] * xhat[off + p];
            }
          }
          if (gg) (*gg)[c] += sum_dy_xhat;
          if (gb) (*gb)[c] += sum_dy;
          if (!gx) continue;
          const T scale_c = gamma_v[c] * inv_std[c];
          const T inv_count = T{1} / static_cast<T>(count);
          for (std::size_t b = 0; b < xs.n; ++b) {
            const std::size_t off = (b * xs.c + c) * xs.plane();
            for (std::size_t p = 0; p < xs.plane(); ++p) {
              const T dy = self.grad[off + p];
              (*gx)[off + p] += training
                                    ? scale_c * (dy - inv_count * sum_dy - xhat[off + p] * inv_count * sum_dy_xhat)
                                    : scale_c * dy;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> values(x.values());
  for (T& v : values) v = v > T{0} ? v : T{0};
  return Tensor<T>::make_result("relu", x.shape(), std::move(values), {x}, [](detail::Node<T>& self) {
    auto& xn = *self.parents[0];
    if (auto* gx = grad_sink(xn))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xn.data[i] > T{0}) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::make_result("add", a.shape(), std::move(values), {a, b}, [](detail::Node<T>& self) {
    for (int k = 0; k < 2; ++k)
      if (auto* g = grad_sink(*self.parents[k]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::make_result("sub", a.shape(), std::move(values), {a, b}, [](detail::Node<T>& self) {
    if (auto* g = grad_sink(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_sink(*self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::make_result("mul", a.shape(), std::move(values), {a, b}, [](detail::Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (auto* g = grad_sink(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bn.data[i];
    if (auto* g = grad_sink(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * an.data[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> values(x.values());
  for (T& v : values) v *= factor;
  return Tensor<T>::make_result("scale", x.shape(), std::move(values), {x}, [factor](detail::Node<T>& self) {
    if (auto* g = grad_sink(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts[0].shape();
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels.push_back(s.c);
    total += s.c;
  }
  Shape out_shape{first.n, total, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<T> values(out_shape.numel());
  for (std::size_t b = 0; b < first.n; ++b) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(parts[k].values().data() + b * channels[k] * plane, channels[k] * plane,
                  values.data() + (b * total + c0) * plane);
      c0 += channels[k];
    }
  }
  std::vector<Tensor<T>> parents(parts.begin(), parts.end());
  return Tensor<T>::make_result("concat_channels", out_shape, std::move(values), std::move(parents),
                                [channels, total, plane, n = first.n](detail::Node<T>& self) {
                                  std::size_t c0 = 0;
                                  for (std::size_t k = 0; k < channels.size(); ++k) {
                                    if (auto* g = grad_sink(*self.parents[k])) {
                                      for (std::size_t b = 0; b < n; ++b) {
                                        const T* src = self.grad.data() + (b * total + c0) * plane;
                                        T* dst = g->data() + b * channels[k] * plane;
                                        for (std::size_t i = 0; i < channels[k] * plane; ++i) dst[i] += src[i];
                                      }
                                    }
                                    c0 += channels[k];
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.values()) acc += v;
  return Tensor<T>::make_result("sum", Shape{1, 1, 1, 1}, {acc}, {x}, [](detail::Node<T>& self) {
    if (auto* g = grad_sink(*self.parents[0]))
      for (T& v : *g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel) {
  if (kernel < 1) throw ShapeError("max_pool2d: kernel must be >= 1");
  const Shape xs = x.shape();
  const auto k = static_cast<std::size_t>(kernel);
  Shape out_shape{xs.n, xs.c, xs.h / k, xs.w / k};
  if (out_shape.h == 0 || out_shape.w == 0) {
    throw ShapeError("max_pool2d: input " + xs.str() + " smaller than kernel");
  }
  std::vector<T> values(out_shape.numel());
  std::vector<std::size_t> argmax(out_shape.numel());
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    const T* src = x.values().data() + p * xs.plane();
    for (std::size_t i = 0; i < out_shape.h; ++i)
      for (std::size_t j = 0; j < out_shape.w; ++j) {
        std::size_t best = (i * k) * xs.w + j * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t idx = (i * k + a) * xs.w + j * k + b;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = p * out_shape.plane() + i * out_shape.w + j;
        values[o] = src[best];
        argmax[o] = p * xs.plane() + best;
      }
  }
  return Tensor<T>::make_result("max_pool2d", out_shape, std::move(values), {x},
                                [argmax = std::move(argmax)](detail::Node<T>& self) {
                                  if (auto* g = grad_sink(*self.parents[0]))
                                    for (std::size_t o = 0; o < argmax.size(); ++o) (*g)[argmax[o]] += self.grad[o];
                                });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape xs = x.shape();
  if (xs.plane() == 0) throw ShapeError("global_avg_pool: empty spatial input");
  Shape out_shape{xs.n, xs.c, 1, 1};
  std::vector<T> values(out_shape.numel());
  const T inv = T{1} / static_cast<T>(xs.plane());
  for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
    T acc{0};
    const T* src = x.values().data() + p * xs.plane();
    for (std::size_t i = 0; i < xs.plane(); ++i) acc += src[i];
    values[p] = acc * inv;
  }
  return Tensor<T>::make_result("global_avg_pool", out_shape, std::move(values), {x},
                                [plane = xs.plane(), inv](detail::Node<T>& self) {
                                  if (auto* g = grad_sink(*self.parents[0]))
                                    for (std::size_t p = 0; p < self.grad.size(); ++p)
                                      for (std::size_t i = 0; i < plane; ++i) (*g)[p * plane + i] += self.grad[p] * inv;
                                });
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
  const Shape xs = x.shape();
  std::vector<T> values(xs.numel());
  const std::size_t rows = xs.n * xs.c * xs.h;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < xs.w; ++j) values[r * xs.w + j] = x.values()[r * xs.w + (xs.w - 1 - j)];
  return Tensor<T>::make_result("flip_horizontal", xs, std::move(values), {x}, [rows, w = xs.w](detail::Node<T>& self) {
    if (auto* g = grad_sink(*self.parents[0]))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) (*g)[r * w + (w - 1 - j)] += self.grad[r * w + j];
  });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const LabelMap& labels, int ignore_label) {
  const Shape s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("softmax_cross_entropy: labels (" + std::to_string(labels.n) + ", " + std::to_string(labels.h) +
                     ", " + std::to_string(labels.w) + ") do not match logits " + s.str());
  }
  const std::size_t plane = s.plane();
  std::vector<T> probs(s.numel());
  T total{0};
  std::size_t valid = 0;
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t y = labels.data[b * plane + p];
      if (y == ignore_label) continue;
      if (y < 0 || static_cast<std::size_t>(y) >= s.c) {
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(s.c) + ")");
      }
      const T* z = logits.values().data() + b * s.c * plane + p;
      T m = z[0];
      for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, z[c * plane]);
      T denom{0};
      for (std::size_t c = 0; c < s.c; ++c) denom += std::exp(z[c * plane] - m);
      const T lse = m + std::log(denom);
      total += lse - z[static_cast<std::size_t>(y) * plane];
      T* pr = probs.data() + b * s.c * plane + p;
      for (std::size_t c = 0; c < s.c; ++c) pr[c * plane] = std::exp(z[c * plane] - lse);
      ++valid;
    }
  const T loss = valid == 0 ? T{0} : total / static_cast<T>(valid);
  return Tensor<T>::make_result(
      "softmax_cross_entropy", Shape{1, 1, 1, 1}, {loss}, {logits},
      [labels, ignore_label, valid, s, probs = std::move(probs)](detail::Node<T>& self) {
        auto* g = grad_sink(*self.parents[0]);
        if (!g || valid == 0) return;
        const T coeff = self.grad[0] / static_cast<T>(valid);
        const std::size_t plane = s.plane();
        for (std::size_t b = 0; b < s.n; ++b)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::int32_t y = labels.data[b * plane + p];
            if (y == ignore_label) continue;
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t idx = (b * s.c + c) * plane + p;
              const T target = static_cast<std::size_t>(y) == c ? T{1} : T{0};
              (*g)[idx] += coeff * (probs[idx] - target);
            }
          }
      });
}

template <typename T>
Tensor<T> sigmoid_binary_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
  require_same_shape(logits, targets, "sigmoid_binary_cross_entropy");
  const std::size_t count = logits.numel();
  if (count == 0) throw ShapeError("sigmoid_binary_cross_entropy: empty input");
  T total{0};
  for (std::size_t i = 0; i < count; ++i) {
    const T z = logits.values()[i];
    const T t = targets.values()[i];
    total += std::max(z, T{0}) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return Tensor<T>::make_result("sigmoid_binary_cross_entropy", Shape{1, 1, 1, 1}, {total / static_cast<T>(count)},
                                {logits, targets}, [count](detail::Node<T>& self) {
                                  auto& zn = *self.parents[0];
                                  auto& tn = *self.parents[1];
                                  const T coeff = self.grad[0] / static_cast<T>(count);
                                  if (auto* g = grad_sink(zn))
                                    for (std::size_t i = 0; i < count; ++i) {
                                      const T sig = T{1} / (T{1} + std::exp(-zn.data[i]));
                                      (*g)[i] += coeff * (sig - tn.data[i]);
                                    }
                                  if (auto* g = grad_sink(tn))
                                    for (std::size_t i = 0; i < count; ++i) (*g)[i] -= coeff * zn.data[i];
                                });
}

#define EXFUSE_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, Pad2);                  \
  template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, Pad2);                \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int);                                                  \
  template Tensor<T> sub_pixel_shuffle(const Tensor<T>&, int);                                                  \
  template Tensor<T> sub_pixel_unshuffle(const Tensor<T>&, int);                                                \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, bool); \
  template Tensor<T> relu(const Tensor<T>&);                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                                     \
  template Tensor<T> max_pool2d(const Tensor<T>&, int);                                                         \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                         \
  template Tensor<T> flip_horizontal(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const LabelMap&, int);                             \
  template Tensor<T> sigmoid_binary_cross_entropy(const Tensor<T>&, const Tensor<T>&);

EXFUSE_INSTANTIATE_OPS(float)
EXFUSE_INSTANTIATE_OPS(double)

#undef EXFUSE_INSTANTIATE_OPS

}  // namespace exfuse
