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

#include "exfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "exfuse/errors.hpp"

namespace exfuse {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::array<float, 3> random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  return {u(rng), u(rng), u(rng)};
}

float l1(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

void check_generator_args(std::size_t size, std::size_t classes) {
  if (classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes, got " + std::to_string(classes));
  if (classes > kMaxSyntheticClasses) {
    throw ConfigError("gen_synthetic: at most " + std::to_string(kMaxSyntheticClasses) + " classes supported");
  }
  if (size < 16) throw ConfigError("gen_synthetic: image size must be at least 16, got " + std::to_string(size));
}

}  // namespace

bool SyntheticObject::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double r = radius;
  const double inner = kInnerRatio * r;
  switch (kind()) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::rectangle:
      return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
    case ShapeKind::triangle:
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2;
    case ShapeKind::ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= inner * inner;
    }
    case ShapeKind::diamond:
      return std::abs(dx) + std::abs(dy) <= r;
    case ShapeKind::cross: {
      const double arm = r / 3;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case ShapeKind::ellipse:
      return dx * dx / (r * r) + 4 * dy * dy / (r * r) <= 1;
    case ShapeKind::hollow_square: {
      const double m = std::max(std::abs(dx), std::abs(dy));
      return m <= r && m >= inner;
    }
  }
  return false;
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed) ^ index; }

SyntheticLayout synthetic_layout(std::uint64_t seed, std::size_t index, std::size_t size, std::size_t classes) {
  check_generator_args(size, classes);
  std::mt19937_64 rng(sample_seed(seed, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticLayout layout;
  layout.background = random_color(rng);

  // Distinct classes per sample, and with more than 4 object classes a raised
  // minimum count, so each class is present in about half of the samples.
  const std::size_t kinds = classes - 1;
  std::vector<std::int32_t> pool(kinds);
  std::iota(pool.begin(), pool.end(), 1);
  const std::size_t max_objects = std::min(kMaxObjects, kinds);
  const std::size_t min_objects = kinds > kMaxObjects ? kinds - kMaxObjects : 1;
  const std::size_t count = std::uniform_int_distribution<std::size_t>(min_objects, max_objects)(rng);
  std::shuffle(pool.begin(), pool.end(), rng);

  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticObject obj;
    obj.label = pool[i];
    obj.radius = s * (kMinRadius + (kMaxRadius - kMinRadius) * unit(rng));
    obj.cx = obj.radius + (s - 2 * obj.radius) * unit(rng);
    obj.cy = obj.radius + (s - 2 * obj.radius) * unit(rng);
    obj.half_w = obj.radius * (0.6 + 0.4 * unit(rng));
    obj.half_h = obj.radius * (0.6 + 0.4 * unit(rng));
    do {
      obj.color = random_color(rng);
    } while (l1(obj.color, layout.background) < 0.3f);
    layout.objects.push_back(obj);
  }
  return layout;
}

Dataset gen_synthetic(std::uint64_t seed, std::size_t count, std::size_t size, std::size_t classes) {
  check_generator_args(size, classes);
  Dataset ds{size, size, classes, {}};
  ds.samples.reserve(count);
  const std::size_t plane = size * size;
  for (std::size_t index = 0; index < count; ++index) {
    const SyntheticLayout layout = synthetic_layout(seed, index, size, classes);
    SegSample sample{size, size, std::vector<float>(3 * plane), std::vector<std::int32_t>(plane, 0)};
    std::vector<std::array<float, 3>> color(plane, layout.background);
    std::vector<std::uint8_t> inside(plane);
    for (const SyntheticObject& obj : layout.objects) {
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) inside[y * size + x] = obj.contains(x + 0.5, y + 0.5);
      // 1-pixel ignore rim just outside the object.
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          if (inside[y * size + x]) continue;
          bool near = false;
          for (std::size_t yy = (y ? y - 1 : 0); yy <= std::min(y + 1, size - 1) && !near; ++yy)
            for (std::size_t xx = (x ? x - 1 : 0); xx <= std::min(x + 1, size - 1); ++xx)
              if (inside[yy * size + xx]) near = true;
          if (near) sample.labels[y * size + x] = kIgnoreLabel;
        }
      for (std::size_t p = 0; p < plane; ++p)
        if (inside[p]) {
          sample.labels[p] = obj.label;
          color[p] = obj.color;
        }
    }
    // Noise comes from the sample's own stream, after the layout draws.
    std::mt19937_64 noise_rng(sample_seed(seed, index) ^ 0xA5A5A5A5A5A5A5A5ULL);
    std::normal_distribution<float> noise(0.f, static_cast<float>(kNoiseSigma));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        sample.image[c * plane + p] = std::clamp(color[p][c] + noise(noise_rng), 0.f, 1.f);
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

std::string encode_dataset(const Dataset& dataset) {
  std::ostringstream out(std::ios::binary);
  out.write("EXDS", 4);
  io::write_le<std::uint32_t>(out, kDatasetVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.h));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.w));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.classes));
  const std::size_t plane = dataset.h * dataset.w;
  std::string rgb(3 * plane, '\0');
  std::string labels(plane, '\0');
  for (const SegSample& s : dataset.samples) {
    if (s.h != dataset.h || s.w != dataset.w || s.image.size() != 3 * plane || s.labels.size() != plane) {
      throw ShapeError("save_dataset: sample size differs from the dataset header");
    }
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(s.image[c * plane + p], 0.f, 1.f);
        rgb[3 * p + c] = static_cast<char>(static_cast<std::uint8_t>(std::lround(255.f * v)));
      }
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t y = s.labels[p];
      if (y != kIgnoreLabel && (y < 0 || static_cast<std::size_t>(y) >= dataset.classes)) {
        throw ShapeError("save_dataset: label " + std::to_string(y) + " outside the legal set");
      }
      labels[p] = static_cast<char>(static_cast<std::uint8_t>(y));
    }
    out.write(rgb.data(), static_cast<std::streamsize>(rgb.size()));
    out.write(labels.data(), static_cast<std::streamsize>(labels.size()));
  }
  return out.str();
}

Dataset decode_dataset(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  io::expect_magic(in, "EXDS", origin);
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kDatasetVersion) throw FormatError(origin + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  const auto count = io::read_le<std::uint32_t>(in, "count");
  ds.h = io::read_le<std::uint32_t>(in, "height");
  ds.w = io::read_le<std::uint32_t>(in, "width");
  ds.classes = io::read_le<std::uint32_t>(in, "classes");
  if (ds.classes < 2 || ds.classes > 255) throw FormatError(origin + ": bad class count " + std::to_string(ds.classes));
  const std::size_t plane = ds.h * ds.w;
  if (plane == 0) throw FormatError(origin + ": empty image size");
  const std::size_t per_sample = 4 * plane;
  if ((bytes.size() - 24) / per_sample < count) {
    throw FormatError(origin + ": truncated file, header promises " + std::to_string(count) + " samples");
  }
  std::string rgb(3 * plane, '\0');
  std::string labels(plane, '\0');
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(rgb.data(), static_cast<std::streamsize>(rgb.size()));
    in.read(labels.data(), static_cast<std::streamsize>(labels.size()));
    SegSample s{ds.h, ds.w, std::vector<float>(3 * plane), std::vector<std::int32_t>(plane)};
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) s.image[c * plane + p] = static_cast<std::uint8_t>(rgb[3 * p + c]) / 255.f;
    for (std::size_t p = 0; p < plane; ++p) {
      const int y = static_cast<std::uint8_t>(labels[p]);
      if (y != kIgnoreLabel && static_cast<std::size_t>(y) >= ds.classes) {
        throw FormatError(origin + ": sample " + std::to_string(i) + " has illegal label " + std::to_string(y));
      }
      s.labels[p] = y;
    }
    ds.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(origin + ": trailing bytes after last sample");
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  const std::string bytes = encode_dataset(dataset);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_dataset(buf.str(), path.string());
}

SegSample flip_sample(const SegSample& sample) {
  SegSample out = sample;
  const std::size_t h = sample.h, w = sample.w, plane = h * w;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = y * w + (w - 1 - x);
      out.labels[y * w + x] = sample.labels[src];
      for (std::size_t c = 0; c < 3; ++c) out.image[c * plane + y * w + x] = sample.image[c * plane + src];
    }
  return out;
}

SegSample augment(const SegSample& sample, std::uint64_t seed, double flip_probability) {
  std::mt19937_64 rng(splitmix64(seed));
  const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < flip_probability;
  return flip ? flip_sample(sample) : sample;
}

template <typename T>
Batch<T> make_batch(std::span<const SegSample> samples) {
  if (samples.empty()) throw ShapeError("make_batch: empty batch");
  const std::size_t h = samples[0].h, w = samples[0].w, plane = h * w;
  Batch<T> batch{Tensor<T>(Shape{samples.size(), 3, h, w}), LabelMap(samples.size(), h, w)};
  auto images = batch.images.data();
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const SegSample& s = samples[b];
    if (s.h != h || s.w != w) throw ShapeError("make_batch: samples differ in size");
    for (std::size_t i = 0; i < 3 * plane; ++i) images[b * 3 * plane + i] = static_cast<T>(s.image[i]);
    std::copy(s.labels.begin(), s.labels.end(), batch.labels.data.begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
  return batch;
}

template Batch<float> make_batch(std::span<const SegSample>);
template Batch<double> make_batch(std::span<const SegSample>);

std::array<std::uint8_t, 3> palette_color(std::int32_t label) {
  // Bit-interleaved palette as used by the VOC tools.
  const auto id = static_cast<std::uint8_t>(label);
  std::array<std::uint8_t, 3> rgb{};
  std::uint8_t c = id;
  for (int shift = 7; shift >= 0; --shift) {
    for (int ch = 0; ch < 3; ++ch) rgb[ch] |= static_cast<std::uint8_t>(((c >> ch) & 1) << shift);
    c >>= 3;
  }
  return rgb;
}

PpmImage image_to_ppm(const SegSample& sample) {
  const std::size_t plane = sample.h * sample.w;
  PpmImage out{sample.w, sample.h, std::vector<std::uint8_t>(3 * plane)};
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      out.rgb[3 * p + c] = static_cast<std::uint8_t>(std::lround(255.f * std::clamp(sample.image[c * plane + p], 0.f, 1.f)));
  return out;
}

PpmImage labels_to_ppm(std::span<const std::int32_t> labels, std::size_t h, std::size_t w) {
  if (labels.size() != h * w) throw ShapeError("labels_to_ppm: label count does not match size");
  PpmImage out{w, h, std::vector<std::uint8_t>(3 * h * w)};
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto rgb = palette_color(labels[p]);
    std::copy(rgb.begin(), rgb.end(), out.rgb.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  return out;
}

PpmImage hconcat(std::span<const PpmImage> parts) {
  constexpr std::size_t gutter = 2;
  PpmImage out;
  for (const PpmImage& p : parts) {
    if (out.h != 0 && p.h != out.h) throw ShapeError("hconcat: heights differ");
    out.h = p.h;
    out.w += p.w;
  }
  if (parts.size() > 1) out.w += gutter * (parts.size() - 1);
  out.rgb.assign(3 * out.w * out.h, 255);
  std::size_t x0 = 0;
  for (const PpmImage& p : parts) {
    for (std::size_t y = 0; y < p.h; ++y)
      std::copy_n(p.rgb.begin() + static_cast<std::ptrdiff_t>(3 * y * p.w), 3 * p.w,
                  out.rgb.begin() + static_cast<std::ptrdiff_t>(3 * (y * out.w + x0)));
    x0 += p.w + gutter;
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const PpmImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.w << ' ' << image.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

PpmImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  PpmImage img;
  int maxval = 0;
  in >> magic >> img.w >> img.h >> maxval;
  if (magic != "P6" || maxval != 255 || !in) throw FormatError(path.string() + ": not an 8-bit P6 file");
  in.get();
  img.rgb.resize(3 * img.w * img.h);
  if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

}  // namespace exfuse
