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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exfuse/labels.hpp"
#include "exfuse/tensor.hpp"

namespace exfuse {

// One image with its label map. The image is planar (3, h, w) in [0, 1];
// labels are row-major (h, w) in [0, classes) or kIgnoreLabel.
struct SegSample {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> image;
  std::vector<std::int32_t> labels;

  bool operator==(const SegSample&) const = default;
};

struct Dataset {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t classes = 0;
  std::vector<SegSample> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

enum class ShapeKind { circle, rectangle, triangle, ring, diamond, cross, ellipse, hollow_square };

// Class c (1-based) is always drawn as shape kind c - 1.
inline constexpr std::size_t kShapeKinds = 8;
inline constexpr std::size_t kMaxSyntheticClasses = kShapeKinds + 1;
inline constexpr std::size_t kMaxObjects = 4;
inline constexpr double kMinRadius = 0.10;  // fractions of the image size
inline constexpr double kMaxRadius = 0.22;
inline constexpr double kInnerRatio = 0.55;  // ring and hollow square
inline constexpr double kNoiseSigma = 0.05;

struct SyntheticObject {
  std::int32_t label = 1;
  double cx = 0, cy = 0;
  double radius = 0;
  double half_w = 0, half_h = 0;  // rectangle only
  std::array<float, 3> color{};

  ShapeKind kind() const { return static_cast<ShapeKind>(label - 1); }
  // Membership test for a point in pixel coordinates (pixel centres at +0.5).
  bool contains(double x, double y) const;
};

// The objects of one sample in drawing order, later objects on top.
struct SyntheticLayout {
  std::array<float, 3> background{};
  std::vector<SyntheticObject> objects;
};

// Seed actually used for sample `index` of a dataset generated from `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

SyntheticLayout synthetic_layout(std::uint64_t seed, std::size_t index, std::size_t size, std::size_t classes);
Dataset gen_synthetic(std::uint64_t seed, std::size_t count, std::size_t size, std::size_t classes);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);
std::string encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::string& bytes, const std::string& origin = "<memory>");

SegSample flip_sample(const SegSample& sample);
// Horizontal flip with the given probability, decided by `seed` alone.
SegSample augment(const SegSample& sample, std::uint64_t seed, double flip_probability = 0.5);

template <typename T>
struct Batch {
  Tensor<T> images;
  LabelMap labels;
};

// Stacks samples of one size into (n, 3, h, w) images and (n, h, w) labels.
template <typename T>
Batch<T> make_batch(std::span<const SegSample> samples);

// Fixed 256-entry class palette; class 0 is black.
std::array<std::uint8_t, 3> palette_color(std::int32_t label);

struct PpmImage {
  std::size_t w = 0;
  std::size_t h = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

PpmImage image_to_ppm(const SegSample& sample);
PpmImage labels_to_ppm(std::span<const std::int32_t> labels, std::size_t h, std::size_t w);
// Side by side with a 2-pixel white gutter.
PpmImage hconcat(std::span<const PpmImage> parts);
void write_ppm(const std::filesystem::path& path, const PpmImage& image);
PpmImage read_ppm(const std::filesystem::path& path);

}  // namespace exfuse
