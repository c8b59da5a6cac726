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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "exfuse/data.hpp"
#include "exfuse/errors.hpp"

using namespace exfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "exfuse_tests";
  fs::create_directories(dir);
  return dir / name;
}

// Expected area of one object of `kind` at image size s, from the generator's
// parameter ranges: r ~ U[a s, b s], rectangle half-sides r * U[0.6, 1].
double analytic_area(ShapeKind kind, double s) {
  const double a = kMinRadius * s, b = kMaxRadius * s;
  const double r2 = (a * a + a * b + b * b) / 3;
  const double hole = 1 - kInnerRatio * kInnerRatio;
  switch (kind) {
    case ShapeKind::circle: return std::numbers::pi * r2;
    case ShapeKind::rectangle: return 4 * 0.8 * 0.8 * r2;
    case ShapeKind::triangle: return 2 * r2;
    case ShapeKind::ring: return std::numbers::pi * hole * r2;
    case ShapeKind::diamond: return 2 * r2;
    case ShapeKind::cross: return 20.0 / 9 * r2;
    case ShapeKind::ellipse: return std::numbers::pi / 2 * r2;
    case ShapeKind::hollow_square: return 4 * hole * r2;
  }
  return 0;
}

std::size_t raster_area(const SyntheticObject& obj, std::size_t size) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) n += obj.contains(x + 0.5, y + 0.5);
  return n;
}

}  // namespace

TEST(Generator, DeterministicBySeed) {
  EXPECT_EQ(gen_synthetic(7, 6, 32, 5), gen_synthetic(7, 6, 32, 5));
  EXPECT_NE(gen_synthetic(7, 6, 32, 5), gen_synthetic(8, 6, 32, 5));
}

TEST(Generator, SamplesIndependentOfCount) {
  const Dataset a = gen_synthetic(3, 4, 32, 4), b = gen_synthetic(3, 9, 32, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
}

TEST(Generator, NeighbouringSeedsShareNoSamples) {
  const Dataset a = gen_synthetic(1, 64, 32, 5), b = gen_synthetic(2, 64, 32, 5);
  for (const auto& s : a.samples)
    for (const auto& t : b.samples) ASSERT_NE(s.image, t.image);
}

TEST(Generator, LabelsAreLegalAndIncludeBackground) {
  const Dataset d = gen_synthetic(11, 200, 64, 5);
  for (const auto& s : d.samples) {
    bool background = false, object = false, rim = false;
    for (auto y : s.labels) {
      ASSERT_TRUE((y >= 0 && y < 5) || y == kIgnoreLabel);
      background |= y == 0;
      object |= y > 0 && y < 5;
      rim |= y == kIgnoreLabel;
    }
    EXPECT_TRUE(background);
    EXPECT_TRUE(object);
    EXPECT_TRUE(rim);
    for (float v : s.image) ASSERT_TRUE(v >= 0.f && v <= 1.f);
  }
}

TEST(Generator, ObjectCountsAndClassCoverage) {
  for (std::size_t classes : {2u, 5u, 9u}) {
    const std::size_t n = 400;
    std::vector<std::size_t> seen(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto layout = synthetic_layout(5, i, 64, classes);
      EXPECT_GE(layout.objects.size(), classes > 5 ? classes - 5 : 1u);
      EXPECT_LE(layout.objects.size(), std::min<std::size_t>(4, classes - 1));
    }
    const Dataset d = gen_synthetic(5, n, 64, classes);
    for (const auto& s : d.samples) {
      std::vector<bool> present(classes, false);
      for (auto y : s.labels)
        if (y != kIgnoreLabel) present[std::size_t(y)] = true;
      for (std::size_t c = 0; c < classes; ++c) seen[c] += present[c];
    }
    for (std::size_t c = 0; c < classes; ++c) EXPECT_GE(double(seen[c]) / n, 0.30) << classes << " classes, class " << c;
  }
}

TEST(Generator, ShapeAreasMatchTheirParameters) {
  // Monte Carlo over 1000 samples: mean rasterized area per shape kind
  // against the closed-form expectation.
  const std::size_t size = 64, classes = 9;
  std::vector<double> area(classes, 0);
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < 1000; ++i)
    for (const auto& obj : synthetic_layout(21, i, size, classes).objects) {
      area[obj.label] += double(raster_area(obj, size));
      ++count[obj.label];
    }
  for (std::size_t c = 1; c < classes; ++c) {
    ASSERT_GT(count[c], 100u);
    const double mean = area[c] / double(count[c]);
    const double want = analytic_area(static_cast<ShapeKind>(c - 1), double(size));
    EXPECT_NEAR(mean / want, 1.0, 0.20) << "class " << c;
  }
}

TEST(Generator, LabelFrequenciesWithinOcclusionBounds) {
  // Visible class pixels can only lose area to occlusion and ignore rims.
  const std::size_t size = 64, classes = 5, n = 1000;
  const Dataset d = gen_synthetic(22, n, size, classes);
  std::vector<double> freq(classes, 0);
  for (const auto& s : d.samples)
    for (auto y : s.labels)
      if (y != kIgnoreLabel) freq[std::size_t(y)] += 1;
  const double objects_per_class = 2.5 / 4;  // E[count] / (classes - 1)
  for (std::size_t c = 1; c < classes; ++c) {
    const double expected = n * objects_per_class * analytic_area(static_cast<ShapeKind>(c - 1), double(size));
    EXPECT_LE(freq[c] / expected, 1.05) << "class " << c;
    EXPECT_GE(freq[c] / expected, 0.60) << "class " << c;
  }
}

TEST(Generator, ArgumentErrors) {
  EXPECT_THROW(gen_synthetic(1, 1, 32, 1), ConfigError);
  EXPECT_THROW(gen_synthetic(1, 1, 8, 3), ConfigError);
  EXPECT_THROW(gen_synthetic(1, 1, 32, 10), ConfigError);
}

TEST(Container, RoundTripExactLabelsQuantizedImages) {
  Dataset d = gen_synthetic(4, 5, 32, 5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : d.samples[0].image) v = u(rng);
  const fs::path p = temp_path("rt.exds");
  save_dataset(p, d);
  const Dataset back = load_dataset(p);
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.classes, 5u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.samples[i].labels, d.samples[i].labels);
    for (std::size_t k = 0; k < d.samples[i].image.size(); ++k)
      ASSERT_LE(std::abs(back.samples[i].image[k] - d.samples[i].image[k]), 1.0f / 255);
  }
  EXPECT_EQ(encode_dataset(back), encode_dataset(d));
}

TEST(Container, HeaderLayout) {
  const std::string b = encode_dataset(gen_synthetic(4, 2, 16, 3));
  EXPECT_EQ(b.substr(0, 4), "EXDS");
  EXPECT_EQ(b.size(), 24u + 2 * 16 * 16 * 4);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 16);
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 3);
}

TEST(Container, CorruptFilesAreRejected) {
  const std::string good = encode_dataset(gen_synthetic(4, 2, 16, 3));
  std::string bad = good;
  bad[1] = 'Y';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(decode_dataset(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(decode_dataset(good.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_dataset(good + "x"), FormatError);
  bad = good;
  bad[24 + 3 * 256 + 5] = 7;  // label byte outside {0, 1, 2, 255}
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(load_dataset(temp_path("does_not_exist.exds")), FormatError);
}

TEST(Augment, FlipTwiceAndProbabilityEnds) {
  const SegSample s = gen_synthetic(9, 1, 32, 4).samples[0];
  EXPECT_EQ(flip_sample(flip_sample(s)), s);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(augment(s, seed, 0.0), s);
    EXPECT_EQ(augment(s, seed, 1.0), flip_sample(s));
  }
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) flipped += augment(s, seed) != s;
  EXPECT_GT(flipped, 150);
  EXPECT_LT(flipped, 250);
}

TEST(Augment, ImageAndLabelsStayAligned) {
  // The flipped label map must be the label map of the flipped layout.
  const std::size_t size = 32;
  const auto layout = synthetic_layout(13, 0, size, 5);
  const SegSample s = gen_synthetic(13, 1, size, 5).samples[0];
  const SegSample f = flip_sample(s);
  const auto& top = layout.objects.back();
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool mirrored = top.contains(double(size) - (x + 0.5), y + 0.5);
      const bool labelled = f.labels[y * size + x] == top.label;
      inter += mirrored && labelled;
      uni += mirrored || labelled;
    }
  EXPECT_EQ(inter, uni);
  // Pixel colours move with the labels.
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      EXPECT_EQ(f.image[y * size + x], s.image[y * size + size - 1 - x]);
}

TEST(Batch, StacksImagesAndLabels) {
  const Dataset d = gen_synthetic(2, 3, 16, 3);
  const auto b = make_batch<double>(d.samples);
  EXPECT_EQ(b.images.shape(), (Shape{3, 3, 16, 16}));
  EXPECT_EQ(b.images.at(2, 1, 4, 5), double(d.samples[2].image[256 + 4 * 16 + 5]));
  EXPECT_EQ(b.labels.at(1, 7, 3), d.samples[1].labels[7 * 16 + 3]);
}

TEST(Ppm, HeaderPixelsAndPalette) {
  const SegSample s = gen_synthetic(6, 1, 16, 4).samples[0];
  const fs::path p = temp_path("img.ppm");
  const PpmImage img = image_to_ppm(s);
  write_ppm(p, img);
  std::ifstream in(p, std::ios::binary);
  std::string header(13, '\0');
  in.read(header.data(), 13);
  EXPECT_EQ(header, "P6\n16 16\n255\n");
  const PpmImage back = read_ppm(p);
  EXPECT_EQ(back.rgb, img.rgb);
  EXPECT_EQ(fs::file_size(p), 13u + 3 * 256);

  EXPECT_EQ(palette_color(0), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(palette_color(1), (std::array<std::uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(palette_color(2), (std::array<std::uint8_t, 3>{0, 128, 0}));
  EXPECT_EQ(palette_color(255), (std::array<std::uint8_t, 3>{224, 224, 192}));
  const PpmImage labels = labels_to_ppm(s.labels, 16, 16);
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const auto c = palette_color(s.labels[i]);
    ASSERT_EQ(labels.rgb[3 * i], c[0]);
  }
  const PpmImage parts[] = {img, labels};
  EXPECT_EQ(hconcat(parts).w, 34u);
}
