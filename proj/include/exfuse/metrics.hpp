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

#include <cstdint>
#include <span>
#include <vector>

#include "exfuse/labels.hpp"

namespace exfuse {

// counts[a * classes + b] = pixels with truth a predicted as b. Ignore pixels
// in the truth are skipped.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes_) : classes(classes_), counts(classes_ * classes_, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

  void add(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred);
  void add(const LabelMap& truth, const LabelMap& pred) { add(truth.data, pred.data); }
  void merge(const ConfusionMatrix& other);
  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

// IoU per class; classes with an empty union are NaN.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

// Mean IoU over classes with a non-empty union, summed in ascending order so
// relabelling classes cannot change the last bit. Throws NumericError when
// every class is empty.
double miou(const ConfusionMatrix& cm);

}  // namespace exfuse
