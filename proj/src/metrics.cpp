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

#include "exfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "exfuse/errors.hpp"

namespace exfuse {

void ConfusionMatrix::add(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred) {
  if (truth.size() != pred.size()) throw ShapeError("confusion matrix: truth and prediction sizes differ");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (truth[i] < 0 || t >= classes) throw ShapeError("confusion matrix: truth label " + std::to_string(truth[i]));
    if (pred[i] < 0 || p >= classes) throw ShapeError("confusion matrix: predicted label " + std::to_string(pred[i]));
    ++counts[t * classes + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes) throw ShapeError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<double> iou(cm.classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < cm.classes; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom != 0) iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double miou(const ConfusionMatrix& cm) {
  std::vector<double> present;
  for (double v : per_class_iou(cm))
    if (!std::isnan(v)) present.push_back(v);
  if (present.empty()) throw NumericError("miou is undefined: every class has an empty union");
  // Summing in sorted order makes the result independent of class numbering.
  std::sort(present.begin(), present.end());
  double sum = 0;
  for (double v : present) sum += v;
  return sum / static_cast<double>(present.size());
}

}  // namespace exfuse
