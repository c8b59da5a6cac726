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
#include <limits>

#include "exfuse/errors.hpp"
#include "exfuse/ops.hpp"
#include "test_util.hpp"

using namespace exfuse;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120u);
  t.at(1, 2, 3, 4) = 7.f;
  EXPECT_EQ(t.values()[t.numel() - 1], 7.f);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Autodiff, LeafAccumulatesAcrossBackwardCalls) {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  backward(sum(scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1 + 2);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2 * 3 + 2);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Autodiff, SharedSubexpressionGetsBothContributions) {
  Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{3});
  x.set_requires_grad(true);
  const auto y = add(x, x);         // 2x
  backward(sum(mul(y, y)));         // 4x^2 -> 8x
  EXPECT_DOUBLE_EQ(x.grad()[0], 24.0);
}

TEST(Autodiff, GraphIsConsumedUnlessRetained) {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{1, -1});
  x.set_requires_grad(true);
  const auto loss = sum(relu(x));
  backward(loss, true);
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tensor<double> x(Shape{1, 1, 1, 2}, 1.0);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(relu(x)), GraphError);
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  Tensor<double> x(Shape{1, 1, 1, 2}, 1.0);
  x.set_requires_grad(true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = relu(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(relu(x).requires_grad());
}

TEST(Autodiff, NonFiniteResultThrows) {
  Tensor<double> x(Shape{1, 1, 1, 1}, std::numeric_limits<double>::max());
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Autodiff, IntermediateGradientsAreNotKept) {
  Tensor<double> x(Shape{1, 1, 1, 2}, 1.0);
  x.set_requires_grad(true);
  const auto h = scale(x, 3.0);
  backward(sum(h));
  EXPECT_FALSE(h.has_grad());
  EXPECT_TRUE(x.has_grad());
}
