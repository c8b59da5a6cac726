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

#include "exfuse/gradsuite.hpp"

using namespace exfuse;

class OpGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const GradCheckResult r = run_gradient_case(GetParam());
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.name;
}

INSTANTIATE_TEST_SUITE_P(AllCases, OpGradient, ::testing::ValuesIn(gradient_case_names()),
                         [](const auto& info) { return info.param; });

TEST(EndToEndGradient, TinyModelTotalLoss) {
  const GradCheckResult r = run_end_to_end_check();
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// At eps 1e-5 this seed straddles a kink (error 1.5e-4, shrinking linearly
// with eps); a smaller step stays on one linear piece.
TEST(EndToEndGradient, OtherSeedSmallStep) {
  EXPECT_LT(run_end_to_end_check(11, 2, 1e-6).max_rel_error, 1e-4);
}

TEST(OpGradientSeeds, TenSeedsPerCase) {
  for (const auto& name : gradient_case_names())
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const GradCheckResult r = run_gradient_case(name, seed);
      EXPECT_LT(r.max_rel_error, 1e-5) << name << " seed " << seed;
    }
}
