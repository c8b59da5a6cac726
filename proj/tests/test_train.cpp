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
#include <sstream>

#include "exfuse/errors.hpp"
#include "exfuse/gradcheck.hpp"
#include "exfuse/gradsuite.hpp"
#include "exfuse/ops.hpp"
#include "exfuse/optim.hpp"
#include "exfuse/train.hpp"

using namespace exfuse;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_train() {
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.seed = 3;
  return tc;
}

const Dataset& tiny_data() {
  static const Dataset d = gen_synthetic(40, 8, 32, 2);
  return d;
}

}  // namespace

TEST(Schedule, PolyClosedForm) {
  EXPECT_DOUBLE_EQ(poly_learning_rate(0.01, 0, 100, 0.9), 0.01);
  EXPECT_DOUBLE_EQ(poly_learning_rate(0.01, 50, 100, 0.9), 0.01 * std::pow(0.5, 0.9));
  EXPECT_DOUBLE_EQ(poly_learning_rate(0.01, 99, 100, 0.9), 0.01 * std::pow(0.01, 0.9));
  EXPECT_DOUBLE_EQ(poly_learning_rate(0.02, 30, 40, 1.0), 0.005);
}

TEST(Schedule, IterationsAndEpochOrder) {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  EXPECT_EQ(total_iterations(tc, 512), 192u);
  EXPECT_EQ(total_iterations(tc, 20), 9u);
  auto order = epoch_order(5, 2, 50);
  EXPECT_EQ(order, epoch_order(5, 2, 50));
  EXPECT_NE(order, epoch_order(5, 3, 50));
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}

TEST(Sgd, PlainStepWithWeightDecay) {
  Tensor<double> p(Shape{1, 1, 1, 3}, std::vector<double>{1, -2, 3});
  p.set_requires_grad(true);
  Sgd<double> opt({p}, 0.0, 0.1);
  const std::vector<double> g{0.5, 0.25, -1};
  std::copy(g.begin(), g.end(), p.grad().begin());
  opt.step(0.2);
  const std::vector<double> x0{1, -2, 3};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.values()[i], x0[i] - 0.2 * (g[i] + 0.1 * x0[i]));
}

TEST(Sgd, MomentumRecurrence) {
  Tensor<double> p(Shape{1, 1, 1, 1}, 2.0);
  p.set_requires_grad(true);
  Sgd<double> opt({p}, 0.9, 0.0);
  p.grad()[0] = 1.0;
  opt.step(0.1);  // v = 1, x = 1.9
  p.grad()[0] = 0.5;
  opt.step(0.1);  // v = 0.9 + 0.5 = 1.4, x = 1.9 - 0.14
  EXPECT_NEAR(opt.velocity()[0][0], 1.4, 1e-15);
  EXPECT_NEAR(p.item(), 1.76, 1e-15);
  opt.zero_grad();
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Sgd, DescendsQuadratic) {
  Tensor<double> p(Shape{1, 1, 1, 1}, 5.0);
  p.set_requires_grad(true);
  Sgd<double> opt({p}, 0.9, 0.0);
  for (int i = 0; i < 600; ++i) {
    opt.zero_grad();
    backward(sum(mul(p, p)));
    opt.step(0.05);
  }
  EXPECT_NEAR(p.item(), 0.0, 1e-6);
}

TEST(FiniteDiff, MatchesKnownDerivatives) {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.3, -1.2, 2.0});
  const auto f = [](const Tensor<double>& t) {
    double s = 0;
    for (double v : t.values()) s += v * v * v;
    return s;
  };
  const Tensor<double> g = finite_diff_grad(f, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.values()[i], 3 * x.values()[i] * x.values()[i], 1e-8);
  EXPECT_EQ(x.values()[1], -1.2);  // restored
  const std::vector<double> a{1, 2}, b{1, 2.2};
  EXPECT_NEAR(max_relative_error(a, b), 0.2 / 2.2, 1e-15);
  const std::vector<double> z{0, 0};
  EXPECT_EQ(max_relative_error(z, z), 0.0);
}

TEST(Train, SmokeOneEpochTinyModel) {
  const TrainResult r = train(tiny_model_config(), quick_train(), tiny_data());
  ASSERT_EQ(r.steps.size(), 2u);
  for (const auto& s : r.steps) {
    EXPECT_TRUE(std::isfinite(s.loss.total));
    EXPECT_GT(s.loss.main, 0);
    EXPECT_GT(s.loss.ss, 0);
    EXPECT_GT(s.loss.ecre, 0);
  }
  EXPECT_FALSE(r.checkpoint.entries.empty());
}

TEST(Train, SameSeedSameRun) {
  const TrainResult a = train(tiny_model_config(), quick_train(), tiny_data());
  const TrainResult b = train(tiny_model_config(), quick_train(), tiny_data());
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss.total, b.steps[i].loss.total);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  TrainConfig other = quick_train();
  other.seed = 4;
  EXPECT_NE(encode_checkpoint(train(tiny_model_config(), other, tiny_data()).checkpoint),
            encode_checkpoint(a.checkpoint));
}

TEST(Train, LearningRateFollowsSchedule) {
  TrainConfig tc = quick_train();
  tc.epochs = 2;
  const TrainResult r = train(tiny_model_config(), tc, tiny_data());
  ASSERT_EQ(r.steps.size(), 4u);
  for (const auto& s : r.steps) EXPECT_DOUBLE_EQ(s.lr, poly_learning_rate(tc.base_lr, s.iter, 4, tc.poly_power));
  EXPECT_EQ(r.steps.back().epoch, 1u);
}

TEST(Train, RejectsMismatchedData) {
  EXPECT_THROW(train(tiny_model_config(), quick_train(), gen_synthetic(1, 4, 32, 3)), ConfigError);
  EXPECT_THROW(train(tiny_model_config(), quick_train(), gen_synthetic(1, 4, 64, 2)), ShapeError);
}

TEST(Train, HugeLearningRateDiverges) {
  TrainConfig tc = quick_train();
  tc.base_lr = 1e30;
  EXPECT_THROW(train(tiny_model_config(), tc, tiny_data()), DivergenceError);
}

TEST(Train, SaveLoadEvaluate) {
  const ModelConfig mc = tiny_model_config();
  const TrainResult r = train(mc, quick_train(), tiny_data());
  const fs::path dir = fs::temp_directory_path() / "exfuse_tests";
  fs::create_directories(dir);
  const fs::path p = dir / "tiny.ck";
  save_trained(p, mc, r.checkpoint);
  EXPECT_TRUE(fs::exists(config_sidecar(p)));
  auto model = model_from_checkpoint(mc, r.checkpoint);
  const EvalResult direct = evaluate(*model, tiny_data(), false);
  const EvalResult loaded = evaluate_checkpoint(p, tiny_data(), false);
  EXPECT_EQ(direct.confusion.counts, loaded.confusion.counts);
  EXPECT_EQ(direct.miou, loaded.miou);
  std::uint64_t labelled = 0;
  for (const auto& s : tiny_data().samples)
    for (auto y : s.labels) labelled += y != kIgnoreLabel;
  EXPECT_EQ(direct.confusion.total(), labelled);
  // Batch size does not change the result.
  EXPECT_EQ(evaluate(*model, tiny_data(), true, 3).confusion.counts,
            evaluate(*model, tiny_data(), true, 8).confusion.counts);
}

TEST(Ablation, GridParsing) {
  const AblationGrid g = parse_ablation_grid(
      "# comment\n"
      "model.classes = 2\n"
      "model.input_size = 32\n"
      "train.epochs = 3\n"
      "train_data = a.exds\n"
      "eval_data = /abs/b.exds\n"
      "row.base = ss=false\n"
      "row.full = ss=true; seb=true; levels=3,4\n",
      "/grid/dir");
  EXPECT_EQ(g.base_model.classes, 2u);
  EXPECT_EQ(g.train.epochs, 3u);
  EXPECT_EQ(g.train_data, fs::path("/grid/dir/a.exds"));
  EXPECT_EQ(g.eval_data, fs::path("/abs/b.exds"));
  ASSERT_EQ(g.rows.size(), 2u);
  EXPECT_EQ(g.rows[1].name, "full");
  const ModelConfig full = row_model_config(g, g.rows[1]);
  EXPECT_TRUE(full.ss && full.seb);
  EXPECT_EQ(full.levels, (std::set<int>{3, 4}));
  EXPECT_THROW(parse_ablation_grid("row.x = ss=true\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("model.classes = 2\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("row.x = nope=true\n"), ConfigError);
}

TEST(Ablation, RunsEveryRowAndSeedAndRecordsDivergence) {
  AblationGrid g;
  g.base_model = tiny_model_config();
  g.train = quick_train();
  g.rows = {{"plain", parse_overrides("ss=false; ecre=false; seb=false; dap=false")},
            {"blowup", parse_overrides("ss_weight=1e30")}};
  const std::vector<std::uint64_t> seeds{1, 2};
  std::size_t callbacks = 0;
  AblationOptions opts;
  opts.on_run = [&](const AblationRun&) { ++callbacks; };
  const AblationReport rep = ablate(g, tiny_data(), tiny_data(), seeds, opts);
  ASSERT_EQ(rep.runs.size(), 4u);
  EXPECT_EQ(callbacks, 4u);
  EXPECT_EQ(rep.runs[0].row, "plain");
  EXPECT_EQ(rep.runs[1].seed, 2u);
  EXPECT_EQ(rep.runs[0].status, "ok");
  EXPECT_TRUE(rep.runs[0].miou >= 0 && rep.runs[0].miou <= 1);
  for (std::size_t i = 2; i < 4; ++i) {
    EXPECT_NE(rep.runs[i].status, "ok");
    EXPECT_TRUE(std::isnan(rep.runs[i].miou));
  }
  const auto sums = summarize(rep);
  EXPECT_EQ(find_summary(sums, "blowup").failed, 2u);
  EXPECT_EQ(find_summary(sums, "plain").mious.size(), 2u);

  const AblationReport back = report_from_csv(report_to_csv(rep));
  ASSERT_EQ(back.runs.size(), rep.runs.size());
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.runs[i].miou, rep.runs[i].miou);
    EXPECT_EQ(back.runs[i].per_class, rep.runs[i].per_class);
    EXPECT_EQ(back.runs[i].description, rep.runs[i].description);
  }
  EXPECT_EQ(back.runs[3].status, rep.runs[3].status);
  const std::string text = format_report(rep, g);
  EXPECT_NE(text.find("plain"), std::string::npos);
  EXPECT_NE(text.find("blowup"), std::string::npos);
}

TEST(Ablation, Median) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
