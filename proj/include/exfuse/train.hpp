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
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "exfuse/checkpoint.hpp"
#include "exfuse/config.hpp"
#include "exfuse/data.hpp"
#include "exfuse/metrics.hpp"
#include "exfuse/model.hpp"

namespace exfuse {

struct StepRecord {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct EvalResult {
  double miou = 0;
  std::vector<double> per_class;
  ConfusionMatrix confusion;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> steps;
  std::vector<std::pair<std::size_t, double>> evals;  // (epoch, mIoU)
};

struct TrainOptions {
  const Dataset* eval_data = nullptr;  // used when eval_every > 0
  std::ostream* log = nullptr;
  std::size_t log_every = 0;  // steps between loss lines, 0 = epoch summaries only
};

// Number of SGD steps for the given dataset size; a partial last batch counts.
std::size_t total_iterations(const TrainConfig& config, std::size_t samples);

// Sample order for one epoch, a seeded permutation.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t samples);

// Seed-deterministic training. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const Dataset& data,
                  const TrainOptions& options = {});

EvalResult evaluate(ExFuseModel<float>& model, const Dataset& data, bool flip_average, std::size_t batch_size = 16);

// Checkpoint plus its model config in "<path>.model.cfg".
std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint_path);
void save_trained(const std::filesystem::path& path, const ModelConfig& config, const Checkpoint& checkpoint);
// Rebuilds the model from the sidecar config and loads the weights; every
// entry is shape-checked against that config.
std::unique_ptr<ExFuseModel<float>> load_trained(const std::filesystem::path& path);
std::unique_ptr<ExFuseModel<float>> model_from_checkpoint(const ModelConfig& config, const Checkpoint& checkpoint);

EvalResult evaluate_checkpoint(const std::filesystem::path& path, const Dataset& data, bool flip_average);

// ---- Ablation ----

struct AblationRowSpec {
  std::string name;
  KeyValues overrides;  // model-config keys applied on top of the base config
};

struct AblationGrid {
  ModelConfig base_model;
  TrainConfig train;
  std::vector<AblationRowSpec> rows;
  std::filesystem::path train_data;  // optional when datasets are passed directly
  std::filesystem::path eval_data;
};

// Grid file: flat `key = value` lines.
//   train_config = <path>        optional, relative to the grid file
//   model_config = <path>        optional
//   train.<key> = <value>        train-config key on top of the file
//   model.<key> = <value>        model-config key on top of the file
//   train_data = <path>, eval_data = <path>
//   row.<name> = k=v; k=v        one row per line, kept in file order
AblationGrid parse_ablation_grid(const std::string& text, const std::filesystem::path& base_dir = {});
AblationGrid load_ablation_grid(const std::filesystem::path& path);

struct AblationRun {
  std::string row;
  std::string description;
  std::uint64_t seed = 0;
  std::string status = "ok";  // or the divergence message
  double miou = 0;
  double miou_flip = 0;  // flip-averaged evaluation, always recorded
  std::vector<double> per_class;

  bool operator==(const AblationRun&) const = default;
};

struct AblationReport {
  std::size_t classes = 0;
  std::vector<AblationRun> runs;

  bool operator==(const AblationReport&) const = default;
};

struct AblationOptions {
  bool flip_average = false;
  std::ostream* log = nullptr;
  // Called after each finished run, e.g. to keep partial results on disk.
  std::function<void(const AblationRun&)> on_run;
};

ModelConfig row_model_config(const AblationGrid& grid, const AblationRowSpec& row);

// Runs every row x seed; rows that diverge are recorded, not fatal.
AblationReport ablate(const AblationGrid& grid, const Dataset& train_data, const Dataset& eval_data,
                      std::span<const std::uint64_t> seeds, const AblationOptions& options = {});

// Median (and mean) mIoU per row over its successful seeds, in row order.
struct RowSummary {
  std::string row;
  std::string description;
  std::vector<double> mious;  // in seed order
  double median = 0;
  double mean = 0;
  std::size_t failed = 0;
};
std::vector<RowSummary> summarize(const AblationReport& report);
const RowSummary& find_summary(const std::vector<RowSummary>& summaries, const std::string& row);
double median(std::vector<double> values);

// One line per row with toggle columns, level set and ECRE variant, then the
// published full-scale numbers as context.
std::string format_report(const AblationReport& report, const AblationGrid& grid);
// Rows that differ only in `levels` pivoted into one line per method.
std::string format_level_table(const AblationReport& report, const AblationGrid& grid);

std::string report_to_csv(const AblationReport& report);
AblationReport report_from_csv(const std::string& csv);

}  // namespace exfuse
