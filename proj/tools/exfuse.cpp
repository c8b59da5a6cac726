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

// Command line front end: data generation, training, evaluation, ablation
// grids, gradient checks and visual exports.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "exfuse/data.hpp"
#include "exfuse/gradsuite.hpp"
#include "exfuse/train.hpp"

namespace fs = std::filesystem;
using namespace exfuse;

namespace {

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100 * v;
  return s.str();
}

void print_eval(const EvalResult& r) {
  std::cout << "mIoU " << pct(r.miou) << "\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    std::cout << "  class " << c << "  " << (std::isnan(r.per_class[c]) ? "-" : pct(r.per_class[c])) << "\n";
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t v : parse_int_list(s, "--seeds")) seeds.push_back(v);
  if (seeds.empty()) throw ConfigError("--seeds: need at least one seed");
  return seeds;
}

void write_file(const fs::path& path, const std::string& text) { save_text(path, text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ExFuse semantic segmentation on synthetic data"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  std::uint64_t gen_seed = 1;
  std::size_t gen_count = 512, gen_size = 64, gen_classes = 5;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gen_count, "number of samples");
  gen->add_option("--size", gen_size, "image side in pixels");
  gen->add_option("--classes", gen_classes, "classes including background");
  gen->add_option("--out", gen_out, "output .exds file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_model, tr_train, tr_data, tr_out, tr_eval;
  std::size_t tr_log_every = 0;
  tr->add_option("--model-config", tr_model, "model config file")->required();
  tr->add_option("--train-config", tr_train, "training config file")->required();
  tr->add_option("--data", tr_data, "training dataset")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--eval-data", tr_eval, "dataset for periodic evaluation");
  tr->add_option("--log-every", tr_log_every, "steps between loss lines");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data;
  bool ev_flip = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset")->required();
  ev->add_flag("--flip", ev_flip, "average scores with the mirrored image");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate every row of an ablation grid");
  std::string ab_grid, ab_seeds = "1,2,3", ab_out;
  bool ab_flip = false;
  ab->add_option("--grid", ab_grid, "grid file")->required();
  ab->add_option("--seeds", ab_seeds, "comma separated seeds");
  ab->add_option("--out-dir", ab_out, "report directory")->required();
  ab->add_flag("--flip", ab_flip, "flip-averaged evaluation");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  std::string gc_op;
  bool gc_e2e = false, gc_list = false;
  gc->add_option("--op", gc_op, "single check to run");
  gc->add_flag("--e2e", gc_e2e, "end-to-end check on the tiny model");
  gc->add_flag("--list", gc_list, "list check names");

  // export-vis
  auto* vis = app.add_subcommand("export-vis", "Write image | truth | prediction triptychs as PPM");
  std::string vis_ckpt, vis_data, vis_out;
  std::size_t vis_count = 8;
  bool vis_flip = false;
  vis->add_option("--ckpt", vis_ckpt, "checkpoint path")->required();
  vis->add_option("--data", vis_data, "dataset")->required();
  vis->add_option("--out-dir", vis_out, "output directory")->required();
  vis->add_option("--count", vis_count, "number of samples");
  vis->add_flag("--flip", vis_flip, "flip-averaged prediction");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      save_dataset(gen_out, gen_synthetic(gen_seed, gen_count, gen_size, gen_classes));
      std::cout << "wrote " << gen_count << " samples to " << gen_out << "\n";
    } else if (*tr) {
      const ModelConfig mc = load_model_config(tr_model);
      const TrainConfig tc = load_train_config(tr_train);
      const Dataset data = load_dataset(tr_data);
      Dataset eval_data;
      TrainOptions opts;
      opts.log = &std::cout;
      opts.log_every = tr_log_every;
      if (!tr_eval.empty()) {
        eval_data = load_dataset(tr_eval);
        opts.eval_data = &eval_data;
      }
      const TrainResult result = train(mc, tc, data, opts);
      save_trained(tr_out, mc, result.checkpoint);
      std::cout << "saved " << tr_out << " and " << config_sidecar(tr_out).string() << "\n";
    } else if (*ev) {
      print_eval(evaluate_checkpoint(ev_ckpt, load_dataset(ev_data), ev_flip));
    } else if (*ab) {
      const AblationGrid grid = load_ablation_grid(ab_grid);
      if (grid.train_data.empty() || grid.eval_data.empty()) {
        throw ConfigError("ablation grid needs train_data and eval_data");
      }
      const Dataset train_data = load_dataset(grid.train_data);
      const Dataset eval_data = load_dataset(grid.eval_data);
      const auto seeds = parse_seeds(ab_seeds);
      fs::create_directories(ab_out);
      AblationOptions opts;
      opts.flip_average = ab_flip;
      opts.log = &std::cout;
      AblationReport partial{grid.base_model.classes, {}};
      opts.on_run = [&](const AblationRun& run) {
        partial.runs.push_back(run);
        write_file(fs::path(ab_out) / "report.csv", report_to_csv(partial));
      };
      const AblationReport report = ablate(grid, train_data, eval_data, seeds, opts);
      write_file(fs::path(ab_out) / "report.csv", report_to_csv(report));
      const std::string text = format_report(report, grid);
      write_file(fs::path(ab_out) / "report.txt", text);
      std::cout << "\n" << text;
    } else if (*gc) {
      if (gc_list) {
        for (const auto& n : gradient_case_names()) std::cout << n << "\n";
        return 0;
      }
      std::vector<GradCheckResult> results;
      if (gc_e2e) {
        results.push_back(run_end_to_end_check());
      } else if (!gc_op.empty()) {
        results.push_back(run_gradient_case(gc_op));
      } else {
        for (const auto& n : gradient_case_names()) results.push_back(run_gradient_case(n));
        results.push_back(run_end_to_end_check());
      }
      bool ok = true;
      for (const auto& r : results) {
        const double tol = r.name == "end_to_end" ? 1e-4 : 1e-5;
        const bool pass = r.max_rel_error < tol;
        ok = ok && pass;
        std::cout << std::left << std::setw(30) << r.name << (pass ? "ok    " : "FAIL  ") << std::scientific
                  << std::setprecision(2) << r.max_rel_error << "  (" << r.checked << " entries)\n";
      }
      return ok ? 0 : 1;
    } else if (*vis) {
      auto model = load_trained(vis_ckpt);
      const Dataset data = load_dataset(vis_data);
      fs::create_directories(vis_out);
      const std::size_t n = std::min(vis_count, data.size());
      for (std::size_t i = 0; i < n; ++i) {
        const SegSample& s = data.samples[i];
        const Batch<float> batch = make_batch<float>(std::span<const SegSample>(&s, 1));
        const LabelMap pred = predict(*model, batch.images, vis_flip);
        const PpmImage parts[] = {image_to_ppm(s), labels_to_ppm(s.labels, s.h, s.w),
                                  labels_to_ppm(pred.data, s.h, s.w)};
        std::ostringstream name;
        name << "sample_" << std::setw(4) << std::setfill('0') << i << ".ppm";
        write_ppm(fs::path(vis_out) / name.str(), hconcat(parts));
      }
      std::cout << "wrote " << n << " triptychs to " << vis_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
