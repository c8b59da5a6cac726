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

#include "exfuse/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "exfuse/errors.hpp"
#include "exfuse/optim.hpp"

namespace exfuse {

namespace {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void check_data(const ModelConfig& config, const Dataset& data, const std::string& what) {
  if (data.size() == 0) throw ConfigError(what + ": dataset is empty");
  if (data.classes != config.classes) {
    throw ConfigError(what + ": dataset has " + std::to_string(data.classes) + " classes, model expects " +
                      std::to_string(config.classes));
  }
  if (data.h != config.input_size || data.w != config.input_size) {
    throw ShapeError(what + ": dataset images are " + std::to_string(data.h) + "x" + std::to_string(data.w) +
                     ", model expects " + std::to_string(config.input_size));
  }
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

std::size_t total_iterations(const TrainConfig& config, std::size_t samples) {
  return config.epochs * ((samples + config.batch_size - 1) / config.batch_size);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t samples) {
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const Dataset& data,
                  const TrainOptions& options) {
  model_config.validate();
  train_config.validate();
  check_data(model_config, data, "train");
  if (options.eval_data) check_data(model_config, *options.eval_data, "train (eval data)");

  ExFuseModel<float> model(model_config, train_config.seed);
  Sgd<float> sgd(model.parameters(), static_cast<float>(train_config.momentum),
                 static_cast<float>(train_config.weight_decay));
  const std::size_t max_iter = total_iterations(train_config, data.size());
  const std::uint64_t augment_seed = derive_seed(train_config.seed, 0xA116);

  TrainResult result;
  std::size_t iter = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto order = epoch_order(train_config.seed, epoch, data.size());
    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + train_config.batch_size);
      std::vector<SegSample> samples;
      for (std::size_t k = start; k < stop; ++k) {
        const SegSample& s = data.samples[order[k]];
        samples.push_back(train_config.augment ? augment(s, derive_seed(augment_seed, iter * 4096 + k - start)) : s);
      }
      const Batch<float> batch = make_batch<float>(samples);
      StepRecord rec{iter, epoch, poly_learning_rate(train_config.base_lr, iter, max_iter, train_config.poly_power), {}};
      try {
        const ForwardOutputs<float> out = model.forward(batch.images, !train_config.freeze_bn);
        const Tensor<float> loss = total_loss(out, batch.labels, model_config, &rec.loss);
        sgd.zero_grad();
        backward(loss);
        sgd.step(static_cast<float>(rec.lr));
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", iteration " +
                              std::to_string(iter) + " (lr " + format_number(rec.lr) + "): " + e.what());
      }
      if (!std::isfinite(rec.loss.total)) {
        throw DivergenceError("training diverged at iteration " + std::to_string(iter) + ": loss is not finite");
      }
      if (options.log && options.log_every && iter % options.log_every == 0) {
        *options.log << "iter " << iter << " lr " << format_number(rec.lr) << " loss " << fixed(rec.loss.total, 5)
                     << " (main " << fixed(rec.loss.main, 5) << ", ss " << fixed(rec.loss.ss, 5) << ", ecre "
                     << fixed(rec.loss.ecre, 5) << ")\n";
      }
      epoch_loss += rec.loss.total;
      ++epoch_steps;
      result.steps.push_back(rec);
      ++iter;
    }
    if (options.log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *options.log << "epoch " << epoch + 1 << "/" << train_config.epochs << " mean loss "
                   << fixed(epoch_loss / static_cast<double>(epoch_steps), 5) << " (" << fixed(secs, 1) << " s)" << std::endl;
    }
    if (train_config.eval_every && options.eval_data && (epoch + 1) % train_config.eval_every == 0) {
      const EvalResult ev = evaluate(model, *options.eval_data, false);
      result.evals.emplace_back(epoch + 1, ev.miou);
      if (options.log) *options.log << "epoch " << epoch + 1 << " eval mIoU " << fixed(100 * ev.miou, 2) << "\n";
    }
  }
  result.checkpoint = to_checkpoint(model.state());
  return result;
}

EvalResult evaluate(ExFuseModel<float>& model, const Dataset& data, bool flip_average, std::size_t batch_size) {
  check_data(model.config(), data, "evaluate");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  EvalResult result{0, {}, ConfusionMatrix(data.classes)};
  const std::span<const SegSample> all(data.samples);
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const auto chunk = all.subspan(start, std::min(batch_size, all.size() - start));
    const Batch<float> batch = make_batch<float>(chunk);
    result.confusion.add(batch.labels, predict(model, batch.images, flip_average));
  }
  result.per_class = per_class_iou(result.confusion);
  result.miou = miou(result.confusion);
  return result;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint_path) {
  return checkpoint_path.string() + ".model.cfg";
}

void save_trained(const std::filesystem::path& path, const ModelConfig& config, const Checkpoint& checkpoint) {
  save_checkpoint(path, checkpoint);
  save_text(config_sidecar(path), emit_model_config(config));
}

std::unique_ptr<ExFuseModel<float>> model_from_checkpoint(const ModelConfig& config, const Checkpoint& checkpoint) {
  auto model = std::make_unique<ExFuseModel<float>>(config, 0);
  StateDict<float> state = model->state();
  apply_checkpoint(checkpoint, state);
  return model;
}

std::unique_ptr<ExFuseModel<float>> load_trained(const std::filesystem::path& path) {
  const ModelConfig config = load_model_config(config_sidecar(path));
  return model_from_checkpoint(config, load_checkpoint(path));
}

EvalResult evaluate_checkpoint(const std::filesystem::path& path, const Dataset& data, bool flip_average) {
  auto model = load_trained(path);
  return evaluate(*model, data, flip_average);
}

// ---- Ablation ----

AblationGrid parse_ablation_grid(const std::string& text, const std::filesystem::path& base_dir) {
  const KeyValues kv = parse_key_values(text, "ablation grid");
  AblationGrid grid;
  KeyValues model_keys, train_keys;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  for (const auto& [key, value] : kv) {
    if (key == "train_config") {
      grid.train = load_train_config(resolve(value));
    } else if (key == "model_config") {
      grid.base_model = load_model_config(resolve(value));
    } else if (key == "train_data") {
      grid.train_data = resolve(value);
    } else if (key == "eval_data") {
      grid.eval_data = resolve(value);
    } else if (key.rfind("train.", 0) == 0) {
      train_keys.emplace_back(key.substr(6), value);
    } else if (key.rfind("model.", 0) == 0) {
      model_keys.emplace_back(key.substr(6), value);
    } else if (key.rfind("row.", 0) == 0 && key.size() > 4) {
      grid.rows.push_back({key.substr(4), parse_overrides(value)});
    } else {
      throw ConfigError("ablation grid: unknown key '" + key + "'");
    }
  }
  grid.base_model = apply_model_keys(grid.base_model, model_keys);
  grid.train = apply_train_keys(grid.train, train_keys);
  grid.base_model.validate();
  grid.train.validate();
  if (grid.rows.empty()) throw ConfigError("ablation grid: no rows");
  for (const auto& row : grid.rows) row_model_config(grid, row).validate();
  return grid;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  return parse_ablation_grid(read_text(path), path.parent_path());
}

ModelConfig row_model_config(const AblationGrid& grid, const AblationRowSpec& row) {
  return apply_model_keys(grid.base_model, row.overrides);
}

AblationReport ablate(const AblationGrid& grid, const Dataset& train_data, const Dataset& eval_data,
                      std::span<const std::uint64_t> seeds, const AblationOptions& options) {
  AblationReport report{grid.base_model.classes, {}};
  for (const auto& row : grid.rows) {
    const ModelConfig config = row_model_config(grid, row);
    for (std::uint64_t seed : seeds) {
      TrainConfig tc = grid.train;
      tc.seed = seed;
      AblationRun run{row.name, describe_overrides(row.overrides), seed, "ok", 0, 0, {}};
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const TrainResult trained = train(config, tc, train_data);
        auto model = model_from_checkpoint(config, trained.checkpoint);
        const EvalResult plain = evaluate(*model, eval_data, false);
        const EvalResult flipped = evaluate(*model, eval_data, true);
        const EvalResult& ev = options.flip_average ? flipped : plain;
        run.miou = ev.miou;
        run.miou_flip = flipped.miou;
        run.per_class = ev.per_class;
      } catch (const DivergenceError& e) {
        run.status = e.what();
        run.miou = run.miou_flip = std::nan("");
        run.per_class.assign(config.classes, std::nan(""));
      }
      if (options.log) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        *options.log << "[" << row.name << " seed " << seed << "] "
                     << (run.status == "ok" ? "mIoU " + fixed(100 * run.miou, 2) : run.status) << " ("
                     << fixed(secs, 1) << " s)" << std::endl;
      }
      if (options.on_run) options.on_run(run);
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<RowSummary> summarize(const AblationReport& report) {
  std::vector<RowSummary> out;
  for (const AblationRun& run : report.runs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const RowSummary& s) { return s.row == run.row; });
    if (it == out.end()) {
      out.push_back({run.row, run.description, {}, 0, 0, 0});
      it = out.end() - 1;
    }
    if (run.status == "ok") {
      it->mious.push_back(run.miou);
    } else {
      ++it->failed;
    }
  }
  for (RowSummary& s : out) {
    s.median = median(s.mious);
    s.mean = s.mious.empty() ? std::nan("")
                             : std::accumulate(s.mious.begin(), s.mious.end(), 0.0) / static_cast<double>(s.mious.size());
  }
  return out;
}

const RowSummary& find_summary(const std::vector<RowSummary>& summaries, const std::string& row) {
  for (const auto& s : summaries)
    if (s.row == row) return s;
  throw ConfigError("no ablation row named '" + row + "'");
}

namespace {

std::string levels_str(const std::set<int>& levels) {
  std::string s = "{";
  for (int l : levels) s += (s.size() > 1 ? "," : "") + std::to_string(l);
  return s + "}";
}

const AblationRowSpec* find_row(const AblationGrid& grid, const std::string& name) {
  for (const auto& r : grid.rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::string pct(double v) { return std::isnan(v) ? "-" : fixed(100 * v, 2); }

class TextTable {
 public:
  void add(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
  std::string str() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_)
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (width.size() <= i) width.push_back(0);
        width[i] = std::max(width[i], r[i].size());
      }
    std::ostringstream out;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      std::string line;
      for (std::size_t i = 0; i < rows_[k].size(); ++i) {
        std::string cell = rows_[k][i];
        if (i + 1 < rows_[k].size()) cell.resize(width[i], ' ');
        line += (i ? "  " : "") + cell;
      }
      out << line << "\n";
      if (k == 0) out << std::string(line.size(), '-') << "\n";
    }
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

const char* kReferenceFooter =
    "Published full-scale results (VOC 2012 val, single runs):\n"
    "  mechanisms:  baseline 76.0 | +SS 77.5 | +LR 78.3 | +ECRE 78.8 | +SEB 79.0 | +DAP 79.6 | all 80.0\n"
    "  ECRE forms:  baseline 78.3 | deconv+supervised 78.2 | shuffle only 77.6 | ECRE 78.8\n"
    "  levels:      GCN {4} 73.79, {3,4} 75.97, {2,3,4} 75.98, {1,2,3,4} 76.02\n"
    "               ExFuse {4} 77.29, {3,4} 78.69, {2,3,4} 79.11, {1,2,3,4} 80.04\n"
    "Toy-scale numbers are not comparable in magnitude; only orderings are meaningful.\n";

}  // namespace

std::string format_report(const AblationReport& report, const AblationGrid& grid) {
  const auto summaries = summarize(report);
  std::size_t max_seeds = 0;
  for (const auto& s : summaries) max_seeds = std::max(max_seeds, s.mious.size() + s.failed);
  TextTable table;
  std::vector<std::string> header{"row", "SS", "LR", "ECRE", "SEB", "DAP", "levels", "ecre form", "median", "mean"};
  table.add(header);
  for (const auto& s : summaries) {
    const AblationRowSpec* spec = find_row(grid, s.row);
    const ModelConfig c = spec ? row_model_config(grid, *spec) : grid.base_model;
    auto mark = [](bool on) { return std::string(on ? "x" : ""); };
    std::vector<std::string> cells{s.row, mark(c.ss), mark(c.lr), mark(c.ecre), mark(c.seb), mark(c.dap),
                                   levels_str(c.levels), c.ecre ? to_string(c.ecre_variant) : "",
                                   pct(s.median), pct(s.mean)};
    if (s.failed) cells.push_back(std::to_string(s.failed) + " diverged");
    table.add(cells);
  }
  std::ostringstream out;
  out << "mIoU (%) per row, median and mean over seeds\n\n" << table.str() << "\n";

  TextTable runs;
  runs.add({"row", "seed", "mIoU", "flip mIoU", "status"});
  double delta = 0;
  std::size_t ok = 0;
  for (const auto& r : report.runs) {
    runs.add({r.row, std::to_string(r.seed), pct(r.miou), pct(r.miou_flip), r.status});
    if (r.status != "ok") continue;
    delta += r.miou_flip - r.miou;
    ++ok;
  }
  out << "Individual runs\n\n" << runs.str() << "\n";
  // Only meaningful when the primary numbers are single-view.
  if (ok) out << "Flip averaging, mean change over " << ok << " runs: " << fixed(100 * delta / double(ok), 2) << " points\n\n";
  const std::string levels = format_level_table(report, grid);
  if (!levels.empty()) out << levels << "\n";
  out << kReferenceFooter;
  return out.str();
}

std::string format_level_table(const AblationReport& report, const AblationGrid& grid) {
  const auto summaries = summarize(report);
  std::vector<std::string> methods;
  std::vector<std::set<int>> columns;
  std::map<std::pair<std::string, std::set<int>>, double> cell;
  std::map<std::string, std::string> method_label;
  for (const auto& s : summaries) {
    const AblationRowSpec* spec = find_row(grid, s.row);
    if (!spec) continue;
    ModelConfig c = row_model_config(grid, *spec);
    const std::set<int> levels = c.levels;
    c.levels = ModelConfig{}.levels;
    const std::string key = emit_model_config(c);
    if (std::find(methods.begin(), methods.end(), key) == methods.end()) {
      methods.push_back(key);
      method_label[key] = s.row;
    }
    if (std::find(columns.begin(), columns.end(), levels) == columns.end()) columns.push_back(levels);
    cell[{key, levels}] = s.median;
  }
  if (columns.size() < 2) return "";
  std::sort(columns.begin(), columns.end(), [](const std::set<int>& a, const std::set<int>& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  TextTable table;
  std::vector<std::string> header{"method (first row)"};
  for (const auto& col : columns) header.push_back(levels_str(col));
  table.add(header);
  for (const auto& m : methods) {
    std::vector<std::string> cells{method_label[m]};
    for (const auto& col : columns) {
      auto it = cell.find({m, col});
      cells.push_back(it == cell.end() ? "" : pct(it->second));
    }
    table.add(cells);
  }
  return "Median mIoU (%) by fused feature levels\n\n" + table.str();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("csv: bad number '" + s + "'");
  return v;
}

}  // namespace

std::string report_to_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "row,description,seed,status,miou,miou_flip";
  for (std::size_t c = 0; c < report.classes; ++c) out << ",iou_" << c;
  out << "\n";
  for (const auto& r : report.runs) {
    out << csv_field(r.row) << "," << csv_field(r.description) << "," << r.seed << "," << csv_field(r.status) << ","
        << format_number(r.miou) << "," << format_number(r.miou_flip);
    for (double v : r.per_class) out << "," << format_number(v);
    out << "\n";
  }
  return out.str();
}

AblationReport report_from_csv(const std::string& csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty() || rows[0].size() < 6 || rows[0][0] != "row") throw FormatError("csv: missing header");
  AblationReport report{rows[0].size() - 6, {}};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != rows[0].size()) throw FormatError("csv: line " + std::to_string(i + 1) + " has wrong field count");
    AblationRun run{f[0], f[1], std::stoull(f[2]), f[3], parse_double(f[4]), parse_double(f[5]), {}};
    for (std::size_t c = 6; c < f.size(); ++c) run.per_class.push_back(parse_double(f[c]));
    report.runs.push_back(std::move(run));
  }
  return report;
}

}  // namespace exfuse
