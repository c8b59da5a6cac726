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

#include "exfuse/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace exfuse {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string current;
  std::istringstream in(s);
  while (std::getline(in, current, sep)) parts.push_back(trim(current));
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double parse_double(const std::string& s, const std::string& key) {
  double value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": not a number '" + s + "'");
  return value;
}

std::uint64_t parse_uint(const std::string& s, const std::string& key) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(key + ": not a non-negative integer '" + s + "'");
  }
  return value;
}

std::array<std::size_t, kStages> parse_stage_list(const std::string& s, const std::string& key) {
  const auto values = parse_int_list(s, key);
  if (values.size() != kStages) throw ConfigError(key + ": expected exactly 4 values");
  std::array<std::size_t, kStages> out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_string(UpsampleKind kind) { return kind == UpsampleKind::deconv ? "deconv" : "bilinear"; }

UpsampleKind parse_upsample_kind(const std::string& s) {
  if (s == "deconv") return UpsampleKind::deconv;
  if (s == "bilinear") return UpsampleKind::bilinear;
  throw ConfigError("unknown upsample_kind '" + s + "' (expected deconv or bilinear)");
}

void ModelConfig::validate() const {
  if (classes < 2) throw ConfigError("classes must be >= 2");
  if (classes > 255) throw ConfigError("classes must be <= 255 (label bytes reserve 255 for ignore)");
  if (input_size < 32 || input_size % 32 != 0) throw ConfigError("input_size must be a positive multiple of 32");
  plan.validate();
  lr_plan.validate();
  if (dap_k < 1 || dap_k % 2 == 0) throw ConfigError("dap_k must be a positive odd integer");
  if (levels.count(4) == 0) throw ConfigError("levels must contain the top level 4");
  for (int l : levels)
    if (l < 1 || l > 4) throw ConfigError("levels must be drawn from {1,2,3,4}");
  if (decoder_width == 0) throw ConfigError("decoder_width must be positive");
  if (gcn_kernel == 0 || gcn_kernel % 2 == 0) throw ConfigError("gcn_kernel must be odd");
  if (ss_weight < 0 || ecre_weight < 0) throw ConfigError("auxiliary loss weights must be non-negative");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (poly_power <= 0) throw ConfigError("poly_power must be positive");
  if (base_lr <= 0) throw ConfigError("base_lr must be positive");
  if (momentum < 0 || weight_decay < 0) throw ConfigError("momentum and weight_decay must be non-negative");
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(origin + ": duplicate key '" + key + "'");
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string format_int_list(const std::vector<std::size_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

std::vector<std::size_t> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> values;
  for (const auto& part : split(s, ',')) values.push_back(parse_uint(part, key));
  if (values.empty()) throw ConfigError(key + ": empty list");
  return values;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

ModelConfig apply_model_keys(ModelConfig c, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "classes") c.classes = parse_uint(value, key);
    else if (key == "input_size") c.input_size = parse_uint(value, key);
    else if (key == "ss") c.ss = parse_bool(value, key);
    else if (key == "lr") c.lr = parse_bool(value, key);
    else if (key == "ecre") c.ecre = parse_bool(value, key);
    else if (key == "seb") c.seb = parse_bool(value, key);
    else if (key == "dap") c.dap = parse_bool(value, key);
    else if (key == "ecre_variant") c.ecre_variant = parse_ecre_variant(value);
    else if (key == "dap_k") c.dap_k = static_cast<int>(parse_uint(value, key));
    else if (key == "levels") {
      c.levels.clear();
      for (std::size_t l : parse_int_list(value, key)) {
        if (!c.levels.insert(static_cast<int>(l)).second) throw ConfigError("levels: duplicate level");
      }
    } else if (key == "upsample_kind") c.upsample_kind = parse_upsample_kind(value);
    else if (key == "ss_weight") c.ss_weight = parse_double(value, key);
    else if (key == "ecre_weight") c.ecre_weight = parse_double(value, key);
    else if (key == "decoder_width") c.decoder_width = parse_uint(value, key);
    else if (key == "gcn_kernel") c.gcn_kernel = parse_uint(value, key);
    else if (key == "ss_tap_width") c.ss_tap_width = parse_uint(value, key);
    else if (key == "plan_blocks") c.plan.blocks = parse_stage_list(value, key);
    else if (key == "plan_widths") c.plan.widths = parse_stage_list(value, key);
    else if (key == "plan_stem") c.plan.stem_width = parse_uint(value, key);
    else if (key == "lr_plan_blocks") c.lr_plan.blocks = parse_stage_list(value, key);
    else if (key == "lr_plan_widths") c.lr_plan.widths = parse_stage_list(value, key);
    else if (key == "lr_plan_stem") c.lr_plan.stem_width = parse_uint(value, key);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig apply_train_keys(TrainConfig c, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "epochs") c.epochs = parse_uint(value, key);
    else if (key == "batch_size") c.batch_size = parse_uint(value, key);
    else if (key == "base_lr") c.base_lr = parse_double(value, key);
    else if (key == "momentum") c.momentum = parse_double(value, key);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
    else if (key == "poly_power") c.poly_power = parse_double(value, key);
    else if (key == "seed") c.seed = parse_uint(value, key);
    else if (key == "eval_every") c.eval_every = parse_uint(value, key);
    else if (key == "augment") c.augment = parse_bool(value, key);
    else if (key == "freeze_bn") c.freeze_bn = parse_bool(value, key);
    else throw ConfigError("unknown train config key '" + key + "'");
  }
  c.validate();
  return c;
}

ModelConfig parse_model_config(const std::string& text) {
  return apply_model_keys(ModelConfig{}, parse_key_values(text, "model config"));
}

TrainConfig parse_train_config(const std::string& text) {
  return apply_train_keys(TrainConfig{}, parse_key_values(text, "train config"));
}

std::string emit_model_config(const ModelConfig& c) {
  std::ostringstream out;
  auto list = [](const std::array<std::size_t, kStages>& a) {
    return format_int_list(std::vector<std::size_t>(a.begin(), a.end()));
  };
  std::vector<std::size_t> levels(c.levels.begin(), c.levels.end());
  out << "classes = " << c.classes << "\n"
      << "input_size = " << c.input_size << "\n"
      << "ss = " << bool_str(c.ss) << "\n"
      << "lr = " << bool_str(c.lr) << "\n"
      << "ecre = " << bool_str(c.ecre) << "\n"
      << "seb = " << bool_str(c.seb) << "\n"
      << "dap = " << bool_str(c.dap) << "\n"
      << "ecre_variant = " << to_string(c.ecre_variant) << "\n"
      << "dap_k = " << c.dap_k << "\n"
      << "levels = " << format_int_list(levels) << "\n"
      << "upsample_kind = " << to_string(c.upsample_kind) << "\n"
      << "ss_weight = " << format_number(c.ss_weight) << "\n"
      << "ecre_weight = " << format_number(c.ecre_weight) << "\n"
      << "decoder_width = " << c.decoder_width << "\n"
      << "gcn_kernel = " << c.gcn_kernel << "\n"
      << "ss_tap_width = " << c.ss_tap_width << "\n"
      << "plan_blocks = " << list(c.plan.blocks) << "\n"
      << "plan_widths = " << list(c.plan.widths) << "\n"
      << "plan_stem = " << c.plan.stem_width << "\n"
      << "lr_plan_blocks = " << list(c.lr_plan.blocks) << "\n"
      << "lr_plan_widths = " << list(c.lr_plan.widths) << "\n"
      << "lr_plan_stem = " << c.lr_plan.stem_width << "\n";
  return out.str();
}

std::string emit_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "base_lr = " << format_number(c.base_lr) << "\n"
      << "momentum = " << format_number(c.momentum) << "\n"
      << "weight_decay = " << format_number(c.weight_decay) << "\n"
      << "poly_power = " << format_number(c.poly_power) << "\n"
      << "seed = " << c.seed << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "augment = " << bool_str(c.augment) << "\n"
      << "freeze_bn = " << bool_str(c.freeze_bn) << "\n";
  return out.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  return apply_model_keys(ModelConfig{}, parse_key_values(read_text(path), path.string()));
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return apply_train_keys(TrainConfig{}, parse_key_values(read_text(path), path.string()));
}

std::string describe_overrides(const KeyValues& overrides) {
  std::string s;
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    s += (i ? "; " : "") + overrides[i].first + "=" + overrides[i].second;
  }
  return s;
}

KeyValues parse_overrides(const std::string& text) {
  KeyValues kv;
  std::unordered_set<std::string> seen;
  for (const auto& item : split(text, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
    std::string key = trim(item.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("duplicate override key '" + key + "'");
    kv.emplace_back(key, trim(item.substr(eq + 1)));
  }
  return kv;
}

}  // namespace exfuse
