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
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "exfuse/blocks.hpp"
#include "exfuse/encoder.hpp"

namespace exfuse {

enum class UpsampleKind { deconv, bilinear };

std::string to_string(UpsampleKind kind);
UpsampleKind parse_upsample_kind(const std::string& s);

// Declarative description of one model variant.
struct ModelConfig {
  std::size_t classes = 5;
  std::size_t input_size = 64;
  StagePlan plan = baseline_plan();
  StagePlan lr_plan = rearranged_plan();

  // Mechanism toggles.
  bool ss = false;    // semantic supervision heads, taps feed the decoder
  bool lr = false;    // use lr_plan instead of plan
  bool ecre = false;  // replace the level 4 -> 3 upsampling by ecre_variant
  bool seb = false;   // semantic embedding branch on levels 1-3
  bool dap = false;   // densely adjacent prediction head

  EcreVariant ecre_variant = EcreVariant::ecre;
  int dap_k = 3;
  std::set<int> levels{1, 2, 3, 4};
  UpsampleKind upsample_kind = UpsampleKind::deconv;
  double ss_weight = 0.4;
  double ecre_weight = 0.4;
  std::size_t decoder_width = 32;
  std::size_t gcn_kernel = 7;
  std::size_t ss_tap_width = 0;  // 0 keeps each stage's width

  void validate() const;
  const StagePlan& active_plan() const { return lr ? lr_plan : plan; }
  bool uses_level(int level) const { return levels.count(level) != 0; }
  std::size_t decoder_output_channels() const {
    return dap ? classes * static_cast<std::size_t>(dap_k * dap_k) : classes;
  }
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // epochs between evaluations, 0 = off
  bool augment = true;
  bool freeze_bn = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Ordered `key = value` pairs. '#' starts a comment line; blank lines are
// skipped; duplicate keys and lines without '=' are errors.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");

std::string format_number(double value);
std::string format_int_list(const std::vector<std::size_t>& values);
std::vector<std::size_t> parse_int_list(const std::string& s, const std::string& key);
bool parse_bool(const std::string& s, const std::string& key);

// Applies keys on top of `base`; unknown keys are rejected.
ModelConfig apply_model_keys(ModelConfig base, const KeyValues& kv);
TrainConfig apply_train_keys(TrainConfig base, const KeyValues& kv);

ModelConfig parse_model_config(const std::string& text);
TrainConfig parse_train_config(const std::string& text);
std::string emit_model_config(const ModelConfig& config);
std::string emit_train_config(const TrainConfig& config);

ModelConfig load_model_config(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);
void save_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Compact "ss=true; lr=true" style override list, the row description used by
// ablation reports. Keys are model-config keys.
std::string describe_overrides(const KeyValues& overrides);
KeyValues parse_overrides(const std::string& text);

}  // namespace exfuse
