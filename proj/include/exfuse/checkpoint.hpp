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
#include <string>
#include <vector>

#include "exfuse/nn.hpp"

namespace exfuse {

// Named float32 arrays in the "EXCK" container:
//   "EXCK" | u32 version=1 | u32 entry count |
//   per entry: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 data[prod(dims)]
// All integers and floats little-endian.
struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

template <typename T>
Checkpoint to_checkpoint(const StateDict<T>& state);

// Copies checkpoint values into model state. Every state entry must be
// present with identical dims and there must be no extra entries.
template <typename T>
void apply_checkpoint(const Checkpoint& checkpoint, StateDict<T>& state);

}  // namespace exfuse
