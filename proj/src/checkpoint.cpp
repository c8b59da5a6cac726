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

#include "exfuse/checkpoint.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"

namespace exfuse {
namespace {

std::string dims_str(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t d) { return a * d; });
}

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write("EXCK", 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("checkpoint entry name too long: " + e.name.substr(0, 32));
    if (e.dims.size() > 0xFF) throw FormatError("checkpoint entry rank too large: " + e.name);
    if (product(e.dims) != e.values.size()) throw FormatError("checkpoint entry " + e.name + " dims disagree with data");
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) io::write_le<std::uint32_t>(out, d);
    for (float v : e.values) io::write_f32(out, v);
  }
}

Checkpoint read_checkpoint(std::istream& in, const std::string& origin) {
  io::expect_magic(in, "EXCK", origin);
  const auto version = io::read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = io::read_le<std::uint32_t>(in, "checkpoint entry count");
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const auto name_len = io::read_le<std::uint16_t>(in, "entry name length");
    e.name.resize(name_len);
    if (!in.read(e.name.data(), name_len)) throw FormatError(origin + ": truncated entry name");
    const auto rank = io::read_le<std::uint8_t>(in, "entry rank");
    for (std::uint8_t r = 0; r < rank; ++r) e.dims.push_back(io::read_le<std::uint32_t>(in, "entry dims"));
    e.values.resize(product(e.dims));
    for (float& v : e.values) v = io::read_f32(in, "entry " + e.name);
    ck.entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(origin + ": trailing bytes after checkpoint");
  return ck;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
  if (!out) throw FormatError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_checkpoint(in, path.string());
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, checkpoint);
  return out.str();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint(in, origin);
}

template <typename T>
Checkpoint to_checkpoint(const StateDict<T>& state) {
  Checkpoint ck;
  ck.entries.reserve(state.size());
  for (const auto& e : state) {
    ck.entries.push_back(CheckpointEntry{e.name, e.dims, std::vector<float>(e.values.begin(), e.values.end())});
  }
  return ck;
}

template <typename T>
void apply_checkpoint(const Checkpoint& checkpoint, StateDict<T>& state) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : checkpoint.entries) {
    if (!by_name.emplace(e.name, &e).second) throw FormatError("duplicate checkpoint entry " + e.name);
  }
  if (by_name.size() != state.size()) {
    throw ShapeError("checkpoint has " + std::to_string(by_name.size()) + " entries, model expects " +
                     std::to_string(state.size()));
  }
  for (auto& slot : state) {
    auto it = by_name.find(slot.name);
    if (it == by_name.end()) throw ShapeError("checkpoint is missing entry " + slot.name);
    const CheckpointEntry& e = *it->second;
    if (e.dims != slot.dims) {
      throw ShapeError("checkpoint entry " + slot.name + " has dims " + dims_str(e.dims) + ", model expects " +
                       dims_str(slot.dims));
    }
    for (std::size_t i = 0; i < e.values.size(); ++i) slot.values[i] = static_cast<T>(e.values[i]);
  }
}

template Checkpoint to_checkpoint(const StateDict<float>&);
template Checkpoint to_checkpoint(const StateDict<double>&);
template void apply_checkpoint(const Checkpoint&, StateDict<float>&);
template void apply_checkpoint(const Checkpoint&, StateDict<double>&);

}  // namespace exfuse
