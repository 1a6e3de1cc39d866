// Copyright 2026 The finetap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "float_format.hpp"

namespace finetap {

struct WeightTensor {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major; values exactly representable in dtype

  FloatFormat format() const { return format_of(dtype); }
  std::size_t element_count() const;
  std::size_t rows() const { return dims.empty() ? 1 : dims.front(); }
  std::size_t cols() const { return dims.size() < 2 ? element_count() : element_count() / rows(); }
};

// Ordered tensors plus ordered string metadata. The keys "vendor",
// "framework" and "arch" are always present.
class Checkpoint {
 public:
  using Metadata = std::vector<std::pair<std::string, std::string>>;

  Checkpoint();
  // Validates required keys; used by the reader.
  explicit Checkpoint(Metadata metadata);

  const std::vector<WeightTensor>& tensors() const { return tensors_; }
  std::vector<WeightTensor>& mutable_tensors() { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  // Throws duplicate_name / shape_mismatch.
  void add(WeightTensor tensor);
  const WeightTensor* find(std::string_view name) const;
  const WeightTensor& at(std::string_view name) const;

  const Metadata& metadata() const { return metadata_; }
  std::optional<std::string> meta(std::string_view key) const;
  std::string meta_or(std::string_view key, std::string fallback) const;
  // Replaces in place, or appends when absent.
  void set_meta(std::string key, std::string value);

  std::size_t weight_count() const;

 private:
  std::vector<WeightTensor> tensors_;
  Metadata metadata_;
};

inline constexpr std::string_view kRequiredMetaKeys[] = {"vendor", "framework", "arch"};

// WBIN, little-endian:
//   "WBN1" | u32 tensor_count | u32 metadata_count
//   | metadata: (u16 key_len, key, u16 val_len, val)*
//   | tensors: (u16 name_len, name, u8 dtype, u8 rank, u32 dims[rank], payload)*
//   | u32 CRC-32 over all payload bytes
void write_wbin(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_wbin(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_wbin(const Checkpoint& ckpt);
Checkpoint decode_wbin(const std::vector<std::uint8_t>& bytes);

// Narrow every f32 tensor to `target` with round-to-nearest-even. Records
// "format" and "quantize_saturated" in metadata.
Checkpoint quantize_checkpoint(const Checkpoint& ckpt, FloatFormat target);

// Writes `bytes` to path via a temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace finetap
