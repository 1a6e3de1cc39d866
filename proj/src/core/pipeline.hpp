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

// The end-to-end attack: identify the victim from its trace, pick the
// matching pre-trained checkpoint from a pool, and extract.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "arch_extract.hpp"
#include "classifier.hpp"
#include "weight_extract.hpp"

namespace finetap {

struct PoolEntry {
  std::string vendor;
  std::string framework;
  std::string arch;
  std::string variant;
  std::filesystem::path path;
};

// Index of "<vendor>_<framework>_<arch>_<variant>.wbin" files. Files that
// do not follow the pattern or fail to parse are skipped with a warning.
class ModelPool {
 public:
  static ModelPool scan(const std::filesystem::path& root);

  const std::vector<PoolEntry>& entries() const { return entries_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool empty() const { return entries_.empty(); }

  // First entry (by variant) with this vendor and framework whose arch has
  // `encoders` encoders and a width consistent with `size`.
  const PoolEntry* find(std::string_view vendor, std::string_view framework, int encoders, SizeClass size) const;

 private:
  std::vector<PoolEntry> entries_;
  std::vector<std::string> warnings_;
};

std::string pool_file_name(std::string_view vendor, Framework framework, std::string_view arch,
                           std::string_view variant);

struct Classifiers {
  std::optional<CnnModel> vendor;
  std::optional<CnnModel> framework;
  std::optional<CnnModel> encoder_count;
};

struct PipelineConfig {
  PlanPolicy policy = PlanPolicy::worked_example;
  SizeCalibration calibration;
};

struct PipelineTiming {
  double classify_s = 0.0;
  double detect_s = 0.0;
  double extract_s = 0.0;
  double verify_s = 0.0;
};

struct PipelineResult {
  ArchitectureHypothesis hypothesis;
  std::optional<std::string> vendor;
  std::optional<std::string> framework;
  std::optional<std::string> selected;  // pool path, as indexed
  std::optional<ExtractionReport> report;
  std::optional<Checkpoint> clone;
  bool degraded = false;
  std::vector<std::string> warnings;
  PipelineTiming timing;
};

// classify -> detect -> pool lookup -> plan -> extract -> verify. `truth`
// enables verification. A failed lookup degrades to an architecture-only
// result. `oracle` may be null, which also stops before extraction.
PipelineResult run_pipeline(const KernelTrace& trace, ProbeOracle* oracle, const ModelPool& pool,
                            const Classifiers& classifiers, const PipelineConfig& config,
                            const Checkpoint* truth = nullptr);

// Timing is left out unless asked for, so identical runs produce identical
// bytes.
std::string pipeline_json(const PipelineResult& r, bool include_timing = false);

struct NoisePoint {
  std::size_t n_kernels;
  double amplitude_us;
};

// Both sweeps of the noise protocol: amplitude 20 us with n = 1, 2, ..., 64,
// then n = 16 with amplitude 5, 10, ..., 45 us.
std::vector<NoisePoint> count_sweep();
std::vector<NoisePoint> amplitude_sweep();

struct SweepResult {
  NoisePoint point;
  std::size_t trials = 0;
  double detector_accuracy = 0.0;
  // Per classifier task that was supplied; NaN otherwise.
  double vendor_accuracy = 0.0;
  double framework_accuracy = 0.0;
  double encoder_accuracy = 0.0;
};

// Trial t of every point uses the same clean trace and noise seed, so the
// perturbed event sets are nested across the count sweep.
std::vector<SweepResult> noise_sweep(const std::vector<NoisePoint>& points, std::size_t trials,
                                     const Classifiers& classifiers, const CorpusSpec& corpus, std::uint64_t seed);

std::string sweep_csv(const std::vector<SweepResult>& rows);

}  // namespace finetap
