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

// Selective weight checking: decide which fraction bits of which weights
// are worth reading from the victim, read them through a (simulated) probe,
// splice them into a copy of the pre-trained weights, and score the clone.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "float_format.hpp"
#include "rng.hpp"

namespace finetap {

inline constexpr double kSkipThreshold = 0.001;
inline constexpr double kProbeWindow = 0.002;

enum class PlanPolicy { algorithm1, worked_example };
std::string_view policy_name(PlanPolicy p);
std::optional<PlanPolicy> parse_policy(std::string_view name);

// Fraction bits to probe for one base value; empty when the weight is
// skipped. Bits are 1-based from the top of the fraction field.
std::vector<int> probe_bits_for(float base, PlanPolicy policy, FloatFormat format);

struct ProbeEntry {
  std::uint32_t tensor;  // index into BitCheckPlan::tensors
  std::uint32_t index;   // flat element index
  std::uint8_t bit_count;
  std::uint8_t bits[2];
  float window_lo;  // base - 0.002
  float window_hi;  // base + 0.002
};

struct PlanTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::size_t weights = 0;
  std::size_t probed = 0;
  std::size_t bits = 0;
  bool low_confidence = false;  // task layer: similarity is weak there
};

// Weights absent from `entries` are skip-clone-base.
struct BitCheckPlan {
  PlanPolicy policy = PlanPolicy::worked_example;
  FloatFormat format = kF32;
  std::vector<PlanTensor> tensors;
  std::vector<ProbeEntry> entries;  // sorted by (tensor, index)
  std::size_t weights_total = 0;
  std::size_t weights_probed = 0;
  std::size_t bits_probed = 0;

  std::size_t bits_total() const { return weights_total * static_cast<std::size_t>(format.width()); }
};

// Every tensor of `base` must be stored in `format`.
BitCheckPlan plan_bits(const Checkpoint& base, PlanPolicy policy, FloatFormat format);

struct ProbeRecord {
  std::string tensor;
  std::uint32_t index;
  int bit;
  bool value;
};

class ProbeOracle {
 public:
  ProbeOracle(Checkpoint victim, double error_rate = 0.0, std::uint64_t seed = 1);

  // One fraction bit of the victim weight, flipped with probability
  // error_rate.
  bool probe(std::string_view tensor, std::size_t index, int bit);

  std::uint64_t probe_count() const { return probe_count_; }
  double error_rate() const { return error_rate_; }
  const Checkpoint& victim() const { return victim_; }

  void set_record(bool on) { record_ = on; }
  const std::vector<ProbeRecord>& transcript() const { return transcript_; }

 private:
  Checkpoint victim_;
  double error_rate_;
  Rng rng_;
  std::uint64_t probe_count_ = 0;
  bool record_ = false;
  std::vector<ProbeRecord> transcript_;
};

// "tensor,index,bit,value" with a header line.
std::string transcript_csv(const std::vector<ProbeRecord>& records);

struct ExtractionReport {
  std::size_t weights_total = 0;
  std::size_t weights_excluded = 0;
  std::size_t weights_probed = 0;
  std::size_t bits_total = 0;
  std::size_t bits_excluded = 0;
  std::size_t probes_issued = 0;
  // Filled by verify.
  bool verified = false;
  std::size_t weights_correct = 0;
  std::size_t weights_correctly_excluded = 0;
  std::size_t bits_correctly_excluded = 0;
  std::size_t bits_of_correct_weights = 0;
  double correct_fraction = 0.0;
  double mean_probed_error = 0.0;  // mean |clone - victim| over probed weights
  double mean_error = 0.0;         // over all weights
  std::vector<std::string> low_confidence;

  double raw_weight_exclusion() const;
  double correct_weight_exclusion() const;
  double raw_bit_exclusion() const;
  double correct_bit_exclusion() const;
  // Correctly excluded bits over the bits of correct weights only.
  double correct_bit_exclusion_of_correct() const;
};

struct ExtractionResult {
  Checkpoint clone;
  ExtractionReport report;
};

// Clone = base with each planned bit overwritten by the oracle's read.
ExtractionResult extract(const BitCheckPlan& plan, ProbeOracle& oracle, const Checkpoint& base);

// Correct iff |clone - victim| <= 0.002 and the sign bits agree.
bool weight_correct(float clone, float victim);

// Scores `clone` against the victim; keeps the plan-derived counts and
// probes_issued from `report` when given.
ExtractionReport verify(const Checkpoint& clone, const Checkpoint& victim, const BitCheckPlan& plan,
                        const ExtractionReport* report = nullptr);

// Truncates each value toward zero at the third decimal of its shortest
// decimal form: 0.0013 -> 0.001, -0.0027 -> -0.002.
float truncate_value(float v);
Checkpoint truncate_below(const Checkpoint& ckpt);

std::string plan_json(const BitCheckPlan& plan, bool include_entries = false);
std::string report_json(const ExtractionReport& report);

}  // namespace finetap
