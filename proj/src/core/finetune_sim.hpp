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

// Synthetic stand-ins for released pre-trained checkpoints, their fine-tuned
// descendants, and unrelated checkpoints of the same shape.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"

namespace finetap {

struct ArchSpec {
  int encoder_count = 12;
  int hidden = 768;
  int heads = 12;
  bool has_task_layer = true;
  int task_labels = 2;

  int head_dim() const { return hidden / heads; }
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

ArchSpec arch_base();   // 12 encoders, 768 hidden, 12 heads
ArchSpec arch_large();  // 24 encoders, 1024 hidden, 16 heads
// Throws invalid_argument on non-positive sizes or hidden % heads != 0.
void validate(const ArchSpec& arch);

// "base", "large", or "e<encoders>h<hidden>" (heads = hidden / 64, min 1).
std::string arch_label(const ArchSpec& arch);
std::optional<ArchSpec> parse_arch_label(std::string_view label);

// Tensor naming shared by the generators, similarity and extraction code.
std::string encoder_tensor_name(int layer, char which);  // which: 'q', 'k', 'v'
inline constexpr std::string_view kTaskLayerName = "classifier.weight";
bool is_task_layer(std::string_view tensor_name);
ArchSpec arch_from_metadata(const Checkpoint& ckpt);

// Magnitude model of a generated checkpoint. A weight is "small"
// (|w| < 0.001, exactly floor(fraction * N) of them per tensor), "body"
// (|w| = 0.001 + Exp(body_mean)) or, rarely, "tail" (log-uniform in
// [1, max_abs]). One designated weight per tensor is pinned at +-max_abs.
struct MagnitudeModel {
  double small_weight_fraction = 0.90;
  double body_mean = 0.445;
  double tail_fraction = 0.0005;
  double max_abs = 26.3;
};

inline constexpr double kSmallWeightThreshold = 0.001;

Checkpoint gen_base(const ArchSpec& arch, std::uint64_t seed, const MagnitudeModel& model = {});

struct DeltaModel {
  double sigma_encoder = 0.001;
  double sigma_last_layer = 0.012;
  // Upper bound on the per-tensor fraction of weights whose sign changes;
  // excess would-be flips are reflected (delta -> -delta), which keeps the
  // |delta| distribution intact.
  double sign_flip_target = 0.01;
  double small_weight_fraction = 0.90;
  // Optional per-epoch mean-|delta| targets for encoder tensors.
  std::vector<double> epochs;
  // Task-layer drift saturates as 1 - exp(-epoch / tau).
  double last_layer_tau = 3.0;
};

void validate(const DeltaModel& dm);

// Drift schedule shaped like a 30-epoch fine-tuning run: rises to a peak
// around epoch 9, then decays linearly.
std::vector<double> default_epoch_schedule();

Checkpoint apply_finetune(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed);
// `epoch` is 1-based into dm.epochs.
Checkpoint apply_finetune_epoch(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed,
                                int epoch);

struct DriftPoint {
  int epoch;
  double encoder_mean_abs_delta;
  double last_layer_mean_abs_delta;
};
std::vector<DriftPoint> drift_curve(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed);

struct IndependentOptions {
  double gap_lo = 0.075;
  double gap_hi = 0.1;
  // Magnitude model of the checkpoints this one will be compared against.
  MagnitudeModel reference{};
};

// Expected mean |a - b| between two independent draws from the models.
double expected_mean_gap(const MagnitudeModel& a, const MagnitudeModel& b);

// Fresh draw whose body scale is calibrated so the expected mean gap to a
// `reference`-distributed checkpoint sits at the band midpoint.
Checkpoint gen_independent(const ArchSpec& arch, std::uint64_t seed, const IndependentOptions& opts = {});
MagnitudeModel calibrate_independent(const IndependentOptions& opts);

}  // namespace finetap
