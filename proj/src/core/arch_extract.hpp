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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trace_sim.hpp"

namespace finetap {

using IndexRange = std::pair<std::size_t, std::size_t>;  // [first, second)

struct PeriodResult {
  bool found = false;
  std::size_t unit_length = 0;
  std::size_t count = 0;
  std::size_t start = 0;
  std::vector<IndexRange> boundaries;
  // Offset of the longest-duration event inside the first unit.
  std::size_t anchor_offset = 0;
  // Matching positions at the chosen lag over the number of lags compared.
  double score = 0.0;
};

// Exact-match autocorrelation over the kernel-id sequence. `durations` is
// optional and only used for the anchor.
PeriodResult detect_period(std::span<const std::uint32_t> kids, std::span<const std::int64_t> durations = {});
PeriodResult detect_period(const KernelTrace& trace);

enum class RegionKind { prologue, encoder, xla, epilogue };
std::string_view region_kind_name(RegionKind k);

struct Region {
  RegionKind kind;
  std::size_t begin;
  std::size_t end;
};

struct RegionAnalysis {
  std::vector<Region> regions;  // tiles [0, events)
  PeriodResult period;          // boundaries in trace coordinates
  std::optional<IndexRange> xla;
};

inline constexpr std::size_t kRegionWindow = 64;
inline constexpr std::size_t kRegionStride = 16;

RegionAnalysis locate_regions(const KernelTrace& trace);

enum class SizeClass { base_like, large_like, unknown };
std::string_view size_class_name(SizeClass s);

// Peak-duration thresholds per framework family; NaN means "no calibration".
struct SizeCalibration {
  double eager_threshold_ns = 700000.0;
  double graph_threshold_ns = 700000.0;
};

SizeClass estimate_size(double peak_ns, bool graph_family, const SizeCalibration& cal = {});
// Peak over the encoder units found by locate_regions.
SizeClass estimate_size(const KernelTrace& trace, bool graph_family, const SizeCalibration& cal = {});

struct SegmentHints {
  std::vector<std::uint32_t> block_start_kids;
  double typical_attention_ns = 0.0;
  double typical_feed_forward_ns = 0.0;
};

SegmentHints hints_from_profile(const SignatureProfile& profile);

struct LayerSegment {
  LayerTag tag;
  std::size_t begin;  // unit-relative positions
  std::size_t end;
  double duration_ns;
};

struct LayerMap {
  std::vector<LayerSegment> segments;
  double attention_ns = 0.0;
  double feed_forward_ns = 0.0;
  std::vector<std::string> anomalies;
};

inline constexpr std::string_view kExtraCoreVector = "extra-core-vector";
inline constexpr std::string_view kShortenedLayer = "shortened-layer";

// Throws insufficient_data for units shorter than 6 events.
LayerMap segment_encoder(std::span<const std::uint32_t> kids, std::span<const double> durations_ns,
                         const SegmentHints& hints);
LayerMap segment_encoder(const KernelTrace& trace, IndexRange boundary, const SegmentHints& hints);

struct ArchitectureHypothesis {
  std::optional<int> encoder_count;
  SizeClass size = SizeClass::unknown;
  std::size_t unit_length = 0;
  double peak_ns = 0.0;
  std::vector<IndexRange> boundaries;
  std::vector<Region> regions;
  std::optional<LayerMap> layer_map;
  std::vector<std::string> anomalies;
};

// `graph_family` unset: inferred from the presence of an XLA region.
ArchitectureHypothesis extract_architecture(const KernelTrace& trace, const SizeCalibration& cal = {},
                                            const SegmentHints* hints = nullptr,
                                            std::optional<bool> graph_family = std::nullopt);

// {"encoders":N,"size":"...","regions":[...],"anomalies":[...]} plus unit_length.
std::string hypothesis_json(const ArchitectureHypothesis& h);

}  // namespace finetap
