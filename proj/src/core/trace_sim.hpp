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

// Parametric kernel-trace simulator. A SignatureProfile fixes the kernel
// vocabulary and relative timings of one (vendor, framework) pair; the
// architecture only scales durations and sets the repetition count.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "finetune_sim.hpp"

namespace finetap {

struct KernelEvent {
  std::uint64_t seq = 0;
  std::int64_t start_ns = 0;
  std::int64_t dur_ns = 1;
  std::uint32_t kid = 0;
  std::string kname;
};

struct KernelTrace {
  std::vector<KernelEvent> events;
  std::vector<std::pair<std::string, std::string>> provenance;  // empty for victim traces

  std::optional<std::string> prov(std::string_view key) const;
};

enum class Framework { eager, graph_xla, graph_plain };

std::string_view framework_name(Framework f);
std::optional<Framework> parse_framework(std::string_view name);
inline constexpr Framework kFrameworks[] = {Framework::eager, Framework::graph_xla, Framework::graph_plain};
bool is_graph(Framework f);

const std::vector<std::string>& default_vendors();

enum class LayerTag { prologue, key, query, value, extra_core, score, softmax, attn_layernorm, feed_forward, epilogue };
std::string_view layer_tag_name(LayerTag t);

struct TemplateKernel {
  std::uint32_t kid = 0;
  std::string name;
  double mean_ns = 0.0;
  LayerTag tag = LayerTag::prologue;
  bool block_start = false;
};

struct XlaBlock {
  std::vector<std::uint32_t> kids;  // fixed id sequence
  std::vector<std::string> names;   // per position
  double median_ns = 30000.0;
  double log_sigma = 0.6;
  double min_ns = 5000.0;
  double max_ns = 250000.0;
  double gap_ns = 500.0;
};

// Knobs used to model anomalous executions.
struct ProfileOptions {
  int core_vectors = 3;          // K/Q/V-like blocks per encoder
  double attention_scale = 1.0;  // multiplies every attention kernel mean
};

struct SignatureProfile {
  std::string vendor;
  Framework framework = Framework::eager;
  ArchSpec arch;
  std::uint64_t seed = 0;
  ProfileOptions options;

  std::vector<TemplateKernel> prologue;
  std::vector<TemplateKernel> encoder_template;
  std::vector<TemplateKernel> epilogue;
  std::optional<XlaBlock> xla_block;

  double peak_ns = 0.0;
  double jitter_fraction = 0.05;
  double gap_ns = 5000.0;
  // Events per encoder relative to the same vendor's eager template.
  double kernels_per_encoder_multiplier = 1.0;
  std::size_t unique_kernel_count = 0;
};

// Shared by every (vendor, framework) pair.
inline constexpr std::uint32_t kSharedKernelId = 1;
inline constexpr std::string_view kSharedKernelName = "splitKreduce_kernel";

// Peak (first feed-forward GEMM) mean duration for a family and width.
double peak_duration_ns(Framework f, int hidden);

// Throws unknown_label when the vendor is not in `vendors`.
SignatureProfile build_profile(std::string_view vendor, Framework framework, const ArchSpec& arch,
                               std::uint64_t seed, const ProfileOptions& options = {},
                               const std::vector<std::string>& vendors = default_vendors());

KernelTrace gen_trace(const SignatureProfile& profile, std::uint64_t seed);

// Perturbs the durations of exactly n distinct events by +-amplitude.
// A perturbation that would end below 1 ns is applied upward instead.
KernelTrace inject_noise(const KernelTrace& trace, std::size_t n_kernels, double amplitude_us, std::uint64_t seed);

struct LayerBlock {
  LayerTag tag;
  std::size_t begin;  // template positions [begin, end)
  std::size_t end;
  double mean_ns;
};

struct EncoderLayout {
  std::vector<LayerTag> tags;  // per template position
  std::vector<LayerBlock> blocks;
  double attention_ns = 0.0;
  double feed_forward_ns = 0.0;
};

EncoderLayout intra_encoder_layout(const SignatureProfile& profile);

// JSON lines: optional {"provenance":{...}} first, then one event per line
// with the fixed field order seq, start_ns, dur_ns, kid, kname.
std::string encode_trace_jsonl(const KernelTrace& trace);
KernelTrace decode_trace_jsonl(std::string_view text);
void write_trace(const KernelTrace& trace, const std::filesystem::path& path);
KernelTrace read_trace(const std::filesystem::path& path);

// Drops provenance, as seen by an attacker.
KernelTrace strip_provenance(KernelTrace trace);

}  // namespace finetap
