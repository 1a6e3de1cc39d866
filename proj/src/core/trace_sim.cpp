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

#include "trace_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace finetap {

std::optional<std::string> KernelTrace::prov(std::string_view key) const {
  for (const auto& [k, v] : provenance) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string_view framework_name(Framework f) {
  switch (f) {
    case Framework::eager: return "eager";
    case Framework::graph_xla: return "graph-xla";
    case Framework::graph_plain: return "graph-plain";
  }
  return "?";
}

std::optional<Framework> parse_framework(std::string_view name) {
  for (auto f : kFrameworks) {
    if (framework_name(f) == name) return f;
  }
  return std::nullopt;
}

bool is_graph(Framework f) { return f != Framework::eager; }

const std::vector<std::string>& default_vendors() {
  static const std::vector<std::string> v{"alpha", "beta", "gamma", "delta"};
  return v;
}

std::string_view layer_tag_name(LayerTag t) {
  switch (t) {
    case LayerTag::prologue: return "prologue";
    case LayerTag::key: return "key";
    case LayerTag::query: return "query";
    case LayerTag::value: return "value";
    case LayerTag::extra_core: return "extra_core";
    case LayerTag::score: return "score";
    case LayerTag::softmax: return "softmax";
    case LayerTag::attn_layernorm: return "attn_layernorm";
    case LayerTag::feed_forward: return "feed_forward";
    case LayerTag::epilogue: return "epilogue";
  }
  return "?";
}

double peak_duration_ns(Framework f, int hidden) {
  const double r = static_cast<double>(hidden) / 768.0;
  return is_graph(f) ? 430000.0 * std::pow(r, 3.103) : 600000.0 * r;
}

namespace {

constexpr double kMinMeanNs = 1000.0;

class TemplateBuilder {
 public:
  TemplateBuilder(std::uint32_t first_id, double peak) : next_id_(first_id), peak_(peak) {}

  std::uint32_t fresh() { return next_id_++; }

  TemplateKernel make(std::uint32_t kid, std::string role, double level, LayerTag tag, bool start = false) const {
    TemplateKernel k;
    k.kid = kid;
    char hex[16];
    std::snprintf(hex, sizeof hex, "_%05x", kid);
    k.name = kid == kSharedKernelId ? std::string(kSharedKernelName) : role + hex;
    k.mean_ns = std::max(kMinMeanNs, level * peak_);
    k.tag = tag;
    k.block_start = start;
    return k;
  }

 private:
  std::uint32_t next_id_;
  double peak_;
};

struct VendorLevels {
  int n_aux;
  double qkv;
  double score;
  double gelu;
  double ff2;
  double gap_us;
};

VendorLevels vendor_levels(std::size_t vendor_index, Framework fw, Rng& rng) {
  const int lv = static_cast<int>(vendor_index % 4);
  VendorLevels v;
  v.n_aux = 6 + lv;
  v.qkv = 0.15 + 0.015 * lv;
  v.gelu = 0.25 + 0.12 * lv;
  v.ff2 = 0.92 - 0.03 * lv;
  v.gap_us = is_graph(fw) ? 2.0 + (4.0 / 3.0) * lv : 3.0 + 3.0 * lv;
  if (vendor_index >= 4) {
    // Extra vendors reuse a level slot with a seeded tweak.
    v.qkv *= 1.0 + 0.1 * (rng.uniform() - 0.5);
    v.gelu *= 1.0 + 0.1 * (rng.uniform() - 0.5);
    v.gap_us *= 1.0 + 0.3 * (rng.uniform() - 0.5);
  }
  v.score = 0.65 * v.qkv;
  return v;
}

void add_padding(std::vector<TemplateKernel>& out, TemplateBuilder& b, Rng& rng, int count, double lo, double hi,
                 const char* role, LayerTag tag) {
  for (int i = 0; i < count; ++i) out.push_back(b.make(b.fresh(), role, rng.uniform(lo, hi), tag));
}

std::vector<TemplateKernel> build_unit(const VendorLevels& v, Framework fw, const ProfileOptions& opt,
                                       TemplateBuilder& b, Rng& rng) {
  const bool graph = is_graph(fw);
  const double as = opt.attention_scale;
  std::vector<TemplateKernel> unit;

  // K/Q/V blocks share one kernel sequence.
  const std::uint32_t qkv_gemm = b.fresh();
  const std::uint32_t qkv_bias = b.fresh();
  std::vector<std::uint32_t> aux_seq;
  if (graph) {
    for (int i = 0; i < 30; ++i) aux_seq.push_back(b.fresh());
  } else {
    std::uint32_t pool[4];
    for (auto& p : pool) p = b.fresh();
    for (int i = 0; i < v.n_aux; ++i) aux_seq.push_back(pool[rng.below(4)]);
  }
  const double aux_level = graph ? 0.004 : 0.006;
  const LayerTag qkv_tags[] = {LayerTag::key, LayerTag::query, LayerTag::value};
  for (int c = 0; c < opt.core_vectors; ++c) {
    const LayerTag tag = c < 3 ? qkv_tags[c] : LayerTag::extra_core;
    unit.push_back(b.make(qkv_gemm, "gemm_qkv", v.qkv * as, tag, true));
    unit.push_back(b.make(qkv_bias, "bias_add", 0.015 * as, tag));
    for (auto id : aux_seq) unit.push_back(b.make(id, "qkv_aux", aux_level * as, tag));
  }

  unit.push_back(b.make(b.fresh(), "gemm_score", v.score * as, LayerTag::score, true));
  unit.push_back(b.make(b.fresh(), "scale", 0.01 * as, LayerTag::score));
  if (graph) {
    for (int i = 0; i < 20; ++i) unit.push_back(b.make(b.fresh(), "score_aux", 0.004 * as, LayerTag::score));
  }

  if (graph) {
    unit.push_back(b.make(b.fresh(), "softmax_max", 0.01 * as, LayerTag::softmax, true));
    unit.push_back(b.make(b.fresh(), "softmax_exp", 0.01 * as, LayerTag::softmax));
    unit.push_back(b.make(b.fresh(), "softmax_div", 0.01 * as, LayerTag::softmax));
    unit.push_back(b.make(b.fresh(), "ln_mean", 0.007 * as, LayerTag::attn_layernorm, true));
    unit.push_back(b.make(b.fresh(), "ln_var", 0.007 * as, LayerTag::attn_layernorm));
    unit.push_back(b.make(b.fresh(), "ln_norm", 0.006 * as, LayerTag::attn_layernorm));
  } else {
    unit.push_back(b.make(b.fresh(), "softmax", 0.03 * as, LayerTag::softmax, true));
    unit.push_back(b.make(b.fresh(), "layernorm", 0.02 * as, LayerTag::attn_layernorm, true));
  }

  const LayerTag ff = LayerTag::feed_forward;
  unit.push_back(b.make(b.fresh(), "gemm_ff1", 1.0, ff, true));
  unit.push_back(b.make(b.fresh(), "gelu", v.gelu, ff));
  unit.push_back(b.make(b.fresh(), "gemm_ff2", v.ff2, ff));
  if (graph) {
    for (int i = 0; i < 110; ++i) unit.push_back(b.make(b.fresh(), "ff_aux", 0.012, ff));
  }
  unit.push_back(b.make(kSharedKernelId, "", 0.02, ff));
  unit.push_back(b.make(b.fresh(), "residual_add", 0.01, ff));
  unit.push_back(b.make(b.fresh(), "layernorm_ff", 0.02, ff));
  return unit;
}

std::size_t count_unique(const SignatureProfile& p) {
  std::set<std::uint32_t> ids;
  for (const auto* part : {&p.prologue, &p.encoder_template, &p.epilogue}) {
    for (const auto& k : *part) ids.insert(k.kid);
  }
  if (p.xla_block) ids.insert(p.xla_block->kids.begin(), p.xla_block->kids.end());
  return ids.size();
}

}  // namespace

SignatureProfile build_profile(std::string_view vendor, Framework framework, const ArchSpec& arch,
                               std::uint64_t seed, const ProfileOptions& options,
                               const std::vector<std::string>& vendors) {
  validate(arch);
  if (options.core_vectors < 1 || !(options.attention_scale > 0.0)) {
    fail(Errc::invalid_argument, "profile options out of range");
  }
  const auto it = std::find(vendors.begin(), vendors.end(), vendor);
  if (it == vendors.end()) fail(Errc::unknown_label, "unknown vendor label '" + std::string(vendor) + "'");
  const auto vi = static_cast<std::size_t>(it - vendors.begin());
  const auto fi = static_cast<std::size_t>(framework);
  const auto pair = static_cast<std::uint32_t>(vi * 3 + fi);

  SignatureProfile p;
  p.vendor = std::string(vendor);
  p.framework = framework;
  p.arch = arch;
  p.seed = seed;
  p.options = options;
  p.peak_ns = peak_duration_ns(framework, arch.hidden);

  const std::string label = "profile/" + p.vendor + "/" + std::string(framework_name(framework));
  Rng rng = Rng::stream(seed, label);
  const VendorLevels v = vendor_levels(vi, framework, rng);
  p.gap_ns = v.gap_us * 1000.0;

  TemplateBuilder b(1000 + pair * 10000, p.peak_ns);
  const bool graph = is_graph(framework);
  add_padding(p.prologue, b, rng, graph ? 60 : 8, 0.02, 0.2, "embed", LayerTag::prologue);
  p.encoder_template = build_unit(v, framework, options, b, rng);
  switch (framework) {
    case Framework::eager:
      add_padding(p.epilogue, b, rng, 6, 0.02, 0.15, "pooler", LayerTag::epilogue);
      break;
    case Framework::graph_xla:
      add_padding(p.epilogue, b, rng, 30, 0.02, 0.15, "pooler", LayerTag::epilogue);
      break;
    case Framework::graph_plain:
      add_padding(p.epilogue, b, rng, 400, 0.05, 0.4, "task_head", LayerTag::epilogue);
      break;
  }
  if (framework == Framework::graph_xla) {
    XlaBlock x;
    std::vector<std::uint32_t> vocab;
    for (int i = 0; i < 900; ++i) vocab.push_back(b.fresh());
    for (int i = 0; i < 4000; ++i) {
      const auto id = vocab[rng.below(vocab.size())];
      x.kids.push_back(id);
      char name[32];
      std::snprintf(name, sizeof name, "xla_fusion_%05x", id);
      x.names.emplace_back(name);
    }
    x.median_ns = 30000.0 * (1.0 + 0.2 * static_cast<double>(vi % 4));
    p.xla_block = std::move(x);
  }

  // Kernels per encoder relative to this vendor's eager template.
  const double eager_events = 3.0 * (2 + v.n_aux) + 2 + 1 + 1 + 6;
  p.kernels_per_encoder_multiplier = static_cast<double>(p.encoder_template.size()) / eager_events;
  p.unique_kernel_count = count_unique(p);
  return p;
}

KernelTrace gen_trace(const SignatureProfile& profile, std::uint64_t seed) {
  KernelTrace tr;
  Rng dur = Rng::stream(seed, "trace/durations");
  Rng gap = Rng::stream(seed, "trace/gaps");
  Rng xrng = Rng::stream(seed, "trace/xla");
  std::int64_t t = 0;
  auto push = [&](std::uint32_t kid, const std::string& name, std::int64_t d, std::int64_t g) {
    KernelEvent e;
    e.seq = tr.events.size();
    e.start_ns = t;
    e.dur_ns = std::max<std::int64_t>(1, d);
    e.kid = kid;
    e.kname = name;
    t += e.dur_ns + g;
    tr.events.push_back(std::move(e));
  };
  auto emit = [&](const TemplateKernel& k) {
    const double z = dur.truncated_normal(2.0);
    const auto d = std::llround(k.mean_ns * (1.0 + profile.jitter_fraction * z));
    push(k.kid, k.name, d, std::llround(profile.gap_ns * gap.uniform(0.8, 1.2)));
  };
  auto emit_units = [&](int count) {
    for (int u = 0; u < count; ++u) {
      for (const auto& k : profile.encoder_template) emit(k);
    }
  };

  for (const auto& k : profile.prologue) emit(k);
  const int r = profile.arch.encoder_count;
  if (profile.xla_block) {
    const auto& x = *profile.xla_block;
    emit_units((r + 1) / 2);
    const double mu = std::log(x.median_ns);
    for (std::size_t i = 0; i < x.kids.size(); ++i) {
      double d;
      do {
        d = std::exp(mu + x.log_sigma * xrng.normal());
      } while (d < x.min_ns || d > x.max_ns);
      push(x.kids[i], x.names[i], std::llround(d), std::llround(x.gap_ns));
    }
    emit_units(r / 2);
  } else {
    emit_units(r);
  }
  for (const auto& k : profile.epilogue) emit(k);

  tr.provenance = {
      {"vendor", profile.vendor},
      {"framework", std::string(framework_name(profile.framework))},
      {"arch", arch_label(profile.arch)},
      {"encoders", std::to_string(profile.arch.encoder_count)},
      {"hidden", std::to_string(profile.arch.hidden)},
      {"profile_seed", std::to_string(profile.seed)},
      {"seed", std::to_string(seed)},
      {"noise", "none"},
  };
  return tr;
}

KernelTrace inject_noise(const KernelTrace& trace, std::size_t n_kernels, double amplitude_us, std::uint64_t seed) {
  if (n_kernels > trace.events.size()) fail(Errc::invalid_argument, "more noisy kernels requested than events");
  if (!(amplitude_us >= 0.0)) fail(Errc::invalid_argument, "noise amplitude must be nonnegative");
  KernelTrace out = trace;
  const auto amp = static_cast<std::int64_t>(std::llround(amplitude_us * 1000.0));
  // The first n entries of one seeded permutation, so selections nest in n.
  std::vector<std::size_t> idx(trace.events.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng pick = Rng::stream(seed, "noise/select");
  for (std::size_t i = 0; i < n_kernels; ++i) {
    const std::size_t j = i + pick.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
    const std::size_t e = idx[i];
    if (amp == 0) continue;
    SplitMix64 sm(seed ^ (0x9E3779B97F4A7C15ull * (e + 1)));
    const bool down = (sm.next() & 1u) != 0;
    auto& d = out.events[e].dur_ns;
    d = (down && d - amp >= 1) ? d - amp : d + amp;
  }
  std::string desc = "n=" + std::to_string(n_kernels) + ",amplitude_us=";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", amplitude_us);
  desc += buf;
  desc += ",seed=" + std::to_string(seed);
  bool found = false;
  for (auto& [k, v] : out.provenance) {
    if (k == "noise") {
      v = desc;
      found = true;
    }
  }
  if (!found && !out.provenance.empty()) out.provenance.emplace_back("noise", desc);
  return out;
}

EncoderLayout intra_encoder_layout(const SignatureProfile& profile) {
  EncoderLayout lay;
  const auto& t = profile.encoder_template;
  for (std::size_t i = 0; i < t.size(); ++i) {
    lay.tags.push_back(t[i].tag);
    if (t[i].block_start || lay.blocks.empty() || lay.blocks.back().tag != t[i].tag) {
      lay.blocks.push_back({t[i].tag, i, i + 1, 0.0});
    }
    lay.blocks.back().end = i + 1;
    lay.blocks.back().mean_ns += t[i].mean_ns;
    if (t[i].tag == LayerTag::feed_forward) lay.feed_forward_ns += t[i].mean_ns;
    else lay.attention_ns += t[i].mean_ns;
  }
  return lay;
}

std::string encode_trace_jsonl(const KernelTrace& trace) {
  std::string out;
  if (!trace.provenance.empty()) {
    nlohmann::ordered_json p = nlohmann::ordered_json::object();
    for (const auto& [k, v] : trace.provenance) p[k] = v;
    nlohmann::ordered_json line;
    line["provenance"] = p;
    out += line.dump();
    out += '\n';
  }
  char buf[128];
  for (const auto& e : trace.events) {
    std::snprintf(buf, sizeof buf, "{\"seq\":%llu,\"start_ns\":%lld,\"dur_ns\":%lld,\"kid\":%u,\"kname\":",
                  static_cast<unsigned long long>(e.seq), static_cast<long long>(e.start_ns),
                  static_cast<long long>(e.dur_ns), e.kid);
    out += buf;
    out += nlohmann::json(e.kname).dump();
    out += "}\n";
  }
  return out;
}

KernelTrace decode_trace_jsonl(std::string_view text) {
  KernelTrace tr;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      fail(Errc::parse, "trace line " + std::to_string(line_no) + ": " + ex.what());
    }
    if (!j.is_object()) fail(Errc::parse, "trace line " + std::to_string(line_no) + " is not an object");
    if (j.contains("provenance")) {
      if (!tr.events.empty() || !tr.provenance.empty()) {
        fail(Errc::parse, "provenance must be the first trace line");
      }
      for (const auto& [k, v] : j["provenance"].items()) {
        tr.provenance.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
      }
      continue;
    }
    try {
      KernelEvent e;
      e.seq = j.at("seq").get<std::uint64_t>();
      e.start_ns = j.at("start_ns").get<std::int64_t>();
      e.dur_ns = j.at("dur_ns").get<std::int64_t>();
      e.kid = j.at("kid").get<std::uint32_t>();
      e.kname = j.value("kname", std::string());
      if (e.dur_ns <= 0) fail(Errc::parse, "trace line " + std::to_string(line_no) + ": duration must be positive");
      if (!tr.events.empty() && e.start_ns < tr.events.back().start_ns) {
        fail(Errc::parse, "trace line " + std::to_string(line_no) + ": start times must be nondecreasing");
      }
      tr.events.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(Errc::parse, "trace line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (tr.events.empty()) fail(Errc::insufficient_data, "trace has no events");
  return tr;
}

void write_trace(const KernelTrace& trace, const std::filesystem::path& path) {
  write_file_atomic(path, encode_trace_jsonl(trace));
}

KernelTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_trace_jsonl(text);
}

KernelTrace strip_provenance(KernelTrace trace) {
  trace.provenance.clear();
  return trace;
}

}  // namespace finetap
