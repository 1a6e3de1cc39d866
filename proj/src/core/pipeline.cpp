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

#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>

#include "error.hpp"
#include "finetune_sim.hpp"

namespace finetap {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::string> split_underscore(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto u = s.find('_', pos);
    out.push_back(s.substr(pos, u == std::string::npos ? std::string::npos : u - pos));
    if (u == std::string::npos) break;
    pos = u + 1;
  }
  return out;
}

SizeClass arch_size_class(const ArchSpec& arch, std::string_view framework, const SizeCalibration& cal) {
  const auto fw = parse_framework(framework);
  if (!fw) return SizeClass::unknown;
  return estimate_size(peak_duration_ns(*fw, arch.hidden), is_graph(*fw), cal);
}

std::string label_of(const CnnModel& m, int cls) {
  if (cls >= 0 && static_cast<std::size_t>(cls) < m.labels.size()) return m.labels[static_cast<std::size_t>(cls)];
  return std::to_string(cls);
}

}  // namespace

ModelPool ModelPool::scan(const std::filesystem::path& root) {
  ModelPool pool;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) fail(Errc::io, "pool directory not found: " + root.string());
  std::vector<std::filesystem::path> files;
  for (const auto& de : std::filesystem::directory_iterator(root)) {
    if (de.is_regular_file() && de.path().extension() == ".wbin") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto parts = split_underscore(f.stem().string());
    if (parts.size() < 4) {
      pool.warnings_.push_back("skipping " + f.filename().string() + ": name is not vendor_framework_arch_variant");
      continue;
    }
    PoolEntry e;
    e.vendor = parts[0];
    e.framework = parts[1];
    e.arch = parts[2];
    for (std::size_t i = 3; i < parts.size(); ++i) e.variant += (i > 3 ? "_" : "") + parts[i];
    e.path = f;
    if (!parse_framework(e.framework) || !parse_arch_label(e.arch)) {
      pool.warnings_.push_back("skipping " + f.filename().string() + ": unknown framework or arch label");
      continue;
    }
    try {
      (void)read_wbin(f);
    } catch (const Error& err) {
      pool.warnings_.push_back("skipping " + f.filename().string() + ": " + err.what());
      continue;
    }
    pool.entries_.push_back(std::move(e));
  }
  std::sort(pool.entries_.begin(), pool.entries_.end(), [](const PoolEntry& a, const PoolEntry& b) {
    return std::tie(a.vendor, a.framework, a.arch, a.variant) < std::tie(b.vendor, b.framework, b.arch, b.variant);
  });
  return pool;
}

const PoolEntry* ModelPool::find(std::string_view vendor, std::string_view framework, int encoders,
                                 SizeClass size) const {
  for (const auto& e : entries_) {
    if (e.vendor != vendor || e.framework != framework) continue;
    const auto arch = parse_arch_label(e.arch);
    if (!arch || arch->encoder_count != encoders) continue;
    if (size != SizeClass::unknown && arch_size_class(*arch, framework, {}) != size) continue;
    return &e;
  }
  return nullptr;
}

std::string pool_file_name(std::string_view vendor, Framework framework, std::string_view arch,
                           std::string_view variant) {
  return std::string(vendor) + "_" + std::string(framework_name(framework)) + "_" + std::string(arch) + "_" +
         std::string(variant) + ".wbin";
}

PipelineResult run_pipeline(const KernelTrace& trace, ProbeOracle* oracle, const ModelPool& pool,
                            const Classifiers& classifiers, const PipelineConfig& config, const Checkpoint* truth) {
  if (trace.events.empty()) fail(Errc::insufficient_data, "victim trace is empty");
  PipelineResult res;
  auto t0 = Clock::now();
  std::optional<int> cnn_encoders;
  if (classifiers.vendor || classifiers.framework || classifiers.encoder_count) {
    const TraceImage img = rasterize(trace);
    if (classifiers.vendor) res.vendor = label_of(*classifiers.vendor, predict(*classifiers.vendor, img));
    if (classifiers.framework) res.framework = label_of(*classifiers.framework, predict(*classifiers.framework, img));
    if (classifiers.encoder_count) {
      const auto lbl = label_of(*classifiers.encoder_count, predict(*classifiers.encoder_count, img));
      try {
        cnn_encoders = std::stoi(lbl);
      } catch (const std::exception&) {
        res.warnings.push_back("encoder-count classifier label '" + lbl + "' is not a number");
      }
    }
  }
  res.timing.classify_s = seconds_since(t0);

  t0 = Clock::now();
  std::optional<bool> graph;
  if (res.framework) {
    if (auto fw = parse_framework(*res.framework)) graph = is_graph(*fw);
  }
  res.hypothesis = extract_architecture(trace, config.calibration, nullptr, graph);
  if (!res.hypothesis.encoder_count && cnn_encoders) {
    res.hypothesis.encoder_count = cnn_encoders;
    res.warnings.push_back("encoder count taken from the classifier");
  }
  res.timing.detect_s = seconds_since(t0);

  const PoolEntry* entry = nullptr;
  if (pool.empty()) {
    res.warnings.push_back("model pool is empty");
  } else if (!res.vendor || !res.framework) {
    res.warnings.push_back("vendor or framework classifier missing");
  } else if (!res.hypothesis.encoder_count) {
    res.warnings.push_back("encoder count not recovered");
  } else {
    entry = pool.find(*res.vendor, *res.framework, *res.hypothesis.encoder_count, res.hypothesis.size);
    if (!entry) res.warnings.push_back("no pool entry for the identified vendor, framework and architecture");
  }
  if (!entry) {
    res.degraded = true;
    return res;
  }
  res.selected = entry->path.string();
  if (!oracle) {
    res.warnings.push_back("no probe oracle; stopping before extraction");
    res.degraded = true;
    return res;
  }

  t0 = Clock::now();
  const Checkpoint base = read_wbin(entry->path);
  const Dtype dtype = base.tensors().empty() ? Dtype::f32 : base.tensors().front().dtype;
  const BitCheckPlan plan = plan_bits(base, config.policy, format_of(dtype));
  auto ex = extract(plan, *oracle, base);
  res.timing.extract_s = seconds_since(t0);
  t0 = Clock::now();
  res.report = truth ? verify(ex.clone, *truth, plan, &ex.report) : ex.report;
  res.timing.verify_s = seconds_since(t0);
  res.clone = std::move(ex.clone);
  return res;
}

std::string pipeline_json(const PipelineResult& r, bool include_timing) {
  nlohmann::ordered_json j;
  j["status"] = r.degraded ? "degraded" : "ok";
  j["hypothesis"] = nlohmann::ordered_json::parse(hypothesis_json(r.hypothesis));
  j["vendor"] = r.vendor ? nlohmann::ordered_json(*r.vendor) : nlohmann::ordered_json(nullptr);
  j["framework"] = r.framework ? nlohmann::ordered_json(*r.framework) : nlohmann::ordered_json(nullptr);
  j["selected"] = r.selected ? nlohmann::ordered_json(*r.selected) : nlohmann::ordered_json(nullptr);
  j["report"] = r.report ? nlohmann::ordered_json::parse(report_json(*r.report)) : nlohmann::ordered_json(nullptr);
  j["warnings"] = r.warnings;
  if (include_timing) {
    j["timing"] = {{"classify_s", r.timing.classify_s},
                   {"detect_s", r.timing.detect_s},
                   {"extract_s", r.timing.extract_s},
                   {"verify_s", r.timing.verify_s}};
  }
  return j.dump();
}

std::vector<NoisePoint> count_sweep() {
  std::vector<NoisePoint> pts;
  for (std::size_t n = 1; n <= 64; n *= 2) pts.push_back({n, 20.0});
  return pts;
}

std::vector<NoisePoint> amplitude_sweep() {
  std::vector<NoisePoint> pts;
  for (int a = 5; a <= 45; a += 5) pts.push_back({16, static_cast<double>(a)});
  return pts;
}

std::vector<SweepResult> noise_sweep(const std::vector<NoisePoint>& points, std::size_t trials,
                                     const Classifiers& classifiers, const CorpusSpec& corpus, std::uint64_t seed) {
  if (trials == 0) fail(Errc::invalid_argument, "noise sweep needs at least one trial");
  const auto items = corpus_items(corpus);
  Rng rng = Rng::stream(seed, "sweep/items");
  struct Trial {
    CorpusItem item;
    KernelTrace clean;
    std::uint64_t noise_seed;
  };
  std::vector<Trial> ts;
  for (std::size_t t = 0; t < trials; ++t) {
    CorpusItem it = items[rng.below(items.size())];
    it.seed = SplitMix64(seed ^ (0x9E3779B97F4A7C15ull * (t + 1))).next();
    ts.push_back({it, corpus_trace(it, corpus), seed + t});
  }
  std::vector<SweepResult> out;
  for (const auto& p : points) {
    SweepResult r;
    r.point = p;
    r.trials = trials;
    std::size_t det = 0, ven = 0, fw = 0, enc = 0;
    for (const auto& t : ts) {
      const auto noisy = inject_noise(t.clean, p.n_kernels, p.amplitude_us, t.noise_seed);
      try {
        const auto h = extract_architecture(noisy);
        det += h.encoder_count && *h.encoder_count == t.item.encoders;
      } catch (const Error&) {
      }
      if (classifiers.vendor || classifiers.framework || classifiers.encoder_count) {
        const auto img = rasterize(noisy);
        if (classifiers.vendor) ven += predict(*classifiers.vendor, img) == t.item.label_vendor;
        if (classifiers.framework) fw += predict(*classifiers.framework, img) == t.item.label_framework;
        if (classifiers.encoder_count) enc += predict(*classifiers.encoder_count, img) == t.item.label_encoders;
      }
    }
    const double n = static_cast<double>(trials);
    r.detector_accuracy = static_cast<double>(det) / n;
    r.vendor_accuracy = classifiers.vendor ? static_cast<double>(ven) / n : NAN;
    r.framework_accuracy = classifiers.framework ? static_cast<double>(fw) / n : NAN;
    r.encoder_accuracy = classifiers.encoder_count ? static_cast<double>(enc) / n : NAN;
    out.push_back(r);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepResult>& rows) {
  std::string out = "n_kernels,amplitude_us,trials,detector,vendor,framework,encoder_count\n";
  char buf[256];
  auto num = [](double v) { return std::isnan(v) ? std::string() : std::to_string(v); };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%g,%zu,%.6f,", r.point.n_kernels, r.point.amplitude_us, r.trials,
                  r.detector_accuracy);
    out += buf + num(r.vendor_accuracy) + "," + num(r.framework_accuracy) + "," + num(r.encoder_accuracy) + "\n";
  }
  return out;
}

}  // namespace finetap
