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

#include "weight_extract.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>

#include "error.hpp"
#include "finetune_sim.hpp"

namespace finetap {

std::string_view policy_name(PlanPolicy p) {
  return p == PlanPolicy::algorithm1 ? "algorithm1" : "worked-example";
}

std::optional<PlanPolicy> parse_policy(std::string_view name) {
  if (name == "algorithm1") return PlanPolicy::algorithm1;
  if (name == "worked-example") return PlanPolicy::worked_example;
  return std::nullopt;
}

std::vector<int> probe_bits_for(float base, PlanPolicy policy, FloatFormat format) {
  std::vector<int> bits;
  // Non-finite values are never probed; subnormals fall below the threshold.
  if (!std::isfinite(base) || std::abs(static_cast<double>(base)) < kSkipThreshold) return bits;
  const FloatFields f = decompose(base, format);
  const int msb = fraction_msb(f).value_or(0);
  const int width = format.fraction_bits;
  if (policy == PlanPolicy::worked_example) {
    for (int k = msb + 1; k <= msb + 2 && k <= width; ++k) bits.push_back(k);
    if (bits.empty()) bits.push_back(width);
    return bits;
  }
  // Literal loop: k starts at the fraction MSB, two iterations, and bit k is
  // probed when setting it keeps the magnitude inside the window.
  const double mag = std::abs(static_cast<double>(base));
  const double lo = mag - kProbeWindow, hi = mag + kProbeWindow;
  int k = std::max(msb, 1);
  for (int it = 0; it < 2 && k <= width; ++it, ++k) {
    const double candidate = mag + place_value(static_cast<int>(f.exponent), k, format);
    if (lo <= candidate && candidate <= hi) bits.push_back(k);
  }
  return bits;
}

BitCheckPlan plan_bits(const Checkpoint& base, PlanPolicy policy, FloatFormat format) {
  BitCheckPlan plan;
  plan.policy = policy;
  plan.format = format;
  for (std::size_t ti = 0; ti < base.tensors().size(); ++ti) {
    const auto& t = base.tensors()[ti];
    if (t.dtype != format.dtype) {
      fail(Errc::unsupported_format, "tensor '" + t.name + "' is " + std::string(format_name(t.dtype)) +
                                         ", plan format is " + std::string(format_name(format.dtype)));
    }
    PlanTensor pt{t.name, t.dims, t.data.size(), 0, 0, is_task_layer(t.name)};
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const auto bits = probe_bits_for(t.data[i], policy, format);
      if (std::abs(static_cast<double>(t.data[i])) < kSkipThreshold || !std::isfinite(t.data[i])) continue;
      ProbeEntry e{};
      e.tensor = static_cast<std::uint32_t>(ti);
      e.index = static_cast<std::uint32_t>(i);
      e.bit_count = static_cast<std::uint8_t>(bits.size());
      for (std::size_t b = 0; b < bits.size(); ++b) e.bits[b] = static_cast<std::uint8_t>(bits[b]);
      e.window_lo = static_cast<float>(t.data[i] - kProbeWindow);
      e.window_hi = static_cast<float>(t.data[i] + kProbeWindow);
      plan.entries.push_back(e);
      ++pt.probed;
      pt.bits += bits.size();
    }
    plan.weights_total += pt.weights;
    plan.weights_probed += pt.probed;
    plan.bits_probed += pt.bits;
    plan.tensors.push_back(std::move(pt));
  }
  return plan;
}

ProbeOracle::ProbeOracle(Checkpoint victim, double error_rate, std::uint64_t seed)
    : victim_(std::move(victim)), error_rate_(error_rate), rng_(Rng::stream(seed, "probe")) {
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) fail(Errc::invalid_argument, "probe error rate must be in [0, 1]");
}

bool ProbeOracle::probe(std::string_view tensor, std::size_t index, int bit) {
  const auto* t = victim_.find(tensor);
  if (!t) fail(Errc::shape_mismatch, "victim has no tensor '" + std::string(tensor) + "'");
  if (index >= t->data.size()) fail(Errc::invalid_argument, "probe index out of range");
  const FloatFormat fmt = t->format();
  if (bit < 1 || bit > fmt.fraction_bits) fail(Errc::invalid_argument, "fraction bit out of range");
  bool v = fraction_bit(decompose(t->data[index], fmt), bit);
  if (error_rate_ > 0.0 && rng_.bernoulli(error_rate_)) v = !v;
  ++probe_count_;
  if (record_) transcript_.push_back({std::string(tensor), static_cast<std::uint32_t>(index), bit, v});
  return v;
}

std::string transcript_csv(const std::vector<ProbeRecord>& records) {
  std::string out = "tensor,index,bit,value\n";
  for (const auto& r : records) {
    out += r.tensor + "," + std::to_string(r.index) + "," + std::to_string(r.bit) + "," + (r.value ? "1" : "0") + "\n";
  }
  return out;
}

namespace {

double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

void check_plan_matches(const BitCheckPlan& plan, const Checkpoint& ckpt, const char* what) {
  if (ckpt.tensors().size() != plan.tensors.size()) fail(Errc::shape_mismatch, std::string(what) + " tensor count differs from the plan");
  for (std::size_t i = 0; i < plan.tensors.size(); ++i) {
    const auto& t = ckpt.tensors()[i];
    if (t.name != plan.tensors[i].name || t.dims != plan.tensors[i].dims) {
      fail(Errc::shape_mismatch, std::string(what) + " tensor '" + t.name + "' does not match the plan");
    }
  }
}

}  // namespace

double ExtractionReport::raw_weight_exclusion() const { return ratio(weights_excluded, weights_total); }
double ExtractionReport::correct_weight_exclusion() const { return ratio(weights_correctly_excluded, weights_total); }
double ExtractionReport::raw_bit_exclusion() const { return ratio(bits_excluded, bits_total); }
double ExtractionReport::correct_bit_exclusion() const { return ratio(bits_correctly_excluded, bits_total); }
double ExtractionReport::correct_bit_exclusion_of_correct() const {
  return ratio(bits_correctly_excluded, bits_of_correct_weights);
}

ExtractionResult extract(const BitCheckPlan& plan, ProbeOracle& oracle, const Checkpoint& base) {
  check_plan_matches(plan, base, "base");
  for (const auto& pt : plan.tensors) {
    const auto* v = oracle.victim().find(pt.name);
    if (!v || v->dims != pt.dims) fail(Errc::shape_mismatch, "victim tensor '" + pt.name + "' does not match the plan");
  }
  ExtractionResult res{base, {}};
  auto& tensors = res.clone.mutable_tensors();
  for (const auto& e : plan.entries) {
    auto& t = tensors[e.tensor];
    FloatFields f = decompose(t.data[e.index], plan.format);
    for (int b = 0; b < e.bit_count; ++b) {
      f = with_fraction_bit(f, e.bits[b], oracle.probe(t.name, e.index, e.bits[b]));
      ++res.report.probes_issued;
    }
    t.data[e.index] = compose(f);
  }
  auto& r = res.report;
  r.weights_total = plan.weights_total;
  r.weights_probed = plan.weights_probed;
  r.weights_excluded = plan.weights_total - plan.weights_probed;
  r.bits_total = plan.bits_total();
  r.bits_excluded = r.bits_total - plan.bits_probed;
  for (const auto& pt : plan.tensors) {
    if (pt.low_confidence) r.low_confidence.push_back(pt.name);
  }
  res.clone.set_meta("extraction_policy", std::string(policy_name(plan.policy)));
  return res;
}

bool weight_correct(float clone, float victim) {
  return std::abs(static_cast<double>(clone) - static_cast<double>(victim)) <= kProbeWindow &&
         std::signbit(clone) == std::signbit(victim);
}

ExtractionReport verify(const Checkpoint& clone, const Checkpoint& victim, const BitCheckPlan& plan,
                        const ExtractionReport* report) {
  check_plan_matches(plan, clone, "clone");
  check_plan_matches(plan, victim, "victim");
  ExtractionReport r;
  if (report) r = *report;
  r.weights_total = plan.weights_total;
  r.weights_probed = plan.weights_probed;
  r.weights_excluded = plan.weights_total - plan.weights_probed;
  r.bits_total = plan.bits_total();
  r.bits_excluded = r.bits_total - plan.bits_probed;
  r.weights_correct = r.weights_correctly_excluded = r.bits_correctly_excluded = r.bits_of_correct_weights = 0;
  r.low_confidence.clear();
  for (const auto& pt : plan.tensors) {
    if (pt.low_confidence) r.low_confidence.push_back(pt.name);
  }
  const auto width = static_cast<std::size_t>(plan.format.width());
  double err_all = 0.0, err_probed = 0.0;
  auto next = plan.entries.begin();
  for (std::size_t ti = 0; ti < plan.tensors.size(); ++ti) {
    const auto& c = clone.tensors()[ti].data;
    const auto& v = victim.tensors()[ti].data;
    for (std::size_t i = 0; i < c.size(); ++i) {
      std::size_t probed_bits = 0;
      bool probed = false;
      if (next != plan.entries.end() && next->tensor == ti && next->index == i) {
        probed = true;
        probed_bits = next->bit_count;
        ++next;
      }
      const double err = std::abs(static_cast<double>(c[i]) - static_cast<double>(v[i]));
      err_all += err;
      if (probed) err_probed += err;
      if (!weight_correct(c[i], v[i])) continue;
      ++r.weights_correct;
      if (!probed) ++r.weights_correctly_excluded;
      r.bits_correctly_excluded += width - probed_bits;
      r.bits_of_correct_weights += width;
    }
  }
  r.verified = true;
  r.correct_fraction = ratio(r.weights_correct, r.weights_total);
  r.mean_error = r.weights_total ? err_all / static_cast<double>(r.weights_total) : 0.0;
  r.mean_probed_error = r.weights_probed ? err_probed / static_cast<double>(r.weights_probed) : 0.0;
  return r;
}

float truncate_value(float v) {
  if (!std::isfinite(v) || v == 0.0f) return v;
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  std::string s(buf, res.ptr);
  const auto dot = s.find('.');
  if (dot != std::string::npos && s.size() > dot + 4) s.resize(dot + 4);
  float out = 0.0f;
  std::from_chars(s.data(), s.data() + s.size(), out);
  return out;
}

Checkpoint truncate_below(const Checkpoint& ckpt) {
  Checkpoint out = ckpt;
  for (auto& t : out.mutable_tensors()) {
    if (t.dtype != Dtype::f32) fail(Errc::unsupported_format, "truncation needs f32 tensors");
    for (auto& x : t.data) x = truncate_value(x);
  }
  return out;
}

std::string plan_json(const BitCheckPlan& plan, bool include_entries) {
  nlohmann::ordered_json j;
  j["policy"] = policy_name(plan.policy);
  j["format"] = format_name(plan.format.dtype);
  j["weights_total"] = plan.weights_total;
  j["weights_probed"] = plan.weights_probed;
  j["bits_total"] = plan.bits_total();
  j["bits_probed"] = plan.bits_probed;
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : plan.tensors) {
    j["tensors"].push_back({{"name", t.name},
                            {"weights", t.weights},
                            {"probed", t.probed},
                            {"bits", t.bits},
                            {"low_confidence", t.low_confidence}});
  }
  if (include_entries) {
    auto& arr = j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : plan.entries) {
      nlohmann::ordered_json bits = nlohmann::ordered_json::array();
      for (int b = 0; b < e.bit_count; ++b) bits.push_back(e.bits[b]);
      arr.push_back({{"tensor", plan.tensors[e.tensor].name},
                     {"index", e.index},
                     {"bits", bits},
                     {"window", {e.window_lo, e.window_hi}}});
    }
  }
  return j.dump();
}

std::string report_json(const ExtractionReport& r) {
  nlohmann::ordered_json j;
  j["weights_total"] = r.weights_total;
  j["weights_excluded"] = r.weights_excluded;
  j["weights_probed"] = r.weights_probed;
  j["bits_total"] = r.bits_total;
  j["bits_excluded"] = r.bits_excluded;
  j["probes_issued"] = r.probes_issued;
  j["raw_weight_exclusion"] = r.raw_weight_exclusion();
  j["raw_bit_exclusion"] = r.raw_bit_exclusion();
  if (r.verified) {
    j["weights_correct"] = r.weights_correct;
    j["weights_correctly_excluded"] = r.weights_correctly_excluded;
    j["bits_correctly_excluded"] = r.bits_correctly_excluded;
    j["correct_fraction"] = r.correct_fraction;
    j["correct_weight_exclusion"] = r.correct_weight_exclusion();
    j["correct_bit_exclusion"] = r.correct_bit_exclusion();
    j["correct_bit_exclusion_of_correct"] = r.correct_bit_exclusion_of_correct();
    j["mean_probed_error"] = r.mean_probed_error;
    j["mean_error"] = r.mean_error;
  }
  j["low_confidence"] = r.low_confidence;
  return j.dump();
}

}  // namespace finetap
