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

#include <doctest.h>

#include <bit>
#include <cmath>

#include "error.hpp"
#include "finetune_sim.hpp"
#include "weight_extract.hpp"

using namespace finetap;

namespace {

ArchSpec small_arch() {
  ArchSpec a;
  a.encoder_count = 2;
  a.hidden = 256;
  a.heads = 4;
  return a;
}

// Fraction bit k of an f32 lives at raw bit 23 - k.
std::uint32_t splice(float base, float victim, const std::vector<int>& bits) {
  auto out = std::bit_cast<std::uint32_t>(base);
  const auto v = std::bit_cast<std::uint32_t>(victim);
  for (int k : bits) {
    const std::uint32_t mask = 1u << (23 - k);
    out = (out & ~mask) | (v & mask);
  }
  return out;
}

}  // namespace

TEST_CASE("policy names") {
  CHECK(policy_name(PlanPolicy::worked_example) == "worked-example");
  CHECK(parse_policy("algorithm1") == PlanPolicy::algorithm1);
  CHECK_FALSE(parse_policy("greedy").has_value());
}

TEST_CASE("bits chosen for known values") {
  CHECK(probe_bits_for(0.018f, PlanPolicy::worked_example, kF32) == std::vector<int>{4, 5});
  CHECK(probe_bits_for(0.018f, PlanPolicy::algorithm1, kF32) == std::vector<int>{3, 4});
  CHECK(probe_bits_for(-0.018f, PlanPolicy::worked_example, kF32) == std::vector<int>{4, 5});
  CHECK(probe_bits_for(0.0004f, PlanPolicy::worked_example, kF32).empty());
  CHECK(probe_bits_for(0.0004f, PlanPolicy::algorithm1, kF32).empty());
  CHECK(probe_bits_for(NAN, PlanPolicy::worked_example, kF32).empty());
  CHECK(probe_bits_for(INFINITY, PlanPolicy::algorithm1, kF32).empty());
  // Zero fraction: msb taken as 0.
  CHECK(probe_bits_for(1.0f, PlanPolicy::worked_example, kF32) == std::vector<int>{1, 2});
  // Large magnitudes have no bit inside the window.
  CHECK(probe_bits_for(8.0f, PlanPolicy::algorithm1, kF32).empty());
}

TEST_CASE("algorithm1 bits stay inside the window") {
  Rng rng = Rng::stream(1, "unit/window");
  for (int i = 0; i < 20000; ++i) {
    const float b = static_cast<float>(rng.uniform(-0.5, 0.5));
    const auto f = decompose(b, kF32);
    for (int k : probe_bits_for(b, PlanPolicy::algorithm1, kF32)) {
      CHECK(place_value(static_cast<int>(f.exponent), k, kF32) <= kProbeWindow);
    }
    const auto we = probe_bits_for(b, PlanPolicy::worked_example, kF32);
    if (std::abs(b) >= kSkipThreshold) {
      CHECK(!we.empty());
      CHECK(we.size() <= 2);
    }
  }
}

TEST_CASE("plan counts") {
  const auto base = gen_base(small_arch(), 3);
  for (auto policy : {PlanPolicy::algorithm1, PlanPolicy::worked_example}) {
    const auto plan = plan_bits(base, policy, kF32);
    std::size_t total = 0, skipped = 0, bits = 0;
    for (const auto& t : base.tensors()) {
      total += t.data.size();
      for (float v : t.data) {
        if (std::abs(v) < kSkipThreshold) ++skipped;
        bits += probe_bits_for(v, policy, kF32).size();
      }
    }
    CHECK(plan.weights_total == total);
    CHECK(plan.weights_probed == total - skipped);
    CHECK(plan.bits_probed == bits);
    CHECK(plan.entries.size() == plan.weights_probed);
    CHECK(plan.bits_total() == 32 * total);
    CHECK(plan.tensors.back().low_confidence);
    CHECK_FALSE(plan.tensors.front().low_confidence);
    for (std::size_t i = 1; i < plan.entries.size(); ++i) {
      const auto& a = plan.entries[i - 1];
      const auto& b = plan.entries[i];
      CHECK((a.tensor < b.tensor || (a.tensor == b.tensor && a.index < b.index)));
    }
  }
  CHECK_THROWS_AS(plan_bits(quantize_checkpoint(base, kF16), PlanPolicy::algorithm1, kF32), Error);
}

TEST_CASE("oracle error rates") {
  Checkpoint v;
  v.add({"w", Dtype::f32, {1}, {0.018f}});  // bit 3 set, bit 1 clear
  ProbeOracle exact(v, 0.0, 1);
  ProbeOracle always(v, 1.0, 1);
  ProbeOracle some(v, 0.1, 1);
  std::size_t flips = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    CHECK(exact.probe("w", 0, 3));
    CHECK(always.probe("w", 0, 3) == false);
    flips += some.probe("w", 0, 1);
  }
  CHECK(static_cast<double>(flips) / n == doctest::Approx(0.1).epsilon(0.1));
  CHECK(exact.probe_count() == static_cast<std::uint64_t>(n));
  CHECK_THROWS_AS(exact.probe("missing", 0, 1), Error);
  CHECK_THROWS_AS(exact.probe("w", 1, 1), Error);
  CHECK_THROWS_AS(exact.probe("w", 0, 24), Error);
  CHECK_THROWS_AS(ProbeOracle(v, 1.5, 1), Error);

  exact.set_record(true);
  exact.probe("w", 0, 3);
  CHECK(transcript_csv(exact.transcript()) == "tensor,index,bit,value\nw,0,3,1\n");
}

TEST_CASE("clone equals an independent bit splice") {
  const auto base = gen_base(small_arch(), 5);
  const auto victim = apply_finetune(base, {}, 6);
  for (auto policy : {PlanPolicy::algorithm1, PlanPolicy::worked_example}) {
    const auto plan = plan_bits(base, policy, kF32);
    ProbeOracle oracle(victim);
    const auto res = extract(plan, oracle, base);
    CHECK(res.report.probes_issued == plan.bits_probed);
    CHECK(oracle.probe_count() == plan.bits_probed);
    for (std::size_t t = 0; t < base.size(); ++t) {
      const auto& b = base.tensors()[t].data;
      const auto& vv = victim.tensors()[t].data;
      const auto& c = res.clone.tensors()[t].data;
      for (std::size_t i = 0; i < b.size(); ++i) {
        REQUIRE(std::bit_cast<std::uint32_t>(c[i]) == splice(b[i], vv[i], probe_bits_for(b[i], policy, kF32)));
      }
    }
  }
}

TEST_CASE("victim equal to base is cloned exactly") {
  const auto base = gen_base(small_arch(), 8);
  const auto plan = plan_bits(base, PlanPolicy::worked_example, kF32);
  ProbeOracle oracle(base);
  const auto res = extract(plan, oracle, base);
  const auto r = verify(res.clone, base, plan, &res.report);
  CHECK(r.correct_fraction == 1.0);
  CHECK(r.mean_error == 0.0);
  CHECK(r.weights_correctly_excluded == r.weights_excluded);
  CHECK(r.probes_issued == plan.bits_probed);
}

TEST_CASE("correctness rule") {
  CHECK(weight_correct(0.5f, 0.5f));
  CHECK(weight_correct(0.5f, 0.5f + 0.001953125f));
  CHECK_FALSE(weight_correct(0.5f, 0.503f));
  // Close in value but across zero.
  CHECK_FALSE(weight_correct(0.0005f, -0.0005f));
  CHECK_FALSE(weight_correct(0.0f, -0.0f));
}

TEST_CASE("verify agrees with a full scan") {
  const auto base = gen_base(small_arch(), 2);
  const auto victim = apply_finetune(base, {}, 3);
  const auto plan = plan_bits(base, PlanPolicy::algorithm1, kF32);
  ProbeOracle oracle(victim, 0.05, 4);
  const auto res = extract(plan, oracle, base);
  const auto r = verify(res.clone, victim, plan, &res.report);

  std::size_t total = 0, correct = 0, correct_skipped = 0, bits_ok = 0;
  double err = 0.0;
  for (std::size_t t = 0; t < base.size(); ++t) {
    const auto& b = base.tensors()[t].data;
    const auto& vv = victim.tensors()[t].data;
    const auto& c = res.clone.tensors()[t].data;
    for (std::size_t i = 0; i < b.size(); ++i) {
      ++total;
      const double d = std::abs(static_cast<double>(c[i]) - vv[i]);
      err += d;
      if (d > 0.002 || std::signbit(c[i]) != std::signbit(vv[i])) continue;
      ++correct;
      const bool skipped = std::abs(b[i]) < 0.001f;
      correct_skipped += skipped;
      bits_ok += 32 - (skipped ? 0 : probe_bits_for(b[i], PlanPolicy::algorithm1, kF32).size());
    }
  }
  CHECK(r.weights_total == total);
  CHECK(r.weights_correct == correct);
  CHECK(r.weights_correctly_excluded == correct_skipped);
  CHECK(r.bits_correctly_excluded == bits_ok);
  CHECK(r.bits_of_correct_weights == 32 * correct);
  CHECK(r.mean_error == doctest::Approx(err / static_cast<double>(total)));
  CHECK(r.correct_weight_exclusion() <= r.raw_weight_exclusion());
  CHECK(r.low_confidence == std::vector<std::string>{std::string(kTaskLayerName)});

  Checkpoint other;
  other.add({"x", Dtype::f32, {1}, {1.0f}});
  CHECK_THROWS_AS(verify(other, victim, plan), Error);
}

TEST_CASE("truncation") {
  CHECK(truncate_value(0.0013f) == 0.001f);
  CHECK(truncate_value(-0.0027f) == -0.002f);
  CHECK(truncate_value(0.0009f) == 0.0f);
  CHECK(truncate_value(1.23456f) == 1.234f);
  CHECK(truncate_value(2.0f) == 2.0f);
  CHECK(truncate_value(0.0f) == 0.0f);
  CHECK(std::isnan(truncate_value(NAN)));
  Checkpoint c;
  c.add({"w", Dtype::f32, {2}, {0.0013f, -0.5559f}});
  const auto t = truncate_below(c);
  CHECK(t.tensors()[0].data == std::vector<float>{0.001f, -0.555f});
  CHECK_THROWS_AS(truncate_below(quantize_checkpoint(c, kBF16)), Error);
}

TEST_CASE("json outputs") {
  const auto base = gen_base(small_arch(), 2);
  const auto plan = plan_bits(base, PlanPolicy::worked_example, kF32);
  const auto j = plan_json(plan);
  CHECK(j.rfind("{\"policy\":\"worked-example\",\"format\":\"f32\"", 0) == 0);
  CHECK(j.find("\"entries\"") == std::string::npos);
  CHECK(plan_json(plan, true).find("\"entries\":[{\"tensor\":") != std::string::npos);
  ExtractionReport r;
  CHECK(report_json(r).find("correct_fraction") == std::string::npos);
  r.verified = true;
  CHECK(report_json(r).find("correct_fraction") != std::string::npos);
}

TEST_CASE("window soundness for the worked-example policy") {
  Rng rng = Rng::stream(12, "unit/soundness");
  std::size_t checked = 0;
  for (int i = 0; i < 200000; ++i) {
    const float b = static_cast<float>(rng.uniform(-0.3, 0.3));
    const float v = static_cast<float>(b + rng.normal() * 0.001);
    if (std::abs(b) < kSkipThreshold || std::abs(static_cast<double>(v) - b) > kProbeWindow) continue;
    const auto fb = decompose(b, kF32), fv = decompose(v, kF32);
    if (fb.sign != fv.sign || fb.exponent != fv.exponent) continue;
    const int msb = fraction_msb(fb).value_or(0);
    bool high_differs = false;
    for (int k = 1; k <= msb; ++k) high_differs |= fraction_bit(fb, k) != fraction_bit(fv, k);
    if (high_differs) continue;

    const float c = std::bit_cast<float>(splice(b, v, probe_bits_for(b, PlanPolicy::worked_example, kF32)));
    const int e = static_cast<int>(fb.exponent);
    double bound = place_value(e, msb + 2, kF32);
    for (int k = msb + 3; k <= 23; ++k) bound += place_value(e, k, kF32);
    CHECK(std::abs(static_cast<double>(c) - v) < bound);
    ++checked;
  }
  CHECK(checked > 1000);
}

TEST_CASE("clone keeps the base sign and exponent everywhere") {
  const auto base = gen_base(small_arch(), 13);
  const auto victim = gen_independent(small_arch(), 14);
  for (auto policy : {PlanPolicy::algorithm1, PlanPolicy::worked_example}) {
    const auto plan = plan_bits(base, policy, kF32);
    ProbeOracle oracle(victim, 0.2, 3);
    const auto res = extract(plan, oracle, base);
    CHECK(res.report.probes_issued <= 2 * plan.weights_probed);
    for (std::size_t t = 0; t < base.size(); ++t) {
      const auto& b = base.tensors()[t].data;
      const auto& c = res.clone.tensors()[t].data;
      for (std::size_t i = 0; i < b.size(); ++i) {
        const auto fb = decompose(b[i], kF32), fc = decompose(c[i], kF32);
        REQUIRE(fb.sign == fc.sign);
        REQUIRE(fb.exponent == fc.exponent);
      }
    }
  }
}
