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
#include <numbers>

#include "error.hpp"
#include "finetune_sim.hpp"

using namespace finetap;

namespace {

ArchSpec small_arch() {
  ArchSpec a;
  a.encoder_count = 2;
  a.hidden = 256;
  a.heads = 4;
  return a;
}

double mean_abs_delta(const WeightTensor& a, const WeightTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

bool bit_identical(const Checkpoint& a, const Checkpoint& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const auto& x = a.tensors()[t].data;
    const auto& y = b.tensors()[t].data;
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(x[i]) != std::bit_cast<std::uint32_t>(y[i])) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("arch presets and labels") {
  CHECK(arch_base().encoder_count == 12);
  CHECK(arch_base().hidden == 768);
  CHECK(arch_large().heads == 16);
  CHECK(arch_label(arch_base()) == "base");
  CHECK(arch_label(small_arch()) == "e2h256");
  CHECK(parse_arch_label("e18h1024")->heads == 16);
  CHECK(parse_arch_label("large") == arch_large());
  CHECK_FALSE(parse_arch_label("huge").has_value());
  ArchSpec bad = arch_base();
  bad.heads = 7;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("base shapes follow the preset") {
  const auto ck = gen_base(arch_base(), 1);
  CHECK(ck.size() == 12 * 3 + 1);
  CHECK(ck.at(encoder_tensor_name(11, 'v')).dims == std::vector<std::uint32_t>{768, 768});
  CHECK(ck.find(kTaskLayerName) != nullptr);
  CHECK(ck.meta("arch") == "base");
  CHECK(arch_from_metadata(ck) == arch_base());
}

TEST_CASE("small-weight count is exact") {
  for (double f : {0.0, 0.5, 0.9}) {
    MagnitudeModel mm;
    mm.small_weight_fraction = f;
    const auto ck = gen_base(small_arch(), 3, mm);
    for (const auto& t : ck.tensors()) {
      std::size_t small = 0;
      double max_abs = 0.0;
      for (float v : t.data) {
        small += std::abs(v) < kSmallWeightThreshold;
        max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
      }
      CHECK(small == static_cast<std::size_t>(std::floor(f * static_cast<double>(t.data.size()))));
      CHECK(max_abs == doctest::Approx(26.3).epsilon(1e-6));
    }
  }
}

TEST_CASE("generation is deterministic") {
  CHECK(bit_identical(gen_base(small_arch(), 9), gen_base(small_arch(), 9)));
  CHECK_FALSE(bit_identical(gen_base(small_arch(), 9), gen_base(small_arch(), 10)));
  const auto base = gen_base(small_arch(), 9);
  CHECK(bit_identical(apply_finetune(base, {}, 4), apply_finetune(base, {}, 4)));
}

TEST_CASE("zero sigma leaves the checkpoint unchanged") {
  const auto base = gen_base(small_arch(), 2);
  DeltaModel dm;
  dm.sigma_encoder = 0.0;
  dm.sigma_last_layer = 0.0;
  CHECK(bit_identical(apply_finetune(base, dm, 5), base));
}

TEST_CASE("fine-tune deltas match the Gaussian mean absolute value") {
  const auto base = gen_base(arch_base(), 7);
  const auto ft = apply_finetune(base, {}, 9);
  const double target = 0.001 * std::sqrt(2.0 / std::numbers::pi);
  double enc = 0.0;
  int n = 0;
  for (const auto& t : base.tensors()) {
    if (is_task_layer(t.name)) continue;
    const double m = mean_abs_delta(t, ft.at(t.name));
    CHECK(m == doctest::Approx(target).epsilon(0.05));
    CHECK(m < 0.002);
    enc += m;
    ++n;
  }
  enc /= n;
  const double last = mean_abs_delta(base.at(kTaskLayerName), ft.at(kTaskLayerName));
  CHECK(last >= 10.0 * enc);

  // Signs of weights with |base| >= 0.01, counted directly.
  std::size_t kept = 0, total = 0;
  for (const auto& t : base.tensors()) {
    const auto& v = ft.at(t.name).data;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      if (std::abs(t.data[i]) < 0.01f) continue;
      ++total;
      kept += std::signbit(t.data[i]) == std::signbit(v[i]);
    }
  }
  CHECK(static_cast<double>(kept) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("independent checkpoints sit in the calibrated gap band") {
  const auto base = gen_base(arch_base(), 7);
  const auto ind = gen_independent(arch_base(), 7);
  const auto ft = apply_finetune(base, {}, 9);
  for (const auto& t : base.tensors()) {
    if (is_task_layer(t.name)) continue;
    const double gap = mean_abs_delta(t, ind.at(t.name));
    CHECK(gap >= 0.075);
    CHECK(gap <= 0.1);
    CHECK(gap >= 10.0 * mean_abs_delta(t, ft.at(t.name)));
  }
}

TEST_CASE("expected gap agrees with a sampled estimate") {
  const auto opts = IndependentOptions{};
  const auto cal = calibrate_independent(opts);
  const double expected = expected_mean_gap(opts.reference, cal);
  CHECK(expected == doctest::Approx(0.0875).epsilon(1e-3));
  // Monte Carlo over two generated checkpoints.
  const auto a = gen_base(small_arch(), 21);
  const auto b = gen_base(small_arch(), 22, cal);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& t : a.tensors()) {
    if (is_task_layer(t.name)) continue;
    s += mean_abs_delta(t, b.at(t.name)) * static_cast<double>(t.data.size());
    n += t.data.size();
  }
  CHECK(s / static_cast<double>(n) == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("epoch drift rises then falls while the task layer saturates") {
  const auto base = gen_base(small_arch(), 4);
  DeltaModel dm;
  dm.epochs = default_epoch_schedule();
  REQUIRE(dm.epochs.size() == 30);
  const auto curve = drift_curve(base, dm, 6);
  REQUIRE(curve.size() == 30);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].encoder_mean_abs_delta > curve[peak].encoder_mean_abs_delta) peak = i;
  }
  CHECK(peak > 0);
  CHECK(peak < curve.size() - 1);
  CHECK(curve.back().encoder_mean_abs_delta < curve[peak].encoder_mean_abs_delta);
  CHECK(curve[2].encoder_mean_abs_delta == doctest::Approx(0.001).epsilon(0.1));
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].last_layer_mean_abs_delta >= curve[i - 1].last_layer_mean_abs_delta * 0.97);
  }
  CHECK(curve.back().last_layer_mean_abs_delta > curve.front().last_layer_mean_abs_delta);
}

TEST_CASE("delta model validation") {
  DeltaModel dm;
  dm.sigma_encoder = -1.0;
  CHECK_THROWS_AS(validate(dm), Error);
  dm = {};
  dm.small_weight_fraction = 1.5;
  CHECK_THROWS_AS(validate(dm), Error);
}
