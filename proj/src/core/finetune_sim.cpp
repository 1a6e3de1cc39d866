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

#include "finetune_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "error.hpp"
#include "rng.hpp"

namespace finetap {

ArchSpec arch_base() { return ArchSpec{12, 768, 12, true, 2}; }
ArchSpec arch_large() { return ArchSpec{24, 1024, 16, true, 2}; }

void validate(const ArchSpec& arch) {
  if (arch.encoder_count <= 0 || arch.hidden <= 0 || arch.heads <= 0 || arch.task_labels <= 0) {
    fail(Errc::invalid_argument, "architecture sizes must be positive");
  }
  if (arch.hidden % arch.heads != 0) fail(Errc::invalid_argument, "hidden must be divisible by heads");
}

std::string arch_label(const ArchSpec& arch) {
  if (arch == arch_base()) return "base";
  if (arch == arch_large()) return "large";
  return "e" + std::to_string(arch.encoder_count) + "h" + std::to_string(arch.hidden);
}

std::optional<ArchSpec> parse_arch_label(std::string_view label) {
  if (label == "base") return arch_base();
  if (label == "large") return arch_large();
  if (label.size() < 4 || label.front() != 'e') return std::nullopt;
  const auto hpos = label.find('h');
  if (hpos == std::string_view::npos) return std::nullopt;
  int enc = 0, hidden = 0;
  auto r1 = std::from_chars(label.data() + 1, label.data() + hpos, enc);
  auto r2 = std::from_chars(label.data() + hpos + 1, label.data() + label.size(), hidden);
  if (r1.ec != std::errc{} || r1.ptr != label.data() + hpos) return std::nullopt;
  if (r2.ec != std::errc{} || r2.ptr != label.data() + label.size()) return std::nullopt;
  if (enc <= 0 || hidden <= 0) return std::nullopt;
  ArchSpec a;
  a.encoder_count = enc;
  a.hidden = hidden;
  a.heads = std::max(1, hidden / 64);
  while (hidden % a.heads != 0) --a.heads;
  return a;
}

std::string encoder_tensor_name(int layer, char which) {
  const char* kind = which == 'q' ? "query" : which == 'k' ? "key" : "value";
  return "encoder." + std::to_string(layer) + ".attention." + kind + ".weight";
}

bool is_task_layer(std::string_view tensor_name) { return tensor_name == kTaskLayerName; }

ArchSpec arch_from_metadata(const Checkpoint& ckpt) {
  auto geti = [&](std::string_view key) {
    auto v = ckpt.meta(key);
    if (!v) fail(Errc::missing_metadata, "checkpoint lacks '" + std::string(key) + "' metadata");
    int out = 0;
    auto r = std::from_chars(v->data(), v->data() + v->size(), out);
    if (r.ec != std::errc{}) fail(Errc::parse, "bad integer metadata '" + std::string(key) + "'");
    return out;
  };
  ArchSpec a;
  a.encoder_count = geti("encoders");
  a.hidden = geti("hidden");
  a.heads = geti("heads");
  a.has_task_layer = ckpt.find(kTaskLayerName) != nullptr;
  if (a.has_task_layer) a.task_labels = static_cast<int>(ckpt.at(kTaskLayerName).rows());
  validate(a);
  return a;
}

namespace {

void check_model(const MagnitudeModel& m) {
  if (!(m.small_weight_fraction >= 0.0 && m.small_weight_fraction <= 1.0)) {
    fail(Errc::invalid_argument, "small_weight_fraction must lie in [0, 1]");
  }
  if (!(m.tail_fraction >= 0.0 && m.tail_fraction <= 1.0)) {
    fail(Errc::invalid_argument, "tail_fraction must lie in [0, 1]");
  }
  if (!(m.body_mean > 0.0)) fail(Errc::invalid_argument, "body_mean must be positive");
  if (!(m.max_abs >= 0.0)) fail(Errc::invalid_argument, "max_abs must be nonnegative");
}

float small_magnitude(Rng& rng) {
  float v = static_cast<float>(rng.uniform() * kSmallWeightThreshold);
  if (static_cast<double>(v) >= kSmallWeightThreshold) {
    v = std::nextafter(static_cast<float>(kSmallWeightThreshold), 0.0f);
    while (static_cast<double>(v) >= kSmallWeightThreshold) v = std::nextafter(v, 0.0f);
  }
  return v;
}

float large_magnitude(Rng& rng, const MagnitudeModel& m) {
  double a;
  if (m.max_abs > 1.0 && rng.bernoulli(m.tail_fraction)) {
    a = std::exp(rng.uniform(0.0, std::log(m.max_abs)));
  } else {
    a = kSmallWeightThreshold + rng.exponential(m.body_mean);
  }
  if (m.max_abs > 0.0) a = std::min(a, std::max(m.max_abs, kSmallWeightThreshold));
  float v = static_cast<float>(a);
  if (static_cast<double>(v) < kSmallWeightThreshold) v = std::nextafter(v, 1.0f);
  return v;
}

WeightTensor draw_tensor(std::string name, std::vector<std::uint32_t> dims, std::uint64_t seed,
                         std::string_view purpose, const MagnitudeModel& m) {
  WeightTensor t;
  t.name = std::move(name);
  t.dims = std::move(dims);
  const std::size_t n = t.element_count();
  t.data.resize(n);
  Rng rng = Rng::stream(seed, std::string(purpose) + "/" + t.name);
  // Selection sampling: exactly floor(f * n) small positions.
  const auto n_small = static_cast<std::size_t>(std::floor(m.small_weight_fraction * static_cast<double>(n)));
  std::size_t remaining = n_small;
  bool pinned = false;
  for (std::size_t i = 0; i < n; ++i) {
    const bool small = rng.below(n - i) < remaining;
    float mag;
    if (small) {
      --remaining;
      mag = small_magnitude(rng);
    } else if (!pinned && m.max_abs >= kSmallWeightThreshold) {
      mag = static_cast<float>(m.max_abs);
      pinned = true;
    } else {
      mag = large_magnitude(rng, m);
    }
    t.data[i] = rng.bernoulli(0.5) ? -mag : mag;
  }
  return t;
}

Checkpoint draw_checkpoint(const ArchSpec& arch, std::uint64_t seed, std::string_view purpose,
                           const MagnitudeModel& m) {
  validate(arch);
  check_model(m);
  Checkpoint ckpt;
  ckpt.set_meta("arch", arch_label(arch));
  ckpt.set_meta("encoders", std::to_string(arch.encoder_count));
  ckpt.set_meta("hidden", std::to_string(arch.hidden));
  ckpt.set_meta("heads", std::to_string(arch.heads));
  ckpt.set_meta("seed", std::to_string(seed));
  ckpt.set_meta("stream", std::string(purpose));
  const auto h = static_cast<std::uint32_t>(arch.hidden);
  for (int layer = 0; layer < arch.encoder_count; ++layer) {
    for (char which : {'q', 'k', 'v'}) {
      ckpt.add(draw_tensor(encoder_tensor_name(layer, which), {h, h}, seed, purpose, m));
    }
  }
  if (arch.has_task_layer) {
    ckpt.add(draw_tensor(std::string(kTaskLayerName), {static_cast<std::uint32_t>(arch.task_labels), h}, seed,
                         purpose, m));
    ckpt.set_meta("task_layer", std::string(kTaskLayerName));
  }
  return ckpt;
}

bool negative(float v) { return v < 0.0f; }

// Adds sigma * z to every weight, then caps sign flips at the target by
// reflecting the surplus. `z` comes from a per-tensor stream so that every
// epoch of a schedule perturbs along the same direction.
WeightTensor perturb(const WeightTensor& base, double sigma, double flip_target, std::uint64_t seed) {
  WeightTensor out = base;
  if (sigma == 0.0) return out;
  Rng rng = Rng::stream(seed, "finetune/" + base.name);
  const std::size_t n = base.data.size();
  std::vector<double> delta(n);
  std::vector<std::size_t> flips;
  for (std::size_t i = 0; i < n; ++i) {
    delta[i] = sigma * rng.normal();
    const float b = base.data[i];
    if (std::isnan(b)) continue;
    const float v = static_cast<float>(static_cast<double>(b) + delta[i]);
    out.data[i] = v;
    if (negative(v) != negative(b)) flips.push_back(i);
  }
  const auto allowed = static_cast<std::size_t>(std::floor(flip_target * static_cast<double>(n)));
  if (flips.size() > allowed) {
    Rng keep = Rng::stream(seed, "flipkeep/" + base.name);
    std::size_t need = allowed;
    for (std::size_t j = 0; j < flips.size(); ++j) {
      if (keep.below(flips.size() - j) < need) {
        --need;
        continue;
      }
      const std::size_t i = flips[j];
      out.data[i] = static_cast<float>(static_cast<double>(base.data[i]) - delta[i]);
    }
  }
  return out;
}

Checkpoint finetune_impl(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed, double encoder_sigma,
                         double last_sigma) {
  Checkpoint out(base.metadata());
  for (const auto& t : base.tensors()) {
    if (t.dtype != Dtype::f32) fail(Errc::unsupported_format, "fine-tune simulation expects f32 tensors");
    const double sigma = is_task_layer(t.name) ? last_sigma : encoder_sigma;
    out.add(perturb(t, sigma, dm.sign_flip_target, seed));
  }
  out.set_meta("finetune_seed", std::to_string(seed));
  return out;
}

const double kMeanAbsPerSigma = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Checkpoint gen_base(const ArchSpec& arch, std::uint64_t seed, const MagnitudeModel& model) {
  auto ckpt = draw_checkpoint(arch, seed, "base", model);
  ckpt.set_meta("small_weight_fraction", std::to_string(model.small_weight_fraction));
  return ckpt;
}

void validate(const DeltaModel& dm) {
  if (!(dm.sigma_encoder >= 0.0) || !(dm.sigma_last_layer >= 0.0)) {
    fail(Errc::invalid_argument, "sigmas must be nonnegative");
  }
  for (double f : {dm.sign_flip_target, dm.small_weight_fraction}) {
    if (!(f >= 0.0 && f <= 1.0)) fail(Errc::invalid_argument, "fractions must lie in [0, 1]");
  }
  for (double e : dm.epochs) {
    if (!(e >= 0.0)) fail(Errc::invalid_argument, "epoch drift targets must be nonnegative");
  }
  if (!(dm.last_layer_tau > 0.0)) fail(Errc::invalid_argument, "last_layer_tau must be positive");
}

std::vector<double> default_epoch_schedule() {
  // knots: (1, 0.0006) (3, 0.001) (9, 0.0015) (30, 0.00018), linear between
  const double xs[] = {1, 3, 9, 30};
  const double ys[] = {0.0006, 0.001, 0.0015, 0.00018};
  std::vector<double> out;
  for (int e = 1; e <= 30; ++e) {
    int seg = 0;
    while (seg < 2 && e > xs[seg + 1]) ++seg;
    const double t = (e - xs[seg]) / (xs[seg + 1] - xs[seg]);
    out.push_back(ys[seg] + t * (ys[seg + 1] - ys[seg]));
  }
  return out;
}

Checkpoint apply_finetune(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed) {
  validate(dm);
  return finetune_impl(base, dm, seed, dm.sigma_encoder, dm.sigma_last_layer);
}

Checkpoint apply_finetune_epoch(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed, int epoch) {
  validate(dm);
  if (epoch < 1 || epoch > static_cast<int>(dm.epochs.size())) {
    fail(Errc::invalid_argument, "epoch index outside the drift schedule");
  }
  const double enc_sigma = dm.epochs[static_cast<std::size_t>(epoch - 1)] / kMeanAbsPerSigma;
  const double last_sigma = dm.sigma_last_layer * (1.0 - std::exp(-epoch / dm.last_layer_tau));
  auto out = finetune_impl(base, dm, seed, enc_sigma, last_sigma);
  out.set_meta("epoch", std::to_string(epoch));
  return out;
}

std::vector<DriftPoint> drift_curve(const Checkpoint& base, const DeltaModel& dm, std::uint64_t seed) {
  std::vector<DriftPoint> out;
  for (int e = 1; e <= static_cast<int>(dm.epochs.size()); ++e) {
    const auto tuned = apply_finetune_epoch(base, dm, seed, e);
    double enc_sum = 0.0, last_sum = 0.0;
    std::size_t enc_n = 0, last_n = 0;
    for (std::size_t t = 0; t < base.tensors().size(); ++t) {
      const auto& a = base.tensors()[t];
      const auto& b = tuned.tensors()[t];
      double s = 0.0;
      for (std::size_t i = 0; i < a.data.size(); ++i) {
        s += std::abs(static_cast<double>(b.data[i]) - static_cast<double>(a.data[i]));
      }
      if (is_task_layer(a.name)) {
        last_sum += s;
        last_n += a.data.size();
      } else {
        enc_sum += s;
        enc_n += a.data.size();
      }
    }
    out.push_back({e, enc_n ? enc_sum / static_cast<double>(enc_n) : 0.0,
                   last_n ? last_sum / static_cast<double>(last_n) : 0.0});
  }
  return out;
}

namespace {

// CDF of |w| under a magnitude model.
double magnitude_cdf(const MagnitudeModel& m, double t) {
  if (t <= 0.0) return 0.0;
  const double eps = kSmallWeightThreshold;
  const double f = m.small_weight_fraction;
  const bool tail = m.max_abs > 1.0;
  const double pt = tail ? m.tail_fraction : 0.0;
  double c = f * std::min(t / eps, 1.0);
  if (t > eps) c += (1.0 - f) * (1.0 - pt) * (1.0 - std::exp(-(t - eps) / m.body_mean));
  if (tail && t > 1.0) c += (1.0 - f) * pt * std::log(std::min(t, m.max_abs)) / std::log(m.max_abs);
  return c;
}

}  // namespace

double expected_mean_gap(const MagnitudeModel& a, const MagnitudeModel& b) {
  // With independent symmetric signs, E|a - b| = E max(|a|, |b|)
  // = integral of 1 - F_a(t) F_b(t) dt.
  const double upper = std::max({a.max_abs, b.max_abs, kSmallWeightThreshold + 60.0 * std::max(a.body_mean, b.body_mean)});
  auto g = [&](double t) { return 1.0 - magnitude_cdf(a, t) * magnitude_cdf(b, t); };
  double total = 0.0;
  auto simpson = [&](double lo, double hi, int n) {
    const double h = (hi - lo) / n;
    double s = g(lo) + g(hi);
    for (int i = 1; i < n; ++i) s += g(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
  };
  total += simpson(0.0, kSmallWeightThreshold, 200);
  total += simpson(kSmallWeightThreshold, 1.0, 20000);
  if (upper > 1.0) total += simpson(1.0, upper, 20000);
  return total;
}

MagnitudeModel calibrate_independent(const IndependentOptions& opts) {
  if (!(opts.gap_lo > 0.0 && opts.gap_hi > opts.gap_lo)) fail(Errc::invalid_argument, "gap band must be increasing");
  const double target = 0.5 * (opts.gap_lo + opts.gap_hi);
  MagnitudeModel m = opts.reference;
  double lo = 1e-6, hi = 50.0;
  for (int it = 0; it < 100; ++it) {
    m.body_mean = 0.5 * (lo + hi);
    if (expected_mean_gap(opts.reference, m) < target) lo = m.body_mean;
    else hi = m.body_mean;
  }
  m.body_mean = 0.5 * (lo + hi);
  return m;
}

Checkpoint gen_independent(const ArchSpec& arch, std::uint64_t seed, const IndependentOptions& opts) {
  const MagnitudeModel m = calibrate_independent(opts);
  auto ckpt = draw_checkpoint(arch, seed, "independent", m);
  ckpt.set_meta("small_weight_fraction", std::to_string(m.small_weight_fraction));
  return ckpt;
}

}  // namespace finetap
