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

#include "arch_extract.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "error.hpp"

namespace finetap {

std::string_view region_kind_name(RegionKind k) {
  switch (k) {
    case RegionKind::prologue: return "prologue";
    case RegionKind::encoder: return "encoder-region";
    case RegionKind::xla: return "xla-region";
    case RegionKind::epilogue: return "epilogue";
  }
  return "?";
}

std::string_view size_class_name(SizeClass s) {
  switch (s) {
    case SizeClass::base_like: return "base-like";
    case SizeClass::large_like: return "large-like";
    case SizeClass::unknown: return "unknown";
  }
  return "?";
}

PeriodResult detect_period(std::span<const std::uint32_t> s, std::span<const std::int64_t> durations) {
  PeriodResult r;
  const std::size_t n = s.size();
  if (n < 2) return r;
  // For each lag: matches m(L) and the longest run of i with s[i] == s[i+L].
  // A lag is admissible when its run holds at least one full unit (and 8
  // events); the winner covers the most events with run + L, ties to the
  // smaller lag. Sub-block lags inside a unit cover less than the unit.
  std::size_t best_lag = 0, best_cover = 0, best_m = 0, run_start = 0, run_len = 0;
  for (std::size_t lag = 1; lag <= n / 2; ++lag) {
    std::size_t m = 0, cur = 0, cur_start = 0, longest = 0, longest_start = 0;
    for (std::size_t i = 0; i + lag < n; ++i) {
      if (s[i] == s[i + lag]) {
        ++m;
        if (cur == 0) cur_start = i;
        if (++cur > longest) {
          longest = cur;
          longest_start = cur_start;
        }
      } else {
        cur = 0;
      }
    }
    if (longest < std::max<std::size_t>(lag, 8)) continue;
    if (longest + lag > best_cover) {
      best_cover = longest + lag;
      best_lag = lag;
      best_m = m;
      run_start = longest_start;
      run_len = longest;
    }
  }
  if (best_lag == 0) return r;
  const std::size_t p = best_lag;
  std::size_t count = (run_len + p) / p;
  const std::size_t rem = (run_len + p) % p;
  if (static_cast<double>(rem) >= 0.8 * static_cast<double>(p)) ++count;
  r.found = true;
  r.unit_length = p;
  r.count = count;
  r.start = run_start;
  r.score = static_cast<double>(best_m) / static_cast<double>(n - p);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t b = run_start + k * p;
    r.boundaries.emplace_back(b, std::min(n, b + p));
  }
  if (durations.size() == n) {
    std::int64_t best = -1;
    for (std::size_t i = 0; i < p && run_start + i < n; ++i) {
      if (durations[run_start + i] > best) {
        best = durations[run_start + i];
        r.anchor_offset = i;
      }
    }
  }
  return r;
}

namespace {

std::vector<std::uint32_t> kid_seq(const KernelTrace& t, std::size_t b, std::size_t e) {
  std::vector<std::uint32_t> out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) out.push_back(t.events[i].kid);
  return out;
}

struct Window {
  std::size_t begin;
  double log_median;
  double log_rate;
};

std::vector<Window> window_features(const KernelTrace& t) {
  std::vector<Window> ws;
  const auto& ev = t.events;
  std::vector<std::int64_t> buf(kRegionWindow);
  for (std::size_t w = 0; w + kRegionWindow <= ev.size(); w += kRegionStride) {
    for (std::size_t i = 0; i < kRegionWindow; ++i) buf[i] = ev[w + i].dur_ns;
    std::nth_element(buf.begin(), buf.begin() + kRegionWindow / 2, buf.end());
    const auto& last = ev[w + kRegionWindow - 1];
    const double span = static_cast<double>(std::max<std::int64_t>(1, last.start_ns + last.dur_ns - ev[w].start_ns));
    ws.push_back({w, std::log(static_cast<double>(buf[kRegionWindow / 2])),
                  std::log(static_cast<double>(kRegionWindow) * 1e3 / span)});
  }
  return ws;
}

// Two-means in (log median, log rate), seeded by the extreme windows.
std::vector<int> two_means(const std::vector<Window>& ws, double* separation) {
  std::vector<int> lab(ws.size(), 0);
  auto lo = std::min_element(ws.begin(), ws.end(), [](auto& a, auto& b) { return a.log_median < b.log_median; });
  auto hi = std::max_element(ws.begin(), ws.end(), [](auto& a, auto& b) { return a.log_median < b.log_median; });
  double c[2][2] = {{lo->log_median, lo->log_rate}, {hi->log_median, hi->log_rate}};
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      double d[2];
      for (int k = 0; k < 2; ++k) {
        d[k] = std::hypot(ws[i].log_median - c[k][0], ws[i].log_rate - c[k][1]);
      }
      const int l = d[1] < d[0] ? 1 : 0;
      changed |= l != lab[i];
      lab[i] = l;
    }
    double s[2][3] = {};
    for (std::size_t i = 0; i < ws.size(); ++i) {
      s[lab[i]][0] += ws[i].log_median;
      s[lab[i]][1] += ws[i].log_rate;
      s[lab[i]][2] += 1;
    }
    for (int k = 0; k < 2; ++k) {
      if (s[k][2] > 0) {
        c[k][0] = s[k][0] / s[k][2];
        c[k][1] = s[k][1] / s[k][2];
      }
    }
    if (!changed && it > 0) break;
  }
  *separation = std::hypot(c[0][0] - c[1][0], c[0][1] - c[1][1]);
  return lab;
}

constexpr double kMinSeparation = 0.7;
constexpr std::size_t kMinXlaWindows = 4;

bool looks_periodic(const KernelTrace& t, std::size_t b, std::size_t e) {
  const auto kids = kid_seq(t, b, e);
  const auto p = detect_period(kids);
  return p.found && static_cast<double>(p.count * p.unit_length) >= 0.5 * static_cast<double>(e - b);
}

std::optional<IndexRange> find_xla(const KernelTrace& t) {
  const std::size_t n = t.events.size();
  const auto ws = window_features(t);
  if (ws.size() < kMinXlaWindows + 2) return std::nullopt;
  double sep = 0.0;
  const auto lab = two_means(ws, &sep);
  if (sep < kMinSeparation) return std::nullopt;
  for (int cluster = 0; cluster < 2; ++cluster) {
    // Longest contiguous run of this cluster.
    std::size_t best_a = 0, best_len = 0;
    for (std::size_t i = 0; i < ws.size();) {
      if (lab[i] != cluster) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < ws.size() && lab[j] == cluster) ++j;
      if (j - i > best_len) {
        best_len = j - i;
        best_a = i;
      }
      i = j;
    }
    if (best_len < kMinXlaWindows) continue;
    const std::size_t best_b = best_a + best_len;  // one past
    if (best_a == 0 || best_b >= ws.size()) continue;  // must have neighbours on both sides
    const std::size_t a = ws[best_a].begin;
    const std::size_t b = ws[best_b - 1].begin + kRegionWindow;
    if (looks_periodic(t, a, b)) continue;
    // Refine by vocabulary: ids seen only inside the candidate.
    std::unordered_set<std::uint32_t> outside;
    const std::size_t left_end = a > kRegionWindow ? a - kRegionWindow : 0;
    const std::size_t right_begin = std::min(n, b + kRegionWindow);
    for (std::size_t i = 0; i < left_end; ++i) outside.insert(t.events[i].kid);
    for (std::size_t i = right_begin; i < n; ++i) outside.insert(t.events[i].kid);
    std::unordered_set<std::uint32_t> exclusive;
    for (std::size_t i = a; i < b; ++i) {
      if (!outside.count(t.events[i].kid)) exclusive.insert(t.events[i].kid);
    }
    if (exclusive.empty()) continue;
    std::size_t first = n, last = 0, hits = 0;
    for (std::size_t i = left_end; i < right_begin; ++i) {
      if (exclusive.count(t.events[i].kid)) {
        first = std::min(first, i);
        last = i;
        hits += i >= a && i < b;
      }
    }
    // Exclusive kernels must make up most of the candidate; otherwise they
    // are prologue or epilogue material caught at an edge.
    if (first >= last || 2 * hits < b - a) continue;
    return IndexRange{first, last + 1};
  }
  return std::nullopt;
}

}  // namespace

RegionAnalysis locate_regions(const KernelTrace& trace) {
  RegionAnalysis ra;
  const std::size_t n = trace.events.size();
  if (n == 0) return ra;
  ra.xla = find_xla(trace);

  std::vector<std::size_t> map;  // concatenated index -> trace index
  map.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ra.xla && i >= ra.xla->first && i < ra.xla->second) continue;
    map.push_back(i);
  }
  std::vector<std::uint32_t> kids;
  std::vector<std::int64_t> durs;
  for (auto i : map) {
    kids.push_back(trace.events[i].kid);
    durs.push_back(trace.events[i].dur_ns);
  }
  PeriodResult p = detect_period(kids, durs);
  if (!p.found) {
    ra.regions.push_back({RegionKind::encoder, 0, n});
    ra.xla.reset();
    ra.period = p;
    return ra;
  }
  auto to_trace = [&](std::size_t c) { return c < map.size() ? map[c] : n; };
  // Unit ends map through the last member, so a unit never spans the gap.
  for (auto& [b, e] : p.boundaries) {
    b = to_trace(b);
    e = to_trace(e - 1) + 1;
  }
  p.start = p.boundaries.front().first;
  ra.period = p;

  const std::size_t enc_begin = p.boundaries.front().first;
  const std::size_t enc_end = p.boundaries.back().second;
  if (enc_begin > 0) ra.regions.push_back({RegionKind::prologue, 0, enc_begin});
  if (ra.xla && ra.xla->first > enc_begin && ra.xla->second < enc_end) {
    // Whatever lies between the last leading unit and the first trailing
    // unit belongs to the XLA region.
    std::size_t lead_end = enc_begin, trail_begin = enc_end;
    for (const auto& [b, e] : p.boundaries) {
      if (e <= ra.xla->first) lead_end = e;
      if (b >= ra.xla->second && trail_begin == enc_end) trail_begin = b;
    }
    ra.xla = IndexRange{lead_end, trail_begin};
    if (lead_end > enc_begin) ra.regions.push_back({RegionKind::encoder, enc_begin, lead_end});
    ra.regions.push_back({RegionKind::xla, lead_end, trail_begin});
    if (enc_end > trail_begin) ra.regions.push_back({RegionKind::encoder, trail_begin, enc_end});
  } else {
    ra.xla.reset();
    ra.regions.push_back({RegionKind::encoder, enc_begin, enc_end});
  }
  if (enc_end < n) ra.regions.push_back({RegionKind::epilogue, enc_end, n});
  return ra;
}

SizeClass estimate_size(double peak_ns, bool graph_family, const SizeCalibration& cal) {
  const double thr = graph_family ? cal.graph_threshold_ns : cal.eager_threshold_ns;
  if (std::isnan(thr) || !(peak_ns > 0.0)) return SizeClass::unknown;
  return peak_ns < thr ? SizeClass::base_like : SizeClass::large_like;
}

namespace {

double encoder_peak(const KernelTrace& trace, const std::vector<IndexRange>& units) {
  std::int64_t peak = 0;
  for (const auto& [b, e] : units) {
    for (std::size_t i = b; i < e; ++i) peak = std::max(peak, trace.events[i].dur_ns);
  }
  return static_cast<double>(peak);
}

}  // namespace

SizeClass estimate_size(const KernelTrace& trace, bool graph_family, const SizeCalibration& cal) {
  const auto ra = locate_regions(trace);
  if (!ra.period.found) return SizeClass::unknown;
  return estimate_size(encoder_peak(trace, ra.period.boundaries), graph_family, cal);
}

SegmentHints hints_from_profile(const SignatureProfile& profile) {
  SegmentHints h;
  for (const auto& k : profile.encoder_template) {
    if (k.block_start && std::find(h.block_start_kids.begin(), h.block_start_kids.end(), k.kid) ==
                             h.block_start_kids.end()) {
      h.block_start_kids.push_back(k.kid);
    }
  }
  const auto lay = intra_encoder_layout(profile);
  h.typical_attention_ns = lay.attention_ns;
  h.typical_feed_forward_ns = lay.feed_forward_ns;
  return h;
}

LayerMap segment_encoder(std::span<const std::uint32_t> kids, std::span<const double> durs,
                         const SegmentHints& hints) {
  if (kids.size() != durs.size()) fail(Errc::invalid_argument, "kernel ids and durations differ in length");
  if (kids.size() < 6) fail(Errc::insufficient_data, "encoder unit too short to segment");
  struct Block {
    std::size_t begin, end;
    double total, max;
    LayerTag tag = LayerTag::feed_forward;
  };
  std::vector<Block> blocks;
  const std::unordered_set<std::uint32_t> starts(hints.block_start_kids.begin(), hints.block_start_kids.end());
  for (std::size_t i = 0; i < kids.size(); ++i) {
    if (blocks.empty() || starts.count(kids[i])) blocks.push_back({i, i, 0.0, 0.0});
    auto& b = blocks.back();
    b.end = i + 1;
    b.total += durs[i];
    b.max = std::max(b.max, durs[i]);
  }
  const double peak = *std::max_element(durs.begin(), durs.end());
  std::size_t ff = 0;
  while (ff < blocks.size() && blocks[ff].max < 0.6 * peak) ++ff;

  LayerMap out;
  if (ff > 0) {
    double longest = 0.0;
    for (std::size_t i = 0; i < ff; ++i) longest = std::max(longest, blocks[i].total);
    std::vector<std::size_t> rest;
    int cores = 0;
    const LayerTag core_tags[] = {LayerTag::key, LayerTag::query, LayerTag::value};
    for (std::size_t i = 0; i < ff; ++i) {
      if (blocks[i].total >= 0.9 * longest) {
        blocks[i].tag = cores < 3 ? core_tags[cores] : LayerTag::extra_core;
        ++cores;
      } else {
        rest.push_back(i);
      }
    }
    if (cores > 3) out.anomalies.emplace_back(kExtraCoreVector);
    if (!rest.empty()) {
      auto score = std::max_element(rest.begin(), rest.end(),
                                    [&](auto a, auto b) { return blocks[a].total < blocks[b].total; });
      blocks[*score].tag = LayerTag::score;
      int shortest = 0;
      for (auto i : rest) {
        if (i == *score) continue;
        blocks[i].tag = shortest++ == 0 ? LayerTag::softmax : LayerTag::attn_layernorm;
      }
    }
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    out.segments.push_back({b.tag, b.begin, b.end, b.total});
    (i < ff ? out.attention_ns : out.feed_forward_ns) += b.total;
  }
  const bool short_attn = hints.typical_attention_ns > 0.0 && out.attention_ns < 0.7 * hints.typical_attention_ns;
  const bool short_ff = hints.typical_feed_forward_ns > 0.0 && out.feed_forward_ns < 0.7 * hints.typical_feed_forward_ns;
  if (short_attn || short_ff) out.anomalies.emplace_back(kShortenedLayer);
  return out;
}

LayerMap segment_encoder(const KernelTrace& trace, IndexRange boundary, const SegmentHints& hints) {
  if (boundary.second > trace.events.size() || boundary.first >= boundary.second) {
    fail(Errc::invalid_argument, "boundary outside the trace");
  }
  const auto kids = kid_seq(trace, boundary.first, boundary.second);
  std::vector<double> durs;
  for (std::size_t i = boundary.first; i < boundary.second; ++i) durs.push_back(static_cast<double>(trace.events[i].dur_ns));
  return segment_encoder(kids, durs, hints);
}

ArchitectureHypothesis extract_architecture(const KernelTrace& trace, const SizeCalibration& cal,
                                            const SegmentHints* hints, std::optional<bool> graph_family) {
  ArchitectureHypothesis h;
  if (trace.events.empty()) return h;
  const auto ra = locate_regions(trace);
  h.regions = ra.regions;
  if (!ra.period.found) return h;
  h.encoder_count = static_cast<int>(ra.period.count);
  h.unit_length = ra.period.unit_length;
  h.boundaries = ra.period.boundaries;
  h.peak_ns = encoder_peak(trace, h.boundaries);
  h.size = estimate_size(h.peak_ns, graph_family.value_or(ra.xla.has_value()), cal);
  if (hints) {
    const std::size_t p = h.unit_length;
    std::vector<double> mean(p, 0.0);
    std::size_t units = 0;
    for (const auto& [b, e] : h.boundaries) {
      if (e - b != p) continue;
      for (std::size_t i = 0; i < p; ++i) mean[i] += static_cast<double>(trace.events[b + i].dur_ns);
      ++units;
    }
    if (units > 0 && p >= 6) {
      for (auto& m : mean) m /= static_cast<double>(units);
      const auto kids = kid_seq(trace, h.boundaries.front().first, h.boundaries.front().first + p);
      h.layer_map = segment_encoder(kids, mean, *hints);
      h.anomalies = h.layer_map->anomalies;
    }
  }
  return h;
}

std::string hypothesis_json(const ArchitectureHypothesis& h) {
  nlohmann::ordered_json j;
  j["encoders"] = h.encoder_count ? nlohmann::ordered_json(*h.encoder_count) : nlohmann::ordered_json(nullptr);
  j["size"] = std::string(size_class_name(h.size));
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& r : h.regions) {
    j["regions"].push_back({{"kind", std::string(region_kind_name(r.kind))}, {"begin", r.begin}, {"end", r.end}});
  }
  j["anomalies"] = h.anomalies;
  j["unit_length"] = h.unit_length;
  j["peak_ns"] = h.peak_ns;
  return j.dump();
}

}  // namespace finetap
