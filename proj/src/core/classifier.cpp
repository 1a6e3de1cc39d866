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

#include "classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "rng.hpp"

namespace finetap {

TraceImage rasterize(const KernelTrace& trace) {
  if (trace.events.empty()) fail(Errc::insufficient_data, "cannot rasterize an empty trace");
  std::int64_t max_start = 0, max_dur = 1;
  for (const auto& e : trace.events) {
    max_start = std::max(max_start, e.start_ns);
    max_dur = std::max(max_dur, e.dur_ns);
  }
  TraceImage img;
  img.black.reserve(trace.events.size());
  using i128 = __int128;
  for (const auto& e : trace.events) {
    const auto x = max_start > 0 ? static_cast<std::uint32_t>(static_cast<i128>(1023) * e.start_ns / max_start) : 0u;
    const auto yd = static_cast<std::uint32_t>(static_cast<i128>(1023) * e.dur_ns / max_dur);
    const std::uint32_t y = 1023u - yd;
    img.black.push_back(y * kImageSize + x);
  }
  std::sort(img.black.begin(), img.black.end());
  img.black.erase(std::unique(img.black.begin(), img.black.end()), img.black.end());
  return img;
}

bool is_black(const TraceImage& img, int x, int y) {
  if (x < 0 || y < 0 || x >= kImageSize || y >= kImageSize) return false;
  return std::binary_search(img.black.begin(), img.black.end(), static_cast<std::uint32_t>(y * kImageSize + x));
}

std::vector<std::uint8_t> image_pgm(const TraceImage& img) {
  const std::string header = "P5\n1024 1024\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t off = out.size();
  out.resize(off + static_cast<std::size_t>(kImageSize) * kImageSize, 255);
  for (auto p : img.black) out[off + p] = 0;
  return out;
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::encoder_count: return "encoder_count";
    case Task::vendor: return "vendor";
    case Task::framework: return "framework";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  for (auto t : {Task::encoder_count, Task::vendor, Task::framework}) {
    if (task_name(t) == name) return t;
  }
  return std::nullopt;
}

CnnModel::CnnModel(int classes) : classes_(classes) {
  if (classes < 1) fail(Errc::invalid_argument, "class count must be positive");
  const auto c = static_cast<std::uint32_t>(classes);
  const std::vector<std::pair<std::string, std::vector<std::uint32_t>>> shapes = {
      {"conv1.w", {6, 3, 5, 5}}, {"conv1.b", {6}},  {"conv2.w", {16, 6, 5, 5}}, {"conv2.b", {16}},
      {"fc1.w", {120, kFeatures}}, {"fc1.b", {120}}, {"fc2.w", {84, 120}},       {"fc2.b", {84}},
      {"fc3.w", {c, 84}},          {"fc3.b", {c}},
  };
  std::size_t off = 0;
  for (const auto& [name, dims] : shapes) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    layout_.push_back({name, dims, off, n});
    off += n;
  }
  params_.assign(off, 0.0);
}

const LayerSlice& CnnModel::slice(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return s;
  }
  fail(Errc::invalid_argument, "no layer named '" + std::string(name) + "'");
}

CnnModel init_model(int classes, std::uint64_t seed) {
  CnnModel m(classes);
  Rng rng = Rng::stream(seed, "cnn/init");
  auto fill = [&](const char* w, const char* b, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    const auto& sw = m.slice(w);
    for (std::size_t i = 0; i < sw.size; ++i) m.params()[sw.offset + i] = sd * rng.normal();
    const auto& sb = m.slice(b);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < sb.size; ++i) m.params()[sb.offset + i] = rng.uniform(-bound, bound);
  };
  fill("conv1.w", "conv1.b", 75);
  fill("conv2.w", "conv2.b", 150);
  fill("fc1.w", "fc1.b", kFeatures);
  fill("fc2.w", "fc2.b", 120);
  fill("fc3.w", "fc3.b", 84);
  return m;
}

namespace {

constexpr int kC1 = 6;
constexpr int kC2 = 16;
constexpr int kGrid1 = kPool1 * 8;  // 1016: conv1 rows/cols that reach pool1
constexpr int kGrid2 = kPool2 * 8;  // 120
constexpr int kPool1Cells = kPool1 * kPool1;

struct Workspace {
  std::vector<double> acc;             // [1016][1016][6], zero between calls
  std::vector<std::uint8_t> touched;   // per pool1 block
  std::vector<std::uint8_t> bitmap;    // 1024 x 1024

  // Forward state kept for the backward pass.
  std::vector<double> z1;              // [6][127][127] block max of conv1 pre-activation
  std::vector<std::uint32_t> arg1;     // conv1 position (i * 1016 + j) of that max
  std::vector<double> p1;              // relu(z1)
  std::vector<double> z2;              // [16][120][120]
  std::vector<double> z2max;           // [16][15][15]
  std::vector<std::uint32_t> arg2;     // i * 120 + j
  std::vector<double> f;               // 3600
  std::vector<double> h1, h2, logits;  // post-activation for h1/h2
  std::vector<double> g_p1;            // [6][127][127]

  Workspace()
      : acc(static_cast<std::size_t>(kGrid1) * kGrid1 * kC1, 0.0),
        touched(kPool1Cells, 0),
        bitmap(static_cast<std::size_t>(kImageSize) * kImageSize, 0),
        z1(kC1 * kPool1Cells),
        arg1(kC1 * kPool1Cells),
        p1(kC1 * kPool1Cells),
        z2(static_cast<std::size_t>(kC2) * kGrid2 * kGrid2),
        z2max(kFeatures),
        arg2(kFeatures),
        f(kFeatures),
        h1(120),
        h2(84),
        g_p1(kC1 * kPool1Cells) {}
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

void forward(const CnnModel& model, const TraceImage& img, Workspace& ws) {
  const double* w1 = model.data("conv1.w");
  const double* b1 = model.data("conv1.b");
  // Channels are identical copies, so conv1 needs only the channel sum.
  double weff[kC1][25];
  for (int o = 0; o < kC1; ++o) {
    for (int k = 0; k < 25; ++k) weff[o][k] = w1[(o * 3 + 0) * 25 + k] + w1[(o * 3 + 1) * 25 + k] + w1[(o * 3 + 2) * 25 + k];
  }
  for (auto p : img.black) {
    const int py = static_cast<int>(p / kImageSize);
    const int px = static_cast<int>(p % kImageSize);
    for (int u = 0; u < 5; ++u) {
      const int i = py - u;
      if (i < 0 || i >= kGrid1) continue;
      for (int v = 0; v < 5; ++v) {
        const int j = px - v;
        if (j < 0 || j >= kGrid1) continue;
        double* a = &ws.acc[(static_cast<std::size_t>(i) * kGrid1 + j) * kC1];
        for (int o = 0; o < kC1; ++o) a[o] += weff[o][u * 5 + v];
        ws.touched[(i >> 3) * kPool1 + (j >> 3)] = 1;
      }
    }
  }
  for (int bi = 0; bi < kPool1; ++bi) {
    for (int bj = 0; bj < kPool1; ++bj) {
      const int cell = bi * kPool1 + bj;
      double best[kC1];
      std::uint32_t arg[kC1];
      for (int o = 0; o < kC1; ++o) {
        best[o] = b1[o];
        arg[o] = static_cast<std::uint32_t>(bi * 8 * kGrid1 + bj * 8);
      }
      if (ws.touched[cell]) {
        for (int o = 0; o < kC1; ++o) best[o] = -INFINITY;
        for (int i = bi * 8; i < bi * 8 + 8; ++i) {
          for (int j = bj * 8; j < bj * 8 + 8; ++j) {
            double* a = &ws.acc[(static_cast<std::size_t>(i) * kGrid1 + j) * kC1];
            for (int o = 0; o < kC1; ++o) {
              const double z = b1[o] + a[o];
              if (z > best[o]) {
                best[o] = z;
                arg[o] = static_cast<std::uint32_t>(i * kGrid1 + j);
              }
              a[o] = 0.0;
            }
          }
        }
        ws.touched[cell] = 0;
      }
      for (int o = 0; o < kC1; ++o) {
        ws.z1[o * kPool1Cells + cell] = best[o];
        ws.arg1[o * kPool1Cells + cell] = arg[o];
        ws.p1[o * kPool1Cells + cell] = std::max(0.0, best[o]);
      }
    }
  }

  // conv2 = response to the constant background plus scattered deviations.
  const double* w2 = model.data("conv2.w");
  const double* b2 = model.data("conv2.b");
  double bg[kC1];
  for (int c = 0; c < kC1; ++c) bg[c] = std::max(0.0, b1[c]);
  for (int o = 0; o < kC2; ++o) {
    double base = b2[o];
    for (int c = 0; c < kC1; ++c) {
      double s = 0.0;
      for (int k = 0; k < 25; ++k) s += w2[(o * kC1 + c) * 25 + k];
      base += bg[c] * s;
    }
    std::fill(ws.z2.begin() + o * kGrid2 * kGrid2, ws.z2.begin() + (o + 1) * kGrid2 * kGrid2, base);
  }
  for (int c = 0; c < kC1; ++c) {
    for (int y = 0; y < kPool1; ++y) {
      for (int x = 0; x < kPool1; ++x) {
        const double d = ws.p1[c * kPool1Cells + y * kPool1 + x] - bg[c];
        if (d == 0.0) continue;
        for (int u = 0; u < 5; ++u) {
          const int i = y - u;
          if (i < 0 || i >= kGrid2) continue;
          for (int v = 0; v < 5; ++v) {
            const int j = x - v;
            if (j < 0 || j >= kGrid2) continue;
            for (int o = 0; o < kC2; ++o) {
              ws.z2[(o * kGrid2 + i) * kGrid2 + j] += d * w2[(o * kC1 + c) * 25 + u * 5 + v];
            }
          }
        }
      }
    }
  }
  for (int o = 0; o < kC2; ++o) {
    for (int bi = 0; bi < kPool2; ++bi) {
      for (int bj = 0; bj < kPool2; ++bj) {
        double best = -INFINITY;
        std::uint32_t arg = 0;
        for (int i = bi * 8; i < bi * 8 + 8; ++i) {
          for (int j = bj * 8; j < bj * 8 + 8; ++j) {
            const double z = ws.z2[(o * kGrid2 + i) * kGrid2 + j];
            if (z > best) {
              best = z;
              arg = static_cast<std::uint32_t>(i * kGrid2 + j);
            }
          }
        }
        const int k = (o * kPool2 + bi) * kPool2 + bj;
        ws.z2max[k] = best;
        ws.arg2[k] = arg;
        ws.f[k] = std::max(0.0, best);
      }
    }
  }

  auto dense = [](const double* w, const double* b, const std::vector<double>& in, std::vector<double>& out,
                  std::size_t n_out, bool relu) {
    out.assign(n_out, 0.0);
    for (std::size_t r = 0; r < n_out; ++r) {
      double s = b[r];
      const double* row = w + r * in.size();
      for (std::size_t k = 0; k < in.size(); ++k) s += row[k] * in[k];
      out[r] = relu ? std::max(0.0, s) : s;
    }
  };
  dense(model.data("fc1.w"), model.data("fc1.b"), ws.f, ws.h1, 120, true);
  dense(model.data("fc2.w"), model.data("fc2.b"), ws.h1, ws.h2, 84, true);
  dense(model.data("fc3.w"), model.data("fc3.b"), ws.h2, ws.logits, static_cast<std::size_t>(model.classes()), false);
}

}  // namespace

std::vector<double> cnn_forward(const CnnModel& model, const TraceImage& img) {
  auto& ws = workspace();
  forward(model, img, ws);
  return ws.logits;
}

int predict(const CnnModel& model, const TraceImage& img) {
  const auto logits = cnn_forward(model, img);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<double> cnn_forward_dense(const CnnModel& model, const TraceImage& img) {
  std::vector<std::uint8_t> x(static_cast<std::size_t>(kImageSize) * kImageSize, 0);
  for (auto p : img.black) x[p] = 1;
  const double* w1 = model.data("conv1.w");
  const double* b1 = model.data("conv1.b");
  std::vector<double> c1(static_cast<std::size_t>(kC1) * kConv1Out * kConv1Out);
  for (int o = 0; o < kC1; ++o) {
    for (int i = 0; i < kConv1Out; ++i) {
      for (int j = 0; j < kConv1Out; ++j) {
        double s = b1[o];
        for (int c = 0; c < 3; ++c) {
          for (int u = 0; u < 5; ++u) {
            for (int v = 0; v < 5; ++v) {
              if (x[(i + u) * kImageSize + j + v]) s += w1[((o * 3 + c) * 5 + u) * 5 + v];
            }
          }
        }
        c1[(static_cast<std::size_t>(o) * kConv1Out + i) * kConv1Out + j] = std::max(0.0, s);
      }
    }
  }
  std::vector<double> p1(static_cast<std::size_t>(kC1) * kPool1Cells);
  for (int o = 0; o < kC1; ++o) {
    for (int bi = 0; bi < kPool1; ++bi) {
      for (int bj = 0; bj < kPool1; ++bj) {
        double m = -INFINITY;
        for (int i = 0; i < 8; ++i) {
          for (int j = 0; j < 8; ++j) m = std::max(m, c1[(static_cast<std::size_t>(o) * kConv1Out + bi * 8 + i) * kConv1Out + bj * 8 + j]);
        }
        p1[o * kPool1Cells + bi * kPool1 + bj] = m;
      }
    }
  }
  const double* w2 = model.data("conv2.w");
  const double* b2 = model.data("conv2.b");
  std::vector<double> c2(static_cast<std::size_t>(kC2) * kConv2Out * kConv2Out);
  for (int o = 0; o < kC2; ++o) {
    for (int i = 0; i < kConv2Out; ++i) {
      for (int j = 0; j < kConv2Out; ++j) {
        double s = b2[o];
        for (int c = 0; c < kC1; ++c) {
          for (int u = 0; u < 5; ++u) {
            for (int v = 0; v < 5; ++v) s += w2[((o * kC1 + c) * 5 + u) * 5 + v] * p1[c * kPool1Cells + (i + u) * kPool1 + j + v];
          }
        }
        c2[(o * kConv2Out + i) * kConv2Out + j] = std::max(0.0, s);
      }
    }
  }
  std::vector<double> f(kFeatures);
  for (int o = 0; o < kC2; ++o) {
    for (int bi = 0; bi < kPool2; ++bi) {
      for (int bj = 0; bj < kPool2; ++bj) {
        double m = -INFINITY;
        for (int i = 0; i < 8; ++i) {
          for (int j = 0; j < 8; ++j) m = std::max(m, c2[(o * kConv2Out + bi * 8 + i) * kConv2Out + bj * 8 + j]);
        }
        f[(o * kPool2 + bi) * kPool2 + bj] = m;
      }
    }
  }
  auto fc = [&](const char* wn, const char* bn, const std::vector<double>& in, std::size_t n, bool relu) {
    const double* w = model.data(wn);
    const double* b = model.data(bn);
    std::vector<double> out(n);
    for (std::size_t r = 0; r < n; ++r) {
      double s = b[r];
      for (std::size_t k = 0; k < in.size(); ++k) s += w[r * in.size() + k] * in[k];
      out[r] = relu ? std::max(0.0, s) : s;
    }
    return out;
  };
  const auto h1 = fc("fc1.w", "fc1.b", f, 120, true);
  const auto h2 = fc("fc2.w", "fc2.b", h1, 84, true);
  return fc("fc3.w", "fc3.b", h2, static_cast<std::size_t>(model.classes()), false);
}

double loss_and_gradient(const CnnModel& model, const TraceImage& img, int label, std::vector<double>* grad) {
  if (label < 0 || label >= model.classes()) fail(Errc::invalid_argument, "label outside the class range");
  auto& ws = workspace();
  forward(model, img, ws);
  const auto& z = ws.logits;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  const double loss = lse - z[static_cast<std::size_t>(label)];
  if (!grad) return loss;
  if (grad->size() != model.params().size()) fail(Errc::shape_mismatch, "gradient buffer has the wrong size");

  auto g = [&](const char* name) { return grad->data() + model.slice(name).offset; };
  const std::size_t C = static_cast<std::size_t>(model.classes());
  std::vector<double> d3(C);
  for (std::size_t c = 0; c < C; ++c) d3[c] = std::exp(z[c] - lse) - (static_cast<int>(c) == label ? 1.0 : 0.0);

  // Dense layers: out = W in + b, d_in = W^T d_out, masked by the relu.
  auto back = [&](const char* wn, const char* bn, const std::vector<double>& in, const std::vector<double>& dout,
                  std::vector<double>* din) {
    const double* w = model.data(wn);
    double* gw = g(wn);
    double* gb = g(bn);
    const std::size_t n_in = in.size();
    if (din) din->assign(n_in, 0.0);
    for (std::size_t r = 0; r < dout.size(); ++r) {
      const double d = dout[r];
      if (d == 0.0) continue;
      gb[r] += d;
      double* gr = gw + r * n_in;
      const double* wr = w + r * n_in;
      for (std::size_t k = 0; k < n_in; ++k) gr[k] += d * in[k];
      if (din) {
        for (std::size_t k = 0; k < n_in; ++k) (*din)[k] += d * wr[k];
      }
    }
    if (din) {
      for (std::size_t k = 0; k < n_in; ++k) {
        if (in[k] <= 0.0) (*din)[k] = 0.0;
      }
    }
  };
  std::vector<double> d2, d1, df;
  back("fc3.w", "fc3.b", ws.h2, d3, &d2);
  back("fc2.w", "fc2.b", ws.h1, d2, &d1);
  back("fc1.w", "fc1.b", ws.f, d1, &df);

  // pool2 -> conv2 -> pool1.
  const double* w2 = model.data("conv2.w");
  double* gw2 = g("conv2.w");
  double* gb2 = g("conv2.b");
  std::fill(ws.g_p1.begin(), ws.g_p1.end(), 0.0);
  for (int k = 0; k < kFeatures; ++k) {
    const double d = df[static_cast<std::size_t>(k)];
    if (d == 0.0) continue;  // also covers inactive relu (masked above)
    const int o = k / (kPool2 * kPool2);
    const int i = static_cast<int>(ws.arg2[k] / kGrid2);
    const int j = static_cast<int>(ws.arg2[k] % kGrid2);
    gb2[o] += d;
    for (int c = 0; c < kC1; ++c) {
      for (int u = 0; u < 5; ++u) {
        for (int v = 0; v < 5; ++v) {
          const int cell = c * kPool1Cells + (i + u) * kPool1 + (j + v);
          const int wi = (o * kC1 + c) * 25 + u * 5 + v;
          gw2[wi] += d * ws.p1[cell];
          ws.g_p1[cell] += d * w2[wi];
        }
      }
    }
  }

  // pool1 -> conv1 via the stored argmax positions.
  for (auto p : img.black) ws.bitmap[p] = 1;
  double* gw1 = g("conv1.w");
  double* gb1 = g("conv1.b");
  double gweff[kC1][25] = {};
  for (int o = 0; o < kC1; ++o) {
    for (int cell = 0; cell < kPool1Cells; ++cell) {
      const int idx = o * kPool1Cells + cell;
      const double d = ws.g_p1[idx];
      if (d == 0.0 || ws.z1[idx] <= 0.0) continue;
      gb1[o] += d;
      const int i = static_cast<int>(ws.arg1[idx] / kGrid1);
      const int j = static_cast<int>(ws.arg1[idx] % kGrid1);
      for (int u = 0; u < 5; ++u) {
        const std::uint8_t* row = &ws.bitmap[static_cast<std::size_t>(i + u) * kImageSize + j];
        for (int v = 0; v < 5; ++v) {
          if (row[v]) gweff[o][u * 5 + v] += d;
        }
      }
    }
  }
  for (auto p : img.black) ws.bitmap[p] = 0;
  for (int o = 0; o < kC1; ++o) {
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 25; ++k) gw1[(o * 3 + c) * 25 + k] += gweff[o][k];
    }
  }
  return loss;
}

GradientCheckResult gradient_check(const CnnModel& model, const TraceImage& img, int label, double epsilon,
                                   std::size_t per_layer, std::uint64_t seed, const GradientFault& fault) {
  if (!(epsilon > 0.0)) fail(Errc::invalid_argument, "epsilon must be positive");
  std::vector<double> analytic(model.params().size(), 0.0);
  loss_and_gradient(model, img, label, &analytic);
  if (fault) fault(model, analytic);
  GradientCheckResult res;
  CnnModel probe = model;
  Rng rng = Rng::stream(seed, "gradcheck");
  for (const auto& s : model.layout()) {
    res.layers_covered.push_back(s.name);
    const std::size_t n = std::min(per_layer, s.size);
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t idx = s.offset + (n == s.size ? t : rng.below(s.size));
      const double orig = probe.params()[idx];
      probe.params()[idx] = orig + epsilon;
      const double lp = loss_and_gradient(probe, img, label, nullptr);
      probe.params()[idx] = orig - epsilon;
      const double lm = loss_and_gradient(probe, img, label, nullptr);
      probe.params()[idx] = orig;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
      res.max_relative_error = std::max(res.max_relative_error, std::abs(a - numeric) / denom);
      ++res.parameters_checked;
    }
  }
  return res;
}

double accuracy(const CnnModel& model, std::span<const TraceImage> images, std::span<const int> labels) {
  if (images.size() != labels.size()) fail(Errc::invalid_argument, "images and labels differ in count");
  if (images.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < images.size(); ++i) ok += predict(model, images[i]) == labels[i];
  return static_cast<double>(ok) / static_cast<double>(images.size());
}

TrainResult cnn_train(std::span<const TraceImage> images, std::span<const int> labels,
                      std::span<const TraceImage> val_images, std::span<const int> val_labels, int classes,
                      const Hyper& hyper) {
  if (images.size() != labels.size() || val_images.size() != val_labels.size()) {
    fail(Errc::invalid_argument, "images and labels differ in count");
  }
  if (hyper.batch_size < 1 || hyper.epochs < 0 || !(hyper.learning_rate > 0.0)) {
    fail(Errc::invalid_argument, "bad hyperparameters");
  }
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) fail(Errc::invalid_argument, "label outside the class range");
    seen[static_cast<std::size_t>(l)] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) fail(Errc::insufficient_data, "training needs two classes");

  TrainResult res{init_model(classes, hyper.seed), {}, {}, 0};
  CnnModel model = res.model;
  double best_acc = val_images.empty() ? -1.0 : accuracy(model, val_images, val_labels);
  std::vector<double> grad(model.params().size()), velocity(model.params().size(), 0.0);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    Rng rng = Rng::stream(hyper.seed, "epoch/" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) loss_sum += loss_and_gradient(model, images[order[b]], labels[order[b]], &grad);
      const double scale = 1.0 / static_cast<double>(end - start);
      auto& p = model.params();
      for (std::size_t k = 0; k < p.size(); ++k) {
        velocity[k] = hyper.momentum * velocity[k] + grad[k] * scale;
        p[k] -= hyper.learning_rate * velocity[k];
      }
    }
    res.train_loss.push_back(order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size()));
    if (!val_images.empty()) {
      const double acc = accuracy(model, val_images, val_labels);
      res.validation_accuracy.push_back(acc);
      if (acc > best_acc) {
        best_acc = acc;
        res.best_epoch = epoch;
        res.model = model;
      }
    } else {
      res.best_epoch = epoch;
      res.model = model;
    }
  }
  return res;
}

TrainResult cnn_train(std::span<const TraceImage> images, std::span<const int> labels, int classes,
                      const Hyper& hyper) {
  if (images.size() != labels.size()) fail(Errc::invalid_argument, "images and labels differ in count");
  const auto n_val = static_cast<std::size_t>(std::floor(hyper.validation_fraction * static_cast<double>(images.size())));
  if (n_val == 0 || n_val >= images.size()) return cnn_train(images, labels, {}, {}, classes, hyper);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(hyper.seed, "validation");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<TraceImage> ti, vi;
  std::vector<int> tl, vl;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const bool val = k >= order.size() - n_val;
    (val ? vi : ti).push_back(images[order[k]]);
    (val ? vl : tl).push_back(labels[order[k]]);
  }
  return cnn_train(ti, tl, vi, vl, classes, hyper);
}

FoldSplit kfold_split(std::span<const int> strata, int k, std::uint64_t seed) {
  if (k < 2 || strata.size() < static_cast<std::size_t>(k)) fail(Errc::insufficient_data, "need at least k samples");
  FoldSplit split;
  split.fold.assign(strata.size(), 0);
  std::vector<std::size_t> order(strata.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, "kfold");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> counts;
  for (int s : strata) {
    if (s < 0) fail(Errc::invalid_argument, "negative stratum");
    if (static_cast<std::size_t>(s) >= counts.size()) counts.resize(static_cast<std::size_t>(s) + 1, 0);
    ++counts[static_cast<std::size_t>(s)];
  }
  for (auto c : counts) {
    if (c > 0 && c < static_cast<std::size_t>(k)) split.stratified = false;
  }
  if (split.stratified) {
    // Group by stratum (stable in shuffled order), then deal round-robin.
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return strata[a] < strata[b]; });
  }
  for (std::size_t i = 0; i < order.size(); ++i) split.fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return split;
}

FoldReport kfold_evaluate(std::span<const TraceImage> images, std::span<const int> labels, int classes,
                          const Hyper& hyper, int k, std::span<const int> strata) {
  if (images.size() != labels.size()) fail(Errc::invalid_argument, "images and labels differ in count");
  const auto split = kfold_split(strata.empty() ? labels : strata, k, hyper.seed);
  FoldReport rep;
  rep.stratified = split.stratified;
  for (int f = 0; f < k; ++f) {
    std::vector<TraceImage> tr, te;
    std::vector<int> trl, tel;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const bool test = split.fold[i] == f;
      (test ? te : tr).push_back(images[i]);
      (test ? tel : trl).push_back(labels[i]);
    }
    Hyper h = hyper;
    h.seed = hyper.seed + static_cast<std::uint64_t>(f);
    auto res = cnn_train(tr, trl, classes, h);
    rep.accuracy.push_back(accuracy(res.model, te, tel));
    rep.test_size.push_back(te.size());
    rep.models.push_back(std::move(res.model));
  }
  rep.mean_accuracy = std::accumulate(rep.accuracy.begin(), rep.accuracy.end(), 0.0) / k;
  return rep;
}

Checkpoint model_to_checkpoint(const CnnModel& model) {
  Checkpoint ckpt;
  ckpt.set_meta("arch", "cnn7");
  ckpt.set_meta("task", model.task);
  ckpt.set_meta("classes", std::to_string(model.classes()));
  std::string labels;
  for (std::size_t i = 0; i < model.labels.size(); ++i) labels += (i ? "," : "") + model.labels[i];
  ckpt.set_meta("labels", labels);
  for (const auto& s : model.layout()) {
    WeightTensor t;
    t.name = s.name;
    t.dims = s.dims;
    t.data.resize(s.size);
    for (std::size_t i = 0; i < s.size; ++i) t.data[i] = static_cast<float>(model.params()[s.offset + i]);
    ckpt.add(std::move(t));
  }
  return ckpt;
}

CnnModel model_from_checkpoint(const Checkpoint& ckpt) {
  const auto classes = ckpt.meta("classes");
  if (!classes) fail(Errc::missing_metadata, "model file lacks 'classes'");
  CnnModel m(std::stoi(*classes));
  m.task = ckpt.meta_or("task", "");
  const std::string labels = ckpt.meta_or("labels", "");
  std::size_t pos = 0;
  while (!labels.empty() && pos <= labels.size()) {
    const auto comma = labels.find(',', pos);
    m.labels.push_back(labels.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  for (const auto& s : m.layout()) {
    const auto& t = ckpt.at(s.name);
    if (t.dims != s.dims) fail(Errc::shape_mismatch, "model tensor '" + s.name + "' has the wrong shape");
    for (std::size_t i = 0; i < s.size; ++i) m.params()[s.offset + i] = t.data[i];
  }
  return m;
}

void save_model(const CnnModel& model, const std::filesystem::path& path) {
  write_wbin(model_to_checkpoint(model), path);
}

CnnModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_wbin(path)); }

int corpus_hidden(int encoders) { return encoders <= 12 ? 768 : 1024; }

std::vector<CorpusItem> corpus_items(const CorpusSpec& spec) {
  if (spec.encoder_counts.empty() || spec.vendors.empty()) fail(Errc::invalid_argument, "empty corpus label sets");
  const std::size_t nc = spec.encoder_counts.size(), nv = spec.vendors.size(), nf = std::size(kFrameworks);
  std::vector<CorpusItem> items;
  for (std::size_t i = 0; i < spec.size; ++i) {
    CorpusItem it;
    const std::size_t c = i % nc, v = (i / nc) % nv, f = (i / (nc * nv)) % nf;
    it.vendor = spec.vendors[v];
    it.framework = kFrameworks[f];
    it.encoders = spec.encoder_counts[c];
    it.hidden = corpus_hidden(it.encoders);
    it.seed = SplitMix64(spec.seed ^ (0xA0761D6478BD642Full * (i + 1))).next();
    it.label_encoders = static_cast<int>(c);
    it.label_vendor = static_cast<int>(v);
    it.label_framework = static_cast<int>(f);
    items.push_back(std::move(it));
  }
  return items;
}

KernelTrace corpus_trace(const CorpusItem& item, const CorpusSpec& spec) {
  ArchSpec a;
  a.encoder_count = item.encoders;
  a.hidden = item.hidden;
  a.heads = item.hidden / 64;
  const auto profile = build_profile(item.vendor, item.framework, a, spec.profile_seed, {}, spec.vendors);
  return gen_trace(profile, item.seed);
}

int item_label(const CorpusItem& item, Task task) {
  switch (task) {
    case Task::encoder_count: return item.label_encoders;
    case Task::vendor: return item.label_vendor;
    case Task::framework: return item.label_framework;
  }
  return -1;
}

std::vector<std::string> task_labels(Task task, const CorpusSpec& spec) {
  std::vector<std::string> out;
  switch (task) {
    case Task::encoder_count:
      for (int c : spec.encoder_counts) out.push_back(std::to_string(c));
      break;
    case Task::vendor:
      out = spec.vendors;
      break;
    case Task::framework:
      for (auto f : kFrameworks) out.emplace_back(framework_name(f));
      break;
  }
  return out;
}

}  // namespace finetap
