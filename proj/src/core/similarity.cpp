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

#include "similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "error.hpp"
#include "finetune_sim.hpp"
#include "rng.hpp"

namespace finetap {

std::string_view metric_name(DiffMetric m) {
  return m == DiffMetric::abs_diff ? "abs_diff" : "abs_of_abs_diff";
}

std::optional<DiffMetric> parse_metric(std::string_view name) {
  if (name == "abs_diff") return DiffMetric::abs_diff;
  if (name == "abs_of_abs_diff") return DiffMetric::abs_of_abs_diff;
  return std::nullopt;
}

DiffMap weight_diff_map(const WeightTensor& a, const WeightTensor& b, DiffMetric metric) {
  if (a.dims != b.dims || a.dtype != b.dtype) {
    fail(Errc::shape_mismatch, "cannot compare '" + a.name + "' with '" + b.name + "': shape or format differs");
  }
  DiffMap m;
  m.dims = a.dims;
  m.metric = metric;
  m.values.resize(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = a.data[i];
    const double y = b.data[i];
    m.values[i] = metric == DiffMetric::abs_diff ? std::abs(x - y) : std::abs(std::abs(x) - std::abs(y));
  }
  return m;
}

double fraction_below(const DiffMap& map, double tau) {
  if (map.values.empty()) fail(Errc::insufficient_data, "empty diff map");
  std::size_t n = 0;
  for (double v : map.values) n += v < tau;
  return static_cast<double>(n) / static_cast<double>(map.values.size());
}

DiffStats diff_stats(const DiffMap& map) {
  if (map.values.empty()) fail(Errc::insufficient_data, "empty diff map");
  DiffStats s;
  double sum = 0.0;
  std::size_t b1 = 0, b2 = 0;
  for (double v : map.values) {
    sum += v;
    s.max = std::max(s.max, v);
    b1 += v < 0.001;
    b2 += v < 0.002;
  }
  const double n = static_cast<double>(map.values.size());
  s.mean = sum / n;
  s.frac_below_0001 = static_cast<double>(b1) / n;
  s.frac_below_0002 = static_cast<double>(b2) / n;
  return s;
}

std::string stats_csv_header() { return "tensor,metric,mean,max,frac_below_0.001,frac_below_0.002"; }

std::string stats_csv_row(std::string_view tensor, DiffMetric metric, const DiffStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g", s.mean, s.max, s.frac_below_0001, s.frac_below_0002);
  return std::string(tensor) + "," + std::string(metric_name(metric)) + buf;
}

double sign_agreement(const WeightTensor& a, const WeightTensor& b, double min_abs_a) {
  if (a.dims != b.dims) fail(Errc::shape_mismatch, "sign_agreement on tensors of different shape");
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::abs(static_cast<double>(a.data[i])) < min_abs_a) continue;
    ++total;
    agree += (a.data[i] < 0.0f) == (b.data[i] < 0.0f);
  }
  if (total == 0) fail(Errc::insufficient_data, "no weights pass the magnitude filter");
  return static_cast<double>(agree) / static_cast<double>(total);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(Errc::invalid_argument, "pearson inputs differ in length");
  if (x.size() < 2) fail(Errc::invalid_argument, "pearson needs at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(Errc::zero_variance, "correlation undefined for a constant sample");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) fail(Errc::shape_mismatch, "matmul dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.v[k * b.cols];
      double* crow = &c.v[i * c.cols];
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

AttentionOutput attention_forward(const AttentionHead& head, const Matrix& x) {
  if (x.cols != head.wq.rows || head.wq.rows != head.wk.rows || head.wq.rows != head.wv.rows ||
      head.wq.cols != head.wk.cols) {
    fail(Errc::shape_mismatch, "attention input does not match head dimensions");
  }
  if (!(head.alpha > 0.0)) fail(Errc::invalid_argument, "alpha must be positive");
  const Matrix q = matmul(x, head.wq);
  const Matrix k = matmul(x, head.wk);
  const Matrix v = matmul(x, head.wv);
  const std::size_t t = x.rows;
  AttentionOutput out;
  out.p = Matrix(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols; ++c) s += q(i, c) * k(j, c);
      out.p(i, j) = s / head.alpha;
      mx = std::max(mx, out.p(i, j));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      out.p(i, j) = std::exp(out.p(i, j) - mx);
      sum += out.p(i, j);
    }
    for (std::size_t j = 0; j < t; ++j) out.p(i, j) /= sum;
  }
  out.z = matmul(out.p, v);
  return out;
}

AttentionHead head_from_checkpoint(const Checkpoint& ckpt, int layer, int head, int heads) {
  AttentionHead h;
  const auto& q = ckpt.at(encoder_tensor_name(layer, 'q'));
  const std::size_t hidden = q.cols();
  if (heads <= 0 || hidden % static_cast<std::size_t>(heads) != 0 || head < 0 || head >= heads) {
    fail(Errc::invalid_argument, "bad head index for this layer");
  }
  const std::size_t d = hidden / static_cast<std::size_t>(heads);
  auto slice = [&](const WeightTensor& w) {
    if (w.rows() != hidden || w.cols() != hidden) fail(Errc::shape_mismatch, "attention weight not square");
    Matrix m(hidden, d);
    for (std::size_t r = 0; r < hidden; ++r) {
      for (std::size_t c = 0; c < d; ++c) m(r, c) = w.data[r * hidden + static_cast<std::size_t>(head) * d + c];
    }
    return m;
  };
  h.wq = slice(q);
  h.wk = slice(ckpt.at(encoder_tensor_name(layer, 'k')));
  h.wv = slice(ckpt.at(encoder_tensor_name(layer, 'v')));
  h.alpha = std::sqrt(static_cast<double>(d));
  return h;
}

namespace {

std::vector<double> row_maxima(const Matrix& p) {
  std::vector<double> out(p.rows, 0.0);
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t j = 0; j < p.cols; ++j) out[i] = std::max(out[i], p(i, j));
  }
  return out;
}

}  // namespace

double head_confidence(const Matrix& p) {
  if (p.rows == 0) fail(Errc::insufficient_data, "empty attention matrix");
  double s = 0.0;
  for (double m : row_maxima(p)) s += m;
  return s / static_cast<double>(p.rows);
}

double head_confidence(std::span<const Matrix> ps) {
  if (ps.empty()) fail(Errc::insufficient_data, "empty batch");
  double s = 0.0;
  for (const auto& p : ps) s += head_confidence(p);
  return s / static_cast<double>(ps.size());
}

std::vector<Matrix> make_token_inputs(int hidden, const ConfidenceOptions& opts) {
  if (opts.inputs < 2) fail(Errc::insufficient_data, "confidence correlation needs at least two inputs");
  if (opts.tokens < 1 || hidden < 1) fail(Errc::invalid_argument, "token count and hidden size must be positive");
  Rng rng = Rng::stream(opts.seed, "confidence/inputs");
  std::vector<Matrix> xs;
  for (int i = 0; i < opts.inputs; ++i) {
    Matrix x(static_cast<std::size_t>(opts.tokens), static_cast<std::size_t>(hidden));
    for (double& v : x.v) v = opts.input_scale * rng.normal();
    xs.push_back(std::move(x));
  }
  return xs;
}

Matrix confidence_correlation(const Checkpoint& a, const Checkpoint& b, const ConfidenceOptions& opts) {
  const ArchSpec arch = arch_from_metadata(a);
  const ArchSpec arch_b = arch_from_metadata(b);
  if (arch.encoder_count != arch_b.encoder_count || arch.hidden != arch_b.hidden || arch.heads != arch_b.heads) {
    fail(Errc::shape_mismatch, "confidence correlation needs matching architectures");
  }
  const auto inputs = make_token_inputs(arch.hidden, opts);
  Matrix r(static_cast<std::size_t>(arch.encoder_count), static_cast<std::size_t>(arch.heads));
  for (int layer = 0; layer < arch.encoder_count; ++layer) {
    for (int h = 0; h < arch.heads; ++h) {
      const auto ha = head_from_checkpoint(a, layer, h, arch.heads);
      const auto hb = head_from_checkpoint(b, layer, h, arch.heads);
      std::vector<double> sa, sb;
      for (const auto& x : inputs) {
        const auto pa = attention_forward(ha, x).p;
        const auto pb = attention_forward(hb, x).p;
        if (opts.axis == ConfidenceAxis::per_input) {
          sa.push_back(head_confidence(pa));
          sb.push_back(head_confidence(pb));
        } else {
          for (double m : row_maxima(pa)) sa.push_back(m);
          for (double m : row_maxima(pb)) sb.push_back(m);
        }
      }
      r(static_cast<std::size_t>(layer), static_cast<std::size_t>(h)) = pearson(sa, sb);
    }
  }
  return r;
}

double matrix_mean(const Matrix& m) {
  if (m.v.empty()) fail(Errc::insufficient_data, "empty matrix");
  double s = 0.0;
  for (double x : m.v) s += x;
  return s / static_cast<double>(m.v.size());
}

std::vector<std::uint8_t> render_heatmap(const DiffMap& map, int downsample) {
  if (map.values.empty()) fail(Errc::insufficient_data, "empty diff map");
  if (downsample < 1) fail(Errc::invalid_argument, "downsample must be >= 1");
  std::size_t rows = 1, cols = map.values.size();
  if (map.dims.size() >= 2) {
    rows = map.dims.front();
    cols = map.values.size() / rows;
  }
  const auto ds = static_cast<std::size_t>(downsample);
  const std::size_t out_r = (rows + ds - 1) / ds;
  const std::size_t out_c = (cols + ds - 1) / ds;
  const std::string header = "P5\n" + std::to_string(out_c) + " " + std::to_string(out_r) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + out_r * out_c);
  for (std::size_t br = 0; br < out_r; ++br) {
    for (std::size_t bc = 0; bc < out_c; ++bc) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t r = br * ds; r < std::min(rows, br * ds + ds); ++r) {
        for (std::size_t c = bc * ds; c < std::min(cols, bc * ds + ds); ++c) {
          sum += map.values[r * cols + c];
          ++n;
        }
      }
      const double v = sum / static_cast<double>(n);
      const long px = std::lround(255.0 * v / kHeatmapCeiling);
      out.push_back(static_cast<std::uint8_t>(std::clamp(px, 0L, 255L)));
    }
  }
  return out;
}

void write_heatmap(const DiffMap& map, const std::filesystem::path& path, int downsample) {
  const auto bytes = render_heatmap(map, downsample);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace finetap
