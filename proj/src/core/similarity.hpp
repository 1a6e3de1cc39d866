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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"

namespace finetap {

enum class DiffMetric { abs_diff, abs_of_abs_diff };

std::string_view metric_name(DiffMetric m);
std::optional<DiffMetric> parse_metric(std::string_view name);

struct DiffMap {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  DiffMetric metric = DiffMetric::abs_diff;
};

// Throws shape_mismatch when dims or dtypes differ.
DiffMap weight_diff_map(const WeightTensor& a, const WeightTensor& b, DiffMetric metric = DiffMetric::abs_diff);

struct DiffStats {
  double mean = 0.0;
  double max = 0.0;
  double frac_below_0001 = 0.0;  // strict: value < 0.001
  double frac_below_0002 = 0.0;
};

DiffStats diff_stats(const DiffMap& map);
double fraction_below(const DiffMap& map, double tau);

// "tensor,metric,mean,max,frac_below_0.001,frac_below_0.002"
std::string stats_csv_header();
std::string stats_csv_row(std::string_view tensor, DiffMetric metric, const DiffStats& s);

// Fraction of positions with equal sign bit, zero counted as positive.
// Only positions with |a| >= min_abs_a take part.
double sign_agreement(const WeightTensor& a, const WeightTensor& b, double min_abs_a = 0.0);

// Throws invalid_argument on length < 2 or mismatch, zero_variance when
// either side is constant.
double pearson(std::span<const double> x, std::span<const double> y);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Matrix matmul(const Matrix& a, const Matrix& b);

struct AttentionHead {
  Matrix wq, wk, wv;  // hidden x d_head
  double alpha = 1.0;
};

struct AttentionOutput {
  Matrix z;  // tokens x d_head
  Matrix p;  // tokens x tokens
};

AttentionOutput attention_forward(const AttentionHead& head, const Matrix& x);

// Column slice [h * d, (h + 1) * d) of the layer's query/key/value weights,
// alpha = sqrt(d).
AttentionHead head_from_checkpoint(const Checkpoint& ckpt, int layer, int head, int heads);

double head_confidence(const Matrix& p);
double head_confidence(std::span<const Matrix> ps);

enum class ConfidenceAxis { per_input, per_query };

struct ConfidenceOptions {
  int inputs = 16;
  int tokens = 8;
  // Token embeddings are N(0, input_scale^2).
  double input_scale = 0.1;
  ConfidenceAxis axis = ConfidenceAxis::per_input;
  std::uint64_t seed = 1;
};

std::vector<Matrix> make_token_inputs(int hidden, const ConfidenceOptions& opts);

// layers x heads matrix of Pearson r between matching heads.
Matrix confidence_correlation(const Checkpoint& a, const Checkpoint& b, const ConfidenceOptions& opts);
double matrix_mean(const Matrix& m);

// Binary PGM (P5): block-mean downsample, 0 -> black, >= 0.2 -> white.
std::vector<std::uint8_t> render_heatmap(const DiffMap& map, int downsample = 1);
void write_heatmap(const DiffMap& map, const std::filesystem::path& path, int downsample = 1);

inline constexpr double kHeatmapCeiling = 0.2;

}  // namespace finetap
