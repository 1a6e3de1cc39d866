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

// Trace rasterization and the small CNN that reads the images.
//
// Images are 1024x1024 and almost entirely white, so the first two layers
// work from the list of black pixels: conv1 scatters each pixel into a
// persistent accumulator and conv2 scatters only the pool1 cells that
// differ from the per-channel background. A dense reference forward pass
// exists for testing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "checkpoint.hpp"
#include "trace_sim.hpp"

namespace finetap {

inline constexpr int kImageSize = 1024;

struct TraceImage {
  // Sorted, unique y * 1024 + x of black pixels. Channels are implicit
  // copies of this single plane.
  std::vector<std::uint32_t> black;
};

// x = floor(1023 * start / max_start), y = 1023 - floor(1023 * dur / max_dur).
TraceImage rasterize(const KernelTrace& trace);
bool is_black(const TraceImage& img, int x, int y);
// P5, black = 0, white = 255.
std::vector<std::uint8_t> image_pgm(const TraceImage& img);

enum class Task { encoder_count, vendor, framework };
std::string_view task_name(Task t);
std::optional<Task> parse_task(std::string_view name);

// Layer geometry. 1024 -conv5-> 1020 -pool8-> 127 -conv5-> 123 -pool8-> 15.
inline constexpr int kConv1Out = 1020;
inline constexpr int kPool1 = 127;
inline constexpr int kConv2Out = 123;
inline constexpr int kPool2 = 15;
inline constexpr int kFeatures = 16 * kPool2 * kPool2;

struct LayerSlice {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::size_t offset;
  std::size_t size;
};

class CnnModel {
 public:
  explicit CnnModel(int classes = 2);

  int classes() const { return classes_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<LayerSlice>& layout() const { return layout_; }
  const LayerSlice& slice(std::string_view name) const;
  double* data(std::string_view name) { return params_.data() + slice(name).offset; }
  const double* data(std::string_view name) const { return params_.data() + slice(name).offset; }

  // Optional human-readable class names and the task they belong to.
  std::vector<std::string> labels;
  std::string task;

 private:
  int classes_;
  std::vector<double> params_;
  std::vector<LayerSlice> layout_;
};

// He-normal weights, PyTorch-style uniform(+-1/sqrt(fan_in)) biases.
CnnModel init_model(int classes, std::uint64_t seed);

std::vector<double> cnn_forward(const CnnModel& model, const TraceImage& img);
std::vector<double> cnn_forward_dense(const CnnModel& model, const TraceImage& img);
int predict(const CnnModel& model, const TraceImage& img);

// Softmax cross-entropy; accumulates d loss / d params into `grad` when
// given (sized like model.params()).
double loss_and_gradient(const CnnModel& model, const TraceImage& img, int label, std::vector<double>* grad);

// Mutation hook for the gradient checker: may corrupt the analytic gradient.
using GradientFault = std::function<void(const CnnModel&, std::vector<double>&)>;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  std::vector<std::string> layers_covered;
};

// Relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradientCheckFloor = 1e-4;

GradientCheckResult gradient_check(const CnnModel& model, const TraceImage& img, int label, double epsilon,
                                   std::size_t per_layer = 20, std::uint64_t seed = 1,
                                   const GradientFault& fault = nullptr);

struct Hyper {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  // Tail of the shuffled training portion held out for model selection.
  double validation_fraction = 0.1;
};

struct TrainResult {
  CnnModel model;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> validation_accuracy;
  int best_epoch = 0;  // 0 = initial model
};

// Throws insufficient_data when fewer than two classes are present.
TrainResult cnn_train(std::span<const TraceImage> images, std::span<const int> labels, int classes,
                      const Hyper& hyper);
TrainResult cnn_train(std::span<const TraceImage> train_images, std::span<const int> train_labels,
                      std::span<const TraceImage> val_images, std::span<const int> val_labels, int classes,
                      const Hyper& hyper);

double accuracy(const CnnModel& model, std::span<const TraceImage> images, std::span<const int> labels);

struct FoldSplit {
  std::vector<int> fold;  // per sample, in [0, k)
  bool stratified = true;
};

// Stratified by `strata` when every stratum has at least k members.
FoldSplit kfold_split(std::span<const int> strata, int k, std::uint64_t seed);

struct FoldReport {
  std::vector<double> accuracy;
  std::vector<std::size_t> test_size;
  double mean_accuracy = 0.0;
  bool stratified = true;
  std::vector<CnnModel> models;
};

FoldReport kfold_evaluate(std::span<const TraceImage> images, std::span<const int> labels, int classes,
                          const Hyper& hyper, int k = 5, std::span<const int> strata = {});

// Tensors conv1.w, conv1.b, ..., fc3.b; metadata carries task and labels.
Checkpoint model_to_checkpoint(const CnnModel& model);
CnnModel model_from_checkpoint(const Checkpoint& ckpt);
void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

// Synthetic training corpus: encoder counts x vendors x frameworks,
// assigned round-robin.
struct CorpusItem {
  std::string vendor;
  Framework framework;
  int encoders;
  int hidden;
  std::uint64_t seed;
  int label_encoders;
  int label_vendor;
  int label_framework;
};

struct CorpusSpec {
  std::size_t size = 680;
  std::vector<int> encoder_counts{6, 12, 18, 24};
  std::vector<std::string> vendors = default_vendors();
  std::uint64_t profile_seed = 2024;
  std::uint64_t seed = 1;
};

// Hidden width used for a corpus encoder count (768 up to 12, else 1024).
int corpus_hidden(int encoders);
std::vector<CorpusItem> corpus_items(const CorpusSpec& spec);
KernelTrace corpus_trace(const CorpusItem& item, const CorpusSpec& spec);
int item_label(const CorpusItem& item, Task task);
std::vector<std::string> task_labels(Task task, const CorpusSpec& spec);

}  // namespace finetap
