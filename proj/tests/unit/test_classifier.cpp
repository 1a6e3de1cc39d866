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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "classifier.hpp"
#include "error.hpp"
#include "rng.hpp"

using namespace finetap;

namespace {

KernelTrace simple_trace(std::vector<std::pair<std::int64_t, std::int64_t>> start_dur) {
  KernelTrace t;
  for (std::size_t i = 0; i < start_dur.size(); ++i) {
    t.events.push_back({i, start_dur[i].first, start_dur[i].second, static_cast<std::uint32_t>(i), "k"});
  }
  return t;
}

TraceImage blob(Rng& rng, int cx, int cy, int count) {
  TraceImage img;
  for (int i = 0; i < count; ++i) {
    const int x = std::clamp(cx + static_cast<int>(rng.below(120)) - 60, 0, kImageSize - 1);
    const int y = std::clamp(cy + static_cast<int>(rng.below(120)) - 60, 0, kImageSize - 1);
    img.black.push_back(static_cast<std::uint32_t>(y * kImageSize + x));
  }
  std::sort(img.black.begin(), img.black.end());
  img.black.erase(std::unique(img.black.begin(), img.black.end()), img.black.end());
  return img;
}

// Two visually separable classes.
void toy_dataset(std::size_t n, std::uint64_t seed, std::vector<TraceImage>& images, std::vector<int>& labels) {
  Rng rng = Rng::stream(seed, "unit/toy");
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    images.push_back(c == 0 ? blob(rng, 200, 200, 400) : blob(rng, 800, 700, 400));
    labels.push_back(c);
  }
}

TraceImage corpus_image(std::size_t index) {
  CorpusSpec spec;
  const auto items = corpus_items(spec);
  return rasterize(corpus_trace(items.at(index), spec));
}

}  // namespace

TEST_CASE("rasterize places events by start and duration") {
  const auto img = rasterize(simple_trace({{0, 10}, {1000, 20}, {2000, 5}}));
  // x = floor(1023 * start / 2000), y = 1023 - floor(1023 * dur / 20)
  CHECK(is_black(img, 0, 512));
  CHECK(is_black(img, 511, 0));
  CHECK(is_black(img, 1023, 768));
  CHECK(img.black.size() == 3);
  CHECK(std::is_sorted(img.black.begin(), img.black.end()));
  CHECK_FALSE(is_black(img, 1, 1));

  // Collisions collapse to one pixel.
  const auto dup = rasterize(simple_trace({{0, 7}, {0, 7}, {10, 7}}));
  CHECK(dup.black.size() == 2);

  const auto pgm = image_pgm(img);
  const std::string header = "P5\n1024 1024\n255\n";
  REQUIRE(pgm.size() == header.size() + 1024u * 1024u);
  CHECK(pgm[header.size() + 512u * 1024u] == 0);
  CHECK(pgm[header.size() + 1] == 255);
}

TEST_CASE("task names") {
  CHECK(task_name(Task::encoder_count) == "encoder_count");
  CHECK(parse_task("framework") == Task::framework);
  CHECK_FALSE(parse_task("size").has_value());
}

TEST_CASE("model layout") {
  const CnnModel m(4);
  CHECK(kFeatures == 3600);
  CHECK(m.slice("fc1.w").dims == std::vector<std::uint32_t>{120, 3600});
  CHECK(m.slice("fc3.w").dims == std::vector<std::uint32_t>{4, 84});
  std::size_t total = 0;
  for (const auto& s : m.layout()) {
    CHECK(s.offset == total);
    total += s.size;
  }
  CHECK(total == m.params().size());
  CHECK_THROWS_AS(m.slice("fc9.w"), Error);
}

TEST_CASE("zero parameters give zero logits") {
  const CnnModel m(3);
  const auto img = corpus_image(0);
  for (double z : cnn_forward(m, img)) CHECK(z == 0.0);
}

TEST_CASE("sparse forward matches the dense reference") {
  const auto m = init_model(4, 3);
  for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{13}}) {
    const auto img = corpus_image(i);
    const auto a = cnn_forward(m, img);
    const auto b = cnn_forward_dense(m, img);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
  }
  const TraceImage white;
  const auto a = cnn_forward(m, white);
  const auto b = cnn_forward_dense(m, white);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
}

TEST_CASE("analytic gradient agrees with central differences") {
  const auto m = init_model(4, 7);
  const auto img = corpus_image(2);
  const auto r = gradient_check(m, img, 1, 1e-6, 40);
  CHECK(r.parameters_checked >= 200);
  CHECK(r.layers_covered.size() == m.layout().size());
  CHECK(r.max_relative_error <= 1e-5);

  // A corrupted conv gradient must be caught.
  const auto bad = gradient_check(m, img, 1, 1e-6, 40, 1, [](const CnnModel& model, std::vector<double>& g) {
    const auto& s = model.slice("conv1.w");
    for (std::size_t i = 0; i < s.size; ++i) g[s.offset + i] *= 1.5;
  });
  CHECK(bad.max_relative_error > 1e-2);
}

TEST_CASE("training separates a trivial dataset") {
  std::vector<TraceImage> train, val;
  std::vector<int> ytrain, yval;
  toy_dataset(32, 1, train, ytrain);
  toy_dataset(16, 2, val, yval);
  Hyper h;
  h.epochs = 5;
  h.batch_size = 8;
  const auto r = cnn_train(train, ytrain, val, yval, 2, h);
  CHECK(r.train_loss.size() == 5);
  CHECK(accuracy(r.model, val, yval) == 1.0);
  CHECK(r.train_loss.back() < r.train_loss.front());

  // Determinism.
  const auto again = cnn_train(train, ytrain, val, yval, 2, h);
  CHECK(again.model.params() == r.model.params());

  // Zero epochs keep the initial parameters.
  h.epochs = 0;
  const auto none = cnn_train(train, ytrain, val, yval, 2, h);
  CHECK(none.model.params() == init_model(2, h.seed).params());
  CHECK(none.best_epoch == 0);

  std::vector<int> one_class(ytrain.size(), 0);
  CHECK_THROWS_AS(cnn_train(train, one_class, 2, h), Error);
}

TEST_CASE("k-fold split") {
  std::vector<int> strata;
  for (int i = 0; i < 680; ++i) strata.push_back(i % 4);
  const auto s = kfold_split(strata, 5, 1);
  CHECK(s.stratified);
  std::map<int, int> per_fold;
  std::map<std::pair<int, int>, int> per_cell;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    ++per_fold[s.fold[i]];
    ++per_cell[{s.fold[i], strata[i]}];
  }
  REQUIRE(per_fold.size() == 5);
  for (const auto& [f, n] : per_fold) CHECK(n == 136);
  for (const auto& [cell, n] : per_cell) CHECK(n == 34);
  CHECK(kfold_split(strata, 5, 1).fold == s.fold);
  CHECK(kfold_split(strata, 5, 2).fold != s.fold);

  // A stratum smaller than k falls back to an unstratified split.
  std::vector<int> thin(strata);
  thin[0] = 9;
  const auto u = kfold_split(thin, 5, 1);
  CHECK_FALSE(u.stratified);
  std::map<int, int> sizes;
  for (int f : u.fold) ++sizes[f];
  for (const auto& [f, n] : sizes) CHECK(n == 136);
  CHECK_THROWS_AS(kfold_split(strata, 1, 1), Error);
}

TEST_CASE("model save and load") {
  auto m = init_model(3, 5);
  m.task = "vendor";
  m.labels = {"alpha", "beta", "gamma"};
  const auto path = std::filesystem::temp_directory_path() / "finetap_unit_model.wbin";
  save_model(m, path);
  const auto back = load_model(path);
  std::filesystem::remove(path);
  CHECK(back.classes() == 3);
  CHECK(back.task == "vendor");
  CHECK(back.labels == m.labels);
  REQUIRE(back.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(back.params()[i] == static_cast<double>(static_cast<float>(m.params()[i])));
  }
  Checkpoint wrong;
  wrong.add({"x", Dtype::f32, {1}, {1.0f}});
  CHECK_THROWS_AS(model_from_checkpoint(wrong), Error);
}

TEST_CASE("corpus assignment") {
  CorpusSpec spec;
  const auto items = corpus_items(spec);
  REQUIRE(items.size() == 680);
  std::map<int, int> enc;
  for (const auto& it : items) {
    ++enc[it.encoders];
    CHECK(it.hidden == corpus_hidden(it.encoders));
    CHECK(item_label(it, Task::vendor) == it.label_vendor);
  }
  CHECK(enc.size() == 4);
  for (const auto& [e, n] : enc) CHECK(n == 170);
  CHECK(corpus_hidden(12) == 768);
  CHECK(corpus_hidden(18) == 1024);
  CHECK(task_labels(Task::encoder_count, spec) == std::vector<std::string>{"6", "12", "18", "24"});
  CHECK(task_labels(Task::framework, spec).size() == 3);
  const auto t = corpus_trace(items[7], spec);
  CHECK(t.prov("vendor") == items[7].vendor);
  CHECK(encode_trace_jsonl(t) == encode_trace_jsonl(corpus_trace(items[7], spec)));
}
