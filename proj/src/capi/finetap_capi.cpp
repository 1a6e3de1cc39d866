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

#include "finetap/finetap.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <json.hpp>
#include <string>

#include "arch_extract.hpp"
#include "checkpoint.hpp"
#include "classifier.hpp"
#include "error.hpp"
#include "finetune_sim.hpp"
#include "pipeline.hpp"
#include "similarity.hpp"
#include "trace_sim.hpp"
#include "weight_extract.hpp"

struct finetap_checkpoint {
  finetap::Checkpoint c;
};
struct finetap_trace {
  finetap::KernelTrace t;
};
struct finetap_dataset {
  finetap::CorpusSpec spec;
  std::vector<finetap::TraceImage> images;
  std::vector<finetap::CorpusItem> items;
  std::vector<finetap::KernelTrace> traces;  // kept only for dataset_write
};
struct finetap_model {
  finetap::CnnModel m;
};
struct finetap_pool {
  finetap::ModelPool p;
};

namespace {

using namespace finetap;
using json = nlohmann::ordered_json;

thread_local std::string g_last_error;

template <class F>
finetap_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return FINETAP_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<finetap_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FINETAP_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) fail(Errc::invalid_argument, std::string(what) + " must not be null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

FloatFormat format_arg(const char* name) {
  need(name, "format");
  const auto d = parse_dtype(name);
  if (!d) fail(Errc::unsupported_format, std::string("unknown float format '") + name + "'");
  return format_of(*d);
}

ArchSpec arch_arg(const char* label) {
  need(label, "arch");
  const auto a = parse_arch_label(label);
  if (!a) fail(Errc::invalid_argument, std::string("unknown arch label '") + label + "'");
  return *a;
}

Framework framework_arg(const char* name) {
  need(name, "framework");
  const auto f = parse_framework(name);
  if (!f) fail(Errc::unknown_label, std::string("unknown framework '") + name + "'");
  return *f;
}

PlanPolicy policy_arg(const char* name) {
  if (!name) return PlanPolicy::worked_example;
  const auto p = parse_policy(name);
  if (!p) fail(Errc::invalid_argument, std::string("unknown policy '") + name + "'");
  return *p;
}

DiffMetric metric_arg(const char* name) {
  if (!name) return DiffMetric::abs_diff;
  const auto m = parse_metric(name);
  if (!m) fail(Errc::invalid_argument, std::string("unknown metric '") + name + "'");
  return *m;
}

Task task_arg(const char* name) {
  need(name, "task");
  const auto t = parse_task(name);
  if (!t) fail(Errc::invalid_argument, std::string("unknown task '") + name + "'");
  return *t;
}

Hyper hyper_arg(const finetap_hyper* h) {
  Hyper out;
  if (!h) return out;
  out.learning_rate = h->learning_rate;
  out.momentum = h->momentum;
  out.epochs = h->epochs;
  out.batch_size = h->batch_size;
  out.seed = h->seed;
  out.validation_fraction = h->validation_fraction;
  return out;
}

std::vector<int> dataset_labels(const finetap_dataset& ds, Task task) {
  std::vector<int> out;
  for (const auto& it : ds.items) out.push_back(item_label(it, task));
  return out;
}

std::string report_json_text(const ExtractionReport& r) { return finetap::report_json(r); }

int index_of(const std::vector<std::string>& xs, const std::string& v) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] == v) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

extern "C" {

const char* finetap_version(void) { return "0.1.0"; }
const char* finetap_last_error(void) { return g_last_error.c_str(); }

const char* finetap_status_name(finetap_status status) {
  if (status == FINETAP_OK) return "ok";
  if (status == FINETAP_E_INTERNAL) return "internal";
  if (status >= FINETAP_E_INVALID_ARGUMENT && status <= FINETAP_E_PARSE) {
    return errc_name(static_cast<Errc>(static_cast<int>(status)));
  }
  return "unknown";
}

void finetap_string_free(char* s) { std::free(s); }

finetap_status finetap_decompose(float value, const char* format, uint32_t* sign, uint32_t* exponent,
                                 uint32_t* fraction) {
  return guard([&] {
    need(sign, "sign");
    need(exponent, "exponent");
    need(fraction, "fraction");
    const auto f = decompose(value, format_arg(format));
    *sign = f.sign;
    *exponent = f.exponent;
    *fraction = f.fraction;
  });
}

finetap_status finetap_compose(const char* format, uint32_t sign, uint32_t exponent, uint32_t fraction, float* out) {
  return guard([&] {
    need(out, "out");
    *out = compose(FloatFields{sign, exponent, fraction, format_arg(format)});
  });
}

finetap_status finetap_place_value(const char* format, int biased_exponent, int k, double* out) {
  return guard([&] {
    need(out, "out");
    *out = place_value(biased_exponent, k, format_arg(format));
  });
}

finetap_status finetap_checkpoint_read(const char* path, finetap_checkpoint** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new finetap_checkpoint{read_wbin(path)};
  });
}

finetap_status finetap_checkpoint_write(const finetap_checkpoint* ckpt, const char* path) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(path, "path");
    write_wbin(ckpt->c, path);
  });
}

void finetap_checkpoint_free(finetap_checkpoint* ckpt) { delete ckpt; }

finetap_status finetap_checkpoint_gen_base(const char* arch, uint64_t seed, double small_weight_fraction,
                                           finetap_checkpoint** out) {
  return guard([&] {
    need(out, "out");
    MagnitudeModel mm;
    mm.small_weight_fraction = small_weight_fraction;
    *out = new finetap_checkpoint{gen_base(arch_arg(arch), seed, mm)};
  });
}

finetap_status finetap_checkpoint_gen_independent(const char* arch, uint64_t seed, finetap_checkpoint** out) {
  return guard([&] {
    need(out, "out");
    *out = new finetap_checkpoint{gen_independent(arch_arg(arch), seed)};
  });
}

finetap_status finetap_checkpoint_finetune(const finetap_checkpoint* base, double sigma_encoder,
                                           double sigma_last_layer, int epoch, uint64_t seed,
                                           finetap_checkpoint** out) {
  return guard([&] {
    need(base, "base");
    need(out, "out");
    DeltaModel dm;
    dm.sigma_encoder = sigma_encoder;
    dm.sigma_last_layer = sigma_last_layer;
    if (auto f = base->c.meta("small_weight_fraction")) dm.small_weight_fraction = std::stod(*f);
    if (epoch < 0) fail(Errc::invalid_argument, "epoch must be >= 0");
    if (epoch == 0) {
      *out = new finetap_checkpoint{apply_finetune(base->c, dm, seed)};
    } else {
      dm.epochs = default_epoch_schedule();
      *out = new finetap_checkpoint{apply_finetune_epoch(base->c, dm, seed, epoch)};
    }
  });
}

finetap_status finetap_checkpoint_quantize(const finetap_checkpoint* ckpt, const char* format,
                                           finetap_checkpoint** out) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(out, "out");
    *out = new finetap_checkpoint{quantize_checkpoint(ckpt->c, format_arg(format))};
  });
}

finetap_status finetap_checkpoint_truncate(const finetap_checkpoint* ckpt, finetap_checkpoint** out) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(out, "out");
    *out = new finetap_checkpoint{truncate_below(ckpt->c)};
  });
}

finetap_status finetap_checkpoint_meta(const finetap_checkpoint* ckpt, const char* key, char** out) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(key, "key");
    need(out, "out");
    const auto v = ckpt->c.meta(key);
    if (!v) fail(Errc::missing_metadata, std::string("no metadata key '") + key + "'");
    *out = dup(*v);
  });
}

finetap_status finetap_checkpoint_set_meta(finetap_checkpoint* ckpt, const char* key, const char* value) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(key, "key");
    need(value, "value");
    ckpt->c.set_meta(key, value);
  });
}

finetap_status finetap_checkpoint_info_json(const finetap_checkpoint* ckpt, char** out) {
  return guard([&] {
    need(ckpt, "checkpoint");
    need(out, "out");
    json j;
    j["metadata"] = json::object();
    for (const auto& [k, v] : ckpt->c.metadata()) j["metadata"][k] = v;
    j["tensors"] = json::array();
    for (const auto& t : ckpt->c.tensors()) {
      j["tensors"].push_back({{"name", t.name}, {"dtype", format_name(t.dtype)}, {"dims", t.dims}});
    }
    j["weights"] = ckpt->c.weight_count();
    *out = dup(j.dump());
  });
}

finetap_status finetap_drift_curve_json(const finetap_checkpoint* base, uint64_t seed, char** out) {
  return guard([&] {
    need(base, "base");
    need(out, "out");
    DeltaModel dm;
    dm.epochs = default_epoch_schedule();
    json arr = json::array();
    for (const auto& p : drift_curve(base->c, dm, seed)) {
      arr.push_back({{"epoch", p.epoch},
                     {"encoder_mean_abs_delta", p.encoder_mean_abs_delta},
                     {"last_layer_mean_abs_delta", p.last_layer_mean_abs_delta}});
    }
    *out = dup(arr.dump());
  });
}

finetap_status finetap_diff_stats(const finetap_checkpoint* a, const finetap_checkpoint* b, const char* metric,
                                  const char* format, char** out) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    const DiffMetric m = metric_arg(metric);
    const bool csv = format && std::strcmp(format, "csv") == 0;
    if (format && !csv && std::strcmp(format, "json") != 0) fail(Errc::invalid_argument, "format must be json or csv");
    std::string text = csv ? stats_csv_header() + "\n" : "";
    json arr = json::array();
    for (const auto& ta : a->c.tensors()) {
      const auto& tb = b->c.at(ta.name);
      const auto s = diff_stats(weight_diff_map(ta, tb, m));
      if (csv) {
        text += stats_csv_row(ta.name, m, s) + "\n";
      } else {
        arr.push_back({{"tensor", ta.name},
                       {"metric", metric_name(m)},
                       {"mean", s.mean},
                       {"max", s.max},
                       {"frac_below_0.001", s.frac_below_0001},
                       {"frac_below_0.002", s.frac_below_0002}});
      }
    }
    *out = dup(csv ? text : arr.dump());
  });
}

finetap_status finetap_write_heatmap(const finetap_checkpoint* a, const finetap_checkpoint* b, const char* tensor,
                                     const char* metric, int downsample, const char* path) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(tensor, "tensor");
    need(path, "path");
    write_heatmap(weight_diff_map(a->c.at(tensor), b->c.at(tensor), metric_arg(metric)), path, downsample);
  });
}

finetap_status finetap_sign_agreement(const finetap_checkpoint* a, const finetap_checkpoint* b, double min_abs_a,
                                      double* out) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    // Pooled over every tensor present in both.
    double agree = 0.0, total = 0.0;
    for (const auto& ta : a->c.tensors()) {
      const auto* tb = b->c.find(ta.name);
      if (!tb) continue;
      std::size_t n = 0;
      for (float v : ta.data) n += std::abs(static_cast<double>(v)) >= min_abs_a;
      if (n == 0) continue;
      agree += sign_agreement(ta, *tb, min_abs_a) * static_cast<double>(n);
      total += static_cast<double>(n);
    }
    if (total == 0.0) fail(Errc::insufficient_data, "no weights at or above the magnitude floor");
    *out = agree / total;
  });
}

finetap_status finetap_pearson(const double* x, const double* y, size_t n, double* out) {
  return guard([&] {
    need(x, "x");
    need(y, "y");
    need(out, "out");
    *out = pearson({x, n}, {y, n});
  });
}

finetap_status finetap_confidence_correlation(const finetap_checkpoint* a, const finetap_checkpoint* b, int inputs,
                                              uint64_t seed, char** out) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    ConfidenceOptions opts;
    if (inputs > 0) opts.inputs = inputs;
    opts.seed = seed;
    const Matrix r = confidence_correlation(a->c, b->c, opts);
    json rows = json::array();
    for (std::size_t l = 0; l < r.rows; ++l) {
      json row = json::array();
      for (std::size_t h = 0; h < r.cols; ++h) row.push_back(r(l, h));
      rows.push_back(row);
    }
    json j;
    j["mean"] = matrix_mean(r);
    j["per_layer_head"] = rows;
    *out = dup(j.dump());
  });
}

void finetap_trace_options_default(finetap_trace_options* opts) {
  if (!opts) return;
  opts->profile_seed = 2024;
  opts->core_vectors = 3;
  opts->attention_scale = 1.0;
}

finetap_status finetap_trace_gen(const char* vendor, const char* framework, const char* arch, uint64_t seed,
                                 const finetap_trace_options* opts, finetap_trace** out) {
  return guard([&] {
    need(vendor, "vendor");
    need(out, "out");
    finetap_trace_options o;
    finetap_trace_options_default(&o);
    if (opts) o = *opts;
    ProfileOptions po;
    po.core_vectors = o.core_vectors;
    po.attention_scale = o.attention_scale;
    const auto profile = build_profile(vendor, framework_arg(framework), arch_arg(arch), o.profile_seed, po);
    *out = new finetap_trace{gen_trace(profile, seed)};
  });
}

finetap_status finetap_trace_read(const char* path, finetap_trace** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new finetap_trace{read_trace(path)};
  });
}

finetap_status finetap_trace_write(const finetap_trace* trace, const char* path) {
  return guard([&] {
    need(trace, "trace");
    need(path, "path");
    write_trace(trace->t, path);
  });
}

void finetap_trace_free(finetap_trace* trace) { delete trace; }

size_t finetap_trace_size(const finetap_trace* trace) { return trace ? trace->t.events.size() : 0; }

finetap_status finetap_trace_inject_noise(const finetap_trace* trace, size_t n_kernels, double amplitude_us,
                                          uint64_t seed, finetap_trace** out) {
  return guard([&] {
    need(trace, "trace");
    need(out, "out");
    *out = new finetap_trace{inject_noise(trace->t, n_kernels, amplitude_us, seed)};
  });
}

finetap_status finetap_trace_strip(finetap_trace* trace) {
  return guard([&] {
    need(trace, "trace");
    trace->t = strip_provenance(std::move(trace->t));
  });
}

finetap_status finetap_detect_arch(const finetap_trace* trace, int graph_family, double eager_threshold_ns,
                                   double graph_threshold_ns, char** out) {
  return guard([&] {
    need(trace, "trace");
    need(out, "out");
    SizeCalibration cal;
    if (eager_threshold_ns > 0) cal.eager_threshold_ns = eager_threshold_ns;
    if (graph_threshold_ns > 0) cal.graph_threshold_ns = graph_threshold_ns;
    std::optional<bool> family;
    if (graph_family >= 0) family = graph_family != 0;
    *out = dup(hypothesis_json(extract_architecture(trace->t, cal, nullptr, family)));
  });
}

finetap_status finetap_rasterize_pgm(const finetap_trace* trace, const char* path) {
  return guard([&] {
    need(trace, "trace");
    need(path, "path");
    const auto bytes = image_pgm(rasterize(trace->t));
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  });
}

void finetap_hyper_default(finetap_hyper* h) {
  if (!h) return;
  const Hyper d;
  h->learning_rate = d.learning_rate;
  h->momentum = d.momentum;
  h->epochs = d.epochs;
  h->batch_size = d.batch_size;
  h->seed = d.seed;
  h->validation_fraction = d.validation_fraction;
}

finetap_status finetap_dataset_corpus(size_t size, uint64_t seed, uint64_t profile_seed, finetap_dataset** out) {
  return guard([&] {
    need(out, "out");
    auto ds = std::make_unique<finetap_dataset>();
    ds->spec.size = size;
    ds->spec.seed = seed;
    ds->spec.profile_seed = profile_seed;
    ds->items = corpus_items(ds->spec);
    for (const auto& it : ds->items) {
      ds->traces.push_back(corpus_trace(it, ds->spec));
      ds->images.push_back(rasterize(ds->traces.back()));
    }
    *out = ds.release();
  });
}

finetap_status finetap_dataset_from_dir(const char* dir, finetap_dataset** out) {
  return guard([&] {
    need(dir, "dir");
    need(out, "out");
    auto ds = std::make_unique<finetap_dataset>();
    std::vector<std::filesystem::path> files;
    for (const auto& de : std::filesystem::directory_iterator(dir)) {
      if (de.is_regular_file() && de.path().extension() == ".jsonl") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> counts;
    for (int c : ds->spec.encoder_counts) counts.push_back(std::to_string(c));
    std::vector<std::string> fws;
    for (auto f : kFrameworks) fws.emplace_back(framework_name(f));
    for (const auto& f : files) {
      auto t = read_trace(f);
      const auto v = t.prov("vendor"), fw = t.prov("framework"), enc = t.prov("encoders");
      if (!v || !fw || !enc) fail(Errc::missing_metadata, f.filename().string() + " lacks label provenance");
      CorpusItem it{};
      it.vendor = *v;
      it.framework = framework_arg(fw->c_str());
      it.encoders = std::stoi(*enc);
      it.label_vendor = index_of(ds->spec.vendors, *v);
      it.label_framework = index_of(fws, *fw);
      it.label_encoders = index_of(counts, *enc);
      if (it.label_vendor < 0 || it.label_encoders < 0) {
        fail(Errc::unknown_label, f.filename().string() + " has a vendor or encoder count outside the label set");
      }
      ds->images.push_back(rasterize(t));
      ds->traces.push_back(std::move(t));
      ds->items.push_back(std::move(it));
    }
    if (ds->items.empty()) fail(Errc::insufficient_data, std::string("no traces in ") + dir);
    ds->spec.size = ds->items.size();
    *out = ds.release();
  });
}

finetap_status finetap_dataset_write(const finetap_dataset* ds, const char* dir) {
  return guard([&] {
    need(ds, "dataset");
    need(dir, "dir");
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < ds->traces.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "trace_%05zu.jsonl", i);
      write_trace(ds->traces[i], std::filesystem::path(dir) / name);
    }
  });
}

size_t finetap_dataset_size(const finetap_dataset* ds) { return ds ? ds->items.size() : 0; }
void finetap_dataset_free(finetap_dataset* ds) { delete ds; }

finetap_status finetap_model_train(const finetap_dataset* ds, const char* task, const finetap_hyper* h,
                                   finetap_model** out, char** report_json) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    const Task t = task_arg(task);
    const auto labels = dataset_labels(*ds, t);
    const auto names = task_labels(t, ds->spec);
    auto res = cnn_train(ds->images, labels, static_cast<int>(names.size()), hyper_arg(h));
    res.model.labels = names;
    res.model.task = std::string(task_name(t));
    if (report_json) {
      json j;
      j["task"] = task_name(t);
      j["samples"] = ds->images.size();
      j["best_epoch"] = res.best_epoch;
      j["train_loss"] = res.train_loss;
      j["validation_accuracy"] = res.validation_accuracy;
      j["train_accuracy"] = accuracy(res.model, ds->images, labels);
      *report_json = dup(j.dump());
    }
    *out = new finetap_model{std::move(res.model)};
  });
}

finetap_status finetap_kfold(const finetap_dataset* ds, const char* task, const finetap_hyper* h, int k,
                             char** report_json) {
  return guard([&] {
    need(ds, "dataset");
    need(report_json, "report_json");
    const Task t = task_arg(task);
    const auto labels = dataset_labels(*ds, t);
    const auto names = task_labels(t, ds->spec);
    auto rep = kfold_evaluate(ds->images, labels, static_cast<int>(names.size()), hyper_arg(h), k);
    json j;
    j["task"] = task_name(t);
    j["k"] = k;
    j["stratified"] = rep.stratified;
    j["fold_accuracy"] = rep.accuracy;
    j["fold_test_size"] = rep.test_size;
    j["mean_accuracy"] = rep.mean_accuracy;
    *report_json = dup(j.dump());
  });
}

finetap_status finetap_model_read(const char* path, finetap_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new finetap_model{load_model(path)};
  });
}

finetap_status finetap_model_write(const finetap_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    save_model(model->m, path);
  });
}

void finetap_model_free(finetap_model* model) { delete model; }

finetap_status finetap_model_classify(const finetap_model* model, const finetap_trace* trace, char** label,
                                      char** task) {
  return guard([&] {
    need(model, "model");
    need(trace, "trace");
    need(label, "label");
    const int cls = predict(model->m, rasterize(trace->t));
    const auto& names = model->m.labels;
    *label = dup(cls < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(cls)] : std::to_string(cls));
    if (task) *task = dup(model->m.task);
  });
}

finetap_status finetap_gradient_check(const finetap_trace* trace, int classes, int label, double epsilon,
                                      uint64_t seed, double* max_relative_error) {
  return guard([&] {
    need(trace, "trace");
    need(max_relative_error, "max_relative_error");
    const auto model = init_model(classes, seed);
    *max_relative_error = gradient_check(model, rasterize(trace->t), label, epsilon, 20, seed).max_relative_error;
  });
}

finetap_status finetap_plan_json(const finetap_checkpoint* base, const char* policy, int include_entries,
                                 char** out) {
  return guard([&] {
    need(base, "base");
    need(out, "out");
    if (base->c.tensors().empty()) fail(Errc::insufficient_data, "checkpoint has no tensors");
    const auto plan = plan_bits(base->c, policy_arg(policy), base->c.tensors().front().format());
    *out = dup(plan_json(plan, include_entries != 0));
  });
}

finetap_status finetap_extract(const finetap_checkpoint* base, const finetap_checkpoint* victim, const char* policy,
                               double probe_error_rate, uint64_t seed, const char* transcript_path,
                               finetap_checkpoint** clone, char** report_json) {
  return guard([&] {
    need(base, "base");
    need(victim, "victim");
    if (base->c.tensors().empty()) fail(Errc::insufficient_data, "checkpoint has no tensors");
    const auto plan = plan_bits(base->c, policy_arg(policy), base->c.tensors().front().format());
    ProbeOracle oracle(victim->c, probe_error_rate, seed);
    oracle.set_record(transcript_path != nullptr);
    auto res = extract(plan, oracle, base->c);
    if (transcript_path) write_file_atomic(transcript_path, transcript_csv(oracle.transcript()));
    const auto rep = verify(res.clone, victim->c, plan, &res.report);
    if (report_json) *report_json = dup(report_json_text(rep));
    if (clone) *clone = new finetap_checkpoint{std::move(res.clone)};
  });
}

finetap_status finetap_verify(const finetap_checkpoint* clone, const finetap_checkpoint* victim,
                              const finetap_checkpoint* base, const char* policy, char** report_json) {
  return guard([&] {
    need(clone, "clone");
    need(victim, "victim");
    need(base, "base");
    need(report_json, "report_json");
    if (base->c.tensors().empty()) fail(Errc::insufficient_data, "checkpoint has no tensors");
    const auto plan = plan_bits(base->c, policy_arg(policy), base->c.tensors().front().format());
    *report_json = dup(report_json_text(verify(clone->c, victim->c, plan)));
  });
}

finetap_status finetap_pool_open(const char* dir, finetap_pool** out) {
  return guard([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new finetap_pool{ModelPool::scan(dir)};
  });
}

void finetap_pool_free(finetap_pool* pool) { delete pool; }

finetap_status finetap_pool_json(const finetap_pool* pool, char** out) {
  return guard([&] {
    need(pool, "pool");
    need(out, "out");
    json j;
    j["entries"] = json::array();
    for (const auto& e : pool->p.entries()) {
      j["entries"].push_back({{"vendor", e.vendor},
                              {"framework", e.framework},
                              {"arch", e.arch},
                              {"variant", e.variant},
                              {"path", e.path.string()}});
    }
    j["warnings"] = pool->p.warnings();
    *out = dup(j.dump());
  });
}

finetap_status finetap_pipeline(const finetap_trace* trace, const finetap_pool* pool,
                                const finetap_model* vendor_model, const finetap_model* framework_model,
                                const finetap_model* encoder_model, const finetap_checkpoint* victim,
                                const char* policy, double probe_error_rate, uint64_t seed, const char* clone_path,
                                char** result_json, int* degraded) {
  return guard([&] {
    need(trace, "trace");
    need(pool, "pool");
    need(result_json, "result_json");
    Classifiers cls;
    if (vendor_model) cls.vendor = vendor_model->m;
    if (framework_model) cls.framework = framework_model->m;
    if (encoder_model) cls.encoder_count = encoder_model->m;
    PipelineConfig cfg;
    cfg.policy = policy_arg(policy);
    std::optional<ProbeOracle> oracle;
    if (victim) oracle.emplace(victim->c, probe_error_rate, seed);
    auto res = run_pipeline(trace->t, oracle ? &*oracle : nullptr, pool->p, cls, cfg, victim ? &victim->c : nullptr);
    if (clone_path && res.clone) write_wbin(*res.clone, clone_path);
    *result_json = dup(pipeline_json(res));
    if (degraded) *degraded = res.degraded ? 1 : 0;
  });
}

finetap_status finetap_noise_sweep(const finetap_model* vendor_model, const finetap_model* framework_model,
                                   const finetap_model* encoder_model, const char* sweep, size_t trials,
                                   uint64_t seed, const char* format, char** out) {
  return guard([&] {
    need(out, "out");
    const std::string which = sweep ? sweep : "both";
    std::vector<NoisePoint> pts;
    if (which == "count" || which == "both") pts = count_sweep();
    if (which == "amplitude" || which == "both") {
      const auto a = amplitude_sweep();
      pts.insert(pts.end(), a.begin(), a.end());
    }
    if (pts.empty()) fail(Errc::invalid_argument, "sweep must be count, amplitude or both");
    Classifiers cls;
    if (vendor_model) cls.vendor = vendor_model->m;
    if (framework_model) cls.framework = framework_model->m;
    if (encoder_model) cls.encoder_count = encoder_model->m;
    const auto rows = noise_sweep(pts, trials, cls, CorpusSpec{}, seed);
    if (format && std::strcmp(format, "csv") == 0) {
      *out = dup(sweep_csv(rows));
      return;
    }
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"n_kernels", r.point.n_kernels},
                     {"amplitude_us", r.point.amplitude_us},
                     {"trials", r.trials},
                     {"detector", r.detector_accuracy},
                     {"vendor", num(r.vendor_accuracy)},
                     {"framework", num(r.framework_accuracy)},
                     {"encoder_count", num(r.encoder_accuracy)}});
    }
    *out = dup(arr.dump());
  });
}

}  // extern "C"
