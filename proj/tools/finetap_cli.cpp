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

// Operator front end. Everything goes through the C API.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "finetap/finetap.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitDegraded = 3;

struct Failure {
  finetap_status status;
  std::string message;
};

void check(finetap_status s) {
  if (s != FINETAP_OK) throw Failure{s, finetap_last_error()};
}

void bad_input(const std::string& msg) { throw Failure{FINETAP_E_INVALID_ARGUMENT, msg}; }

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using CkptPtr = std::unique_ptr<finetap_checkpoint, Deleter<finetap_checkpoint, finetap_checkpoint_free>>;
using TracePtr = std::unique_ptr<finetap_trace, Deleter<finetap_trace, finetap_trace_free>>;
using ModelPtr = std::unique_ptr<finetap_model, Deleter<finetap_model, finetap_model_free>>;
using DatasetPtr = std::unique_ptr<finetap_dataset, Deleter<finetap_dataset, finetap_dataset_free>>;
using PoolPtr = std::unique_ptr<finetap_pool, Deleter<finetap_pool, finetap_pool_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  finetap_string_free(s);
  return out;
}

CkptPtr load_ckpt(const std::string& path) {
  finetap_checkpoint* c = nullptr;
  check(finetap_checkpoint_read(path.c_str(), &c));
  return CkptPtr(c);
}

TracePtr load_trace(const std::string& path) {
  finetap_trace* t = nullptr;
  check(finetap_trace_read(path.c_str(), &t));
  return TracePtr(t);
}

ModelPtr load_model(const std::string& path) {
  if (path.empty()) return nullptr;
  finetap_model* m = nullptr;
  check(finetap_model_read(path.c_str(), &m));
  return ModelPtr(m);
}

struct Common {
  std::uint64_t seed = 1;
  std::string out;
  std::string format = "json";
};

// Text results go to --out when given (temp file + rename), else stdout.
void emit(const Common& c, const std::string& text) {
  std::string body = text;
  if (body.empty() || body.back() != '\n') body += '\n';
  if (c.out.empty()) {
    std::cout << body;
    return;
  }
  const std::filesystem::path p(c.out);
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!(f << body)) throw Failure{FINETAP_E_IO, "cannot write " + tmp};
  }
  std::filesystem::rename(tmp, p);
}

void require_out(const Common& c, const char* what) {
  if (c.out.empty()) bad_input(std::string("--out is required (") + what + ")");
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finetap: trace-guided architecture recovery and selective weight extraction"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI file; [subcommand] sections supply defaults");
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
  app.add_option("--out", common.out, "Output path");
  app.add_option("--format", common.format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  int exit_code = kExitOk;
  std::function<void()> action;

  // gen-ckpt
  auto* gen_ckpt = app.add_subcommand("gen-ckpt", "Generate a synthetic pre-trained checkpoint");
  std::string arch = "base";
  double small_fraction = 0.90;
  bool independent = false;
  std::string quantize;
  gen_ckpt->add_option("--arch", arch, "base, large or e<N>h<H>")->capture_default_str();
  gen_ckpt->add_option("--small-fraction", small_fraction, "Fraction of |w| < 0.001")->capture_default_str();
  gen_ckpt->add_flag("--independent", independent, "Draw an independently trained checkpoint instead");
  gen_ckpt->add_option("--quantize", quantize, "Store as f16 or bf16");
  gen_ckpt->callback([&] {
    action = [&] {
      require_out(common, "checkpoint path");
      finetap_checkpoint* c = nullptr;
      if (independent) {
        check(finetap_checkpoint_gen_independent(arch.c_str(), common.seed, &c));
      } else {
        check(finetap_checkpoint_gen_base(arch.c_str(), common.seed, small_fraction, &c));
      }
      CkptPtr ck(c);
      if (!quantize.empty()) {
        check(finetap_checkpoint_quantize(ck.get(), quantize.c_str(), &c));
        ck.reset(c);
      }
      check(finetap_checkpoint_write(ck.get(), common.out.c_str()));
      char* info = nullptr;
      check(finetap_checkpoint_info_json(ck.get(), &info));
      std::cout << take(info) << "\n";
    };
  });

  // finetune-sim
  auto* finetune = app.add_subcommand("finetune-sim", "Simulate fine-tuning of a checkpoint");
  std::string base_path;
  double sigma = 0.001, sigma_last = 0.012;
  int epoch = 0;
  bool drift = false;
  finetune->add_option("--base", base_path, "Pre-trained checkpoint")->required();
  finetune->add_option("--sigma", sigma, "Encoder delta scale")->capture_default_str();
  finetune->add_option("--sigma-last", sigma_last, "Task-layer delta scale")->capture_default_str();
  finetune->add_option("--epoch", epoch, "0 = final deltas, 1..30 = drift schedule")->capture_default_str();
  finetune->add_flag("--drift", drift, "Report the per-epoch drift curve instead of writing a checkpoint");
  finetune->callback([&] {
    action = [&] {
      auto base = load_ckpt(base_path);
      if (drift) {
        char* s = nullptr;
        check(finetap_drift_curve_json(base.get(), common.seed, &s));
        emit(common, take(s));
        return;
      }
      require_out(common, "checkpoint path");
      finetap_checkpoint* c = nullptr;
      check(finetap_checkpoint_finetune(base.get(), sigma, sigma_last, epoch, common.seed, &c));
      CkptPtr ck(c);
      check(finetap_checkpoint_write(ck.get(), common.out.c_str()));
    };
  });

  // diff-weights
  auto* diff = app.add_subcommand("diff-weights", "Per-tensor difference statistics and heatmaps");
  std::string a_path, b_path, metric = "abs_diff", heat_tensor, heat_path;
  int downsample = 1;
  diff->add_option("--a", a_path, "First checkpoint")->required();
  diff->add_option("--b", b_path, "Second checkpoint")->required();
  diff->add_option("--metric", metric, "abs_diff or abs_of_abs_diff")->capture_default_str();
  diff->add_option("--heatmap-tensor", heat_tensor, "Tensor to render");
  diff->add_option("--heatmap", heat_path, "PGM output for --heatmap-tensor");
  diff->add_option("--downsample", downsample, "Block size for the heatmap")->capture_default_str();
  diff->callback([&] {
    action = [&] {
      auto a = load_ckpt(a_path);
      auto b = load_ckpt(b_path);
      if (!heat_tensor.empty() || !heat_path.empty()) {
        if (heat_tensor.empty() || heat_path.empty()) bad_input("--heatmap and --heatmap-tensor go together");
        check(finetap_write_heatmap(a.get(), b.get(), heat_tensor.c_str(), metric.c_str(), downsample,
                                    heat_path.c_str()));
      }
      char* s = nullptr;
      check(finetap_diff_stats(a.get(), b.get(), metric.c_str(), common.format.c_str(), &s));
      emit(common, take(s));
    };
  });

  // confidence-corr
  auto* conf = app.add_subcommand("confidence-corr", "Head-confidence Pearson correlation between checkpoints");
  int inputs = 16;
  conf->add_option("--a", a_path, "Reference checkpoint")->required();
  conf->add_option("--b", b_path, "Compared checkpoint")->required();
  conf->add_option("--inputs", inputs, "Random token inputs")->capture_default_str();
  conf->callback([&] {
    action = [&] {
      auto a = load_ckpt(a_path);
      auto b = load_ckpt(b_path);
      char* s = nullptr;
      check(finetap_confidence_correlation(a.get(), b.get(), inputs, common.seed, &s));
      emit(common, take(s));
    };
  });

  // gen-traces
  auto* gen_traces = app.add_subcommand("gen-traces", "Simulate kernel traces");
  std::string vendor = "alpha", framework = "eager";
  int count = 1;
  std::size_t corpus = 0;
  finetap_trace_options topts;
  finetap_trace_options_default(&topts);
  gen_traces->add_option("--vendor", vendor, "Vendor label")->capture_default_str();
  gen_traces->add_option("--framework", framework, "eager, graph-xla or graph-plain")->capture_default_str();
  gen_traces->add_option("--arch", arch, "base, large or e<N>h<H>")->capture_default_str();
  gen_traces->add_option("--count", count, "Traces to generate (more than one writes a directory)")->capture_default_str();
  gen_traces->add_option("--profile-seed", topts.profile_seed, "Signature profile seed")->capture_default_str();
  gen_traces->add_option("--core-vectors", topts.core_vectors, "K/Q/V-like blocks per encoder")->capture_default_str();
  gen_traces->add_option("--attention-scale", topts.attention_scale, "Attention duration multiplier")->capture_default_str();
  gen_traces->add_option("--corpus", corpus, "Write the labelled training corpus of this size instead");
  gen_traces->callback([&] {
    action = [&] {
      require_out(common, "trace file or directory");
      if (corpus > 0) {
        finetap_dataset* d = nullptr;
        check(finetap_dataset_corpus(corpus, common.seed, topts.profile_seed, &d));
        DatasetPtr ds(d);
        check(finetap_dataset_write(ds.get(), common.out.c_str()));
        return;
      }
      if (count < 1) bad_input("--count must be positive");
      if (count > 1) std::filesystem::create_directories(common.out);
      for (int i = 0; i < count; ++i) {
        finetap_trace* t = nullptr;
        check(finetap_trace_gen(vendor.c_str(), framework.c_str(), arch.c_str(), common.seed + static_cast<std::uint64_t>(i),
                                &topts, &t));
        TracePtr tr(t);
        std::string path = common.out;
        if (count > 1) {
          char name[32];
          std::snprintf(name, sizeof name, "trace_%05d.jsonl", i);
          path = (std::filesystem::path(common.out) / name).string();
        }
        check(finetap_trace_write(tr.get(), path.c_str()));
      }
    };
  });

  // inject-noise
  auto* noise = app.add_subcommand("inject-noise", "Perturb the durations of n kernels");
  std::string trace_path;
  std::size_t n_kernels = 16;
  double amplitude = 20.0;
  bool strip = false;
  noise->add_option("--trace", trace_path, "Input trace")->required();
  noise->add_option("--n", n_kernels, "Kernels to perturb")->capture_default_str();
  noise->add_option("--amplitude", amplitude, "Perturbation in microseconds")->capture_default_str();
  noise->add_flag("--strip", strip, "Drop provenance from the output");
  noise->callback([&] {
    action = [&] {
      require_out(common, "trace path");
      auto tr = load_trace(trace_path);
      finetap_trace* t = nullptr;
      check(finetap_trace_inject_noise(tr.get(), n_kernels, amplitude, common.seed, &t));
      TracePtr noisy(t);
      if (strip) check(finetap_trace_strip(noisy.get()));
      check(finetap_trace_write(noisy.get(), common.out.c_str()));
    };
  });

  // detect-arch
  auto* detect = app.add_subcommand("detect-arch", "Recover encoder count, size class and regions from a trace");
  std::string family = "auto";
  double eager_thr = 0.0, graph_thr = 0.0;
  detect->add_option("--trace", trace_path, "Input trace")->required();
  detect->add_option("--family", family, "auto, eager or graph")->check(CLI::IsMember({"auto", "eager", "graph"}))->capture_default_str();
  detect->add_option("--eager-threshold-ns", eager_thr, "Size threshold for eager traces");
  detect->add_option("--graph-threshold-ns", graph_thr, "Size threshold for graph traces");
  detect->callback([&] {
    action = [&] {
      auto tr = load_trace(trace_path);
      const int fam = family == "auto" ? -1 : (family == "graph" ? 1 : 0);
      char* s = nullptr;
      check(finetap_detect_arch(tr.get(), fam, eager_thr, graph_thr, &s));
      emit(common, take(s));
    };
  });

  // rasterize
  auto* raster = app.add_subcommand("rasterize", "Render a trace as a 1024x1024 PGM image");
  raster->add_option("--trace", trace_path, "Input trace")->required();
  raster->callback([&] {
    action = [&] {
      require_out(common, "PGM path");
      auto tr = load_trace(trace_path);
      check(finetap_rasterize_pgm(tr.get(), common.out.c_str()));
    };
  });

  // train-classifier
  auto* train = app.add_subcommand("train-classifier", "Train the trace CNN for one task");
  std::string task = "framework", traces_dir;
  std::size_t corpus_size = 680;
  std::uint64_t profile_seed = 2024;
  int kfold = 0;
  finetap_hyper hyper;
  finetap_hyper_default(&hyper);
  train->add_option("--task", task, "encoder_count, vendor or framework")->capture_default_str();
  train->add_option("--traces", traces_dir, "Directory of labelled traces (default: synthetic corpus)");
  train->add_option("--corpus-size", corpus_size, "Synthetic corpus size")->capture_default_str();
  train->add_option("--profile-seed", profile_seed, "Signature profile seed for the corpus")->capture_default_str();
  train->add_option("--epochs", hyper.epochs, "Epochs")->capture_default_str();
  train->add_option("--lr", hyper.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--momentum", hyper.momentum, "Momentum")->capture_default_str();
  train->add_option("--batch", hyper.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--validation-fraction", hyper.validation_fraction, "Held-out fraction for model selection")
      ->capture_default_str();
  train->add_option("--kfold", kfold, "Run k-fold cross-validation instead of training one model");
  train->callback([&] {
    action = [&] {
      hyper.seed = common.seed;
      finetap_dataset* d = nullptr;
      if (!traces_dir.empty()) {
        check(finetap_dataset_from_dir(traces_dir.c_str(), &d));
      } else {
        check(finetap_dataset_corpus(corpus_size, common.seed, profile_seed, &d));
      }
      DatasetPtr ds(d);
      char* rep = nullptr;
      if (kfold > 0) {
        check(finetap_kfold(ds.get(), task.c_str(), &hyper, kfold, &rep));
        emit(common, take(rep));
        return;
      }
      require_out(common, "model path");
      finetap_model* m = nullptr;
      check(finetap_model_train(ds.get(), task.c_str(), &hyper, &m, &rep));
      ModelPtr model(m);
      check(finetap_model_write(model.get(), common.out.c_str()));
      std::cout << take(rep) << "\n";
    };
  });

  // classify
  auto* classify = app.add_subcommand("classify", "Predict labels for a trace");
  std::vector<std::string> model_paths;
  classify->add_option("--model", model_paths, "Trained model (repeatable)")->required();
  classify->add_option("--trace", trace_path, "Input trace")->required();
  classify->callback([&] {
    action = [&] {
      auto tr = load_trace(trace_path);
      std::string out = "{";
      for (std::size_t i = 0; i < model_paths.size(); ++i) {
        auto m = load_model(model_paths[i]);
        char *label = nullptr, *tk = nullptr;
        check(finetap_model_classify(m.get(), tr.get(), &label, &tk));
        out += (i ? "," : "") + std::string("\"") + json_escape(take(tk)) + "\":\"" + json_escape(take(label)) + "\"";
      }
      emit(common, out + "}");
    };
  });

  // plan-bits
  auto* plan = app.add_subcommand("plan-bits", "Plan which fraction bits to probe");
  std::string policy = "worked-example";
  bool entries = false;
  plan->add_option("--base", base_path, "Pre-trained checkpoint")->required();
  plan->add_option("--policy", policy, "worked-example or algorithm1")->capture_default_str();
  plan->add_flag("--entries", entries, "Include every per-weight entry");
  plan->callback([&] {
    action = [&] {
      auto base = load_ckpt(base_path);
      char* s = nullptr;
      check(finetap_plan_json(base.get(), policy.c_str(), entries ? 1 : 0, &s));
      emit(common, take(s));
    };
  });

  // extract
  auto* extract = app.add_subcommand("extract", "Probe a victim and reconstruct a clone");
  std::string victim_path, transcript, report_path;
  double error_rate = 0.0;
  extract->add_option("--base", base_path, "Pre-trained checkpoint")->required();
  extract->add_option("--victim", victim_path, "Victim checkpoint behind the simulated probe")->required();
  extract->add_option("--policy", policy, "worked-example or algorithm1")->capture_default_str();
  extract->add_option("--error-rate", error_rate, "Probe bit-flip probability")->capture_default_str();
  extract->add_option("--transcript", transcript, "CSV log of every probe");
  extract->add_option("--report", report_path, "Report path (default stdout)");
  extract->callback([&] {
    action = [&] {
      require_out(common, "clone path");
      auto base = load_ckpt(base_path);
      auto victim = load_ckpt(victim_path);
      finetap_checkpoint* c = nullptr;
      char* rep = nullptr;
      check(finetap_extract(base.get(), victim.get(), policy.c_str(), error_rate, common.seed,
                            transcript.empty() ? nullptr : transcript.c_str(), &c, &rep));
      CkptPtr clone(c);
      check(finetap_checkpoint_write(clone.get(), common.out.c_str()));
      Common rc = common;
      rc.out = report_path;
      emit(rc, take(rep));
    };
  });

  // verify
  auto* verify = app.add_subcommand("verify", "Score a clone against the victim");
  std::string clone_path;
  verify->add_option("--clone", clone_path, "Clone checkpoint")->required();
  verify->add_option("--victim", victim_path, "Victim checkpoint")->required();
  verify->add_option("--base", base_path, "Pre-trained checkpoint the plan came from")->required();
  verify->add_option("--policy", policy, "worked-example or algorithm1")->capture_default_str();
  verify->callback([&] {
    action = [&] {
      auto clone = load_ckpt(clone_path);
      auto victim = load_ckpt(victim_path);
      auto base = load_ckpt(base_path);
      char* rep = nullptr;
      check(finetap_verify(clone.get(), victim.get(), base.get(), policy.c_str(), &rep));
      emit(common, take(rep));
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Identify the victim, select a pre-trained model and extract");
  std::string pool_dir, vendor_model, framework_model, encoder_model, clone_out;
  pipe->add_option("--trace", trace_path, "Victim trace")->required();
  pipe->add_option("--pool", pool_dir, "Model pool directory")->required();
  pipe->add_option("--vendor-model", vendor_model, "Vendor classifier");
  pipe->add_option("--framework-model", framework_model, "Framework classifier");
  pipe->add_option("--encoder-model", encoder_model, "Encoder-count classifier (fallback)");
  pipe->add_option("--victim", victim_path, "Victim checkpoint behind the simulated probe");
  pipe->add_option("--policy", policy, "worked-example or algorithm1")->capture_default_str();
  pipe->add_option("--error-rate", error_rate, "Probe bit-flip probability")->capture_default_str();
  pipe->add_option("--clone-out", clone_out, "Write the reconstructed clone here");
  pipe->callback([&] {
    action = [&] {
      auto tr = load_trace(trace_path);
      finetap_pool* p = nullptr;
      check(finetap_pool_open(pool_dir.c_str(), &p));
      PoolPtr pool(p);
      auto vm = load_model(vendor_model);
      auto fm = load_model(framework_model);
      auto em = load_model(encoder_model);
      CkptPtr victim = victim_path.empty() ? nullptr : load_ckpt(victim_path);
      char* s = nullptr;
      int degraded = 0;
      check(finetap_pipeline(tr.get(), pool.get(), vm.get(), fm.get(), em.get(), victim.get(), policy.c_str(),
                             error_rate, common.seed, clone_out.empty() ? nullptr : clone_out.c_str(), &s,
                             &degraded));
      emit(common, take(s));
      if (degraded) exit_code = kExitDegraded;
    };
  });

  // noise-sweep
  auto* sweep = app.add_subcommand("noise-sweep", "Detector and classifier accuracy under injected noise");
  std::string which = "both";
  std::size_t trials = 50;
  sweep->add_option("--vendor-model", vendor_model, "Vendor classifier");
  sweep->add_option("--framework-model", framework_model, "Framework classifier");
  sweep->add_option("--encoder-model", encoder_model, "Encoder-count classifier");
  sweep->add_option("--sweep", which, "count, amplitude or both")->check(CLI::IsMember({"count", "amplitude", "both"}))->capture_default_str();
  sweep->add_option("--trials", trials, "Trials per point")->capture_default_str();
  sweep->callback([&] {
    action = [&] {
      auto vm = load_model(vendor_model);
      auto fm = load_model(framework_model);
      auto em = load_model(encoder_model);
      char* s = nullptr;
      check(finetap_noise_sweep(vm.get(), fm.get(), em.get(), which.c_str(), trials, common.seed,
                                common.format.c_str(), &s));
      emit(common, take(s));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "{\"error\":\"invalid_argument\",\"message\":\"" << json_escape(e.what()) << "\"}\n";
    return kExitBadInput;
  }

  try {
    if (action) action();
  } catch (const Failure& f) {
    std::cerr << "{\"error\":\"" << finetap_status_name(f.status) << "\",\"message\":\"" << json_escape(f.message)
              << "\"}\n";
    return f.status == FINETAP_E_INTERNAL ? kExitInternal : kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"internal\",\"message\":\"" << json_escape(e.what()) << "\"}\n";
    return kExitInternal;
  }
  return exit_code;
}
