/*
 * Copyright 2026 The finetap Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * C interface to libfinetap.
 *
 * Every function returns a finetap_status. On failure the message is
 * available from finetap_last_error() on the same thread until the next
 * call. Handles are opaque and owned by the caller; release them with the
 * matching *_free function (NULL is accepted). Strings returned through
 * char** are heap-allocated and released with finetap_string_free.
 */

#ifndef FINETAP_FINETAP_H_
#define FINETAP_FINETAP_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define FINETAP_API __attribute__((visibility("default")))
#else
#define FINETAP_API
#endif

typedef enum finetap_status {
  FINETAP_OK = 0,
  FINETAP_E_INVALID_ARGUMENT = 1,
  FINETAP_E_IO = 2,
  FINETAP_E_BAD_MAGIC = 3,
  FINETAP_E_TRUNCATED = 4,
  FINETAP_E_CHECKSUM = 5,
  FINETAP_E_DUPLICATE_NAME = 6,
  FINETAP_E_MISSING_METADATA = 7,
  FINETAP_E_SHAPE_MISMATCH = 8,
  FINETAP_E_UNSUPPORTED_FORMAT = 9,
  FINETAP_E_FIELD_OVERFLOW = 10,
  FINETAP_E_UNKNOWN_LABEL = 11,
  FINETAP_E_ZERO_VARIANCE = 12,
  FINETAP_E_INSUFFICIENT_DATA = 13,
  FINETAP_E_PARSE = 14,
  FINETAP_E_INTERNAL = 99
} finetap_status;

typedef struct finetap_checkpoint finetap_checkpoint;
typedef struct finetap_trace finetap_trace;
typedef struct finetap_dataset finetap_dataset;
typedef struct finetap_model finetap_model;
typedef struct finetap_pool finetap_pool;

FINETAP_API const char* finetap_version(void);
FINETAP_API const char* finetap_last_error(void);
/* Stable lowercase name, e.g. "shape_mismatch". */
FINETAP_API const char* finetap_status_name(finetap_status status);
FINETAP_API void finetap_string_free(char* s);

/* ---- float fields ---------------------------------------------------- */

/* format: "f32", "f16" or "bf16". */
FINETAP_API finetap_status finetap_decompose(float value, const char* format, uint32_t* sign, uint32_t* exponent,
                                             uint32_t* fraction);
FINETAP_API finetap_status finetap_compose(const char* format, uint32_t sign, uint32_t exponent, uint32_t fraction,
                                           float* out);
FINETAP_API finetap_status finetap_place_value(const char* format, int biased_exponent, int k, double* out);

/* ---- checkpoints ----------------------------------------------------- */

FINETAP_API finetap_status finetap_checkpoint_read(const char* path, finetap_checkpoint** out);
FINETAP_API finetap_status finetap_checkpoint_write(const finetap_checkpoint* ckpt, const char* path);
FINETAP_API void finetap_checkpoint_free(finetap_checkpoint* ckpt);
/* arch: "base", "large" or "e<N>h<H>". */
FINETAP_API finetap_status finetap_checkpoint_gen_base(const char* arch, uint64_t seed, double small_weight_fraction,
                                                       finetap_checkpoint** out);
/* Independent draw calibrated against the default base distribution. */
FINETAP_API finetap_status finetap_checkpoint_gen_independent(const char* arch, uint64_t seed,
                                                              finetap_checkpoint** out);
/* epoch 0 applies the final deltas; epoch in 1..30 follows the drift schedule. */
FINETAP_API finetap_status finetap_checkpoint_finetune(const finetap_checkpoint* base, double sigma_encoder,
                                                       double sigma_last_layer, int epoch, uint64_t seed,
                                                       finetap_checkpoint** out);
FINETAP_API finetap_status finetap_checkpoint_quantize(const finetap_checkpoint* ckpt, const char* format,
                                                       finetap_checkpoint** out);
FINETAP_API finetap_status finetap_checkpoint_truncate(const finetap_checkpoint* ckpt, finetap_checkpoint** out);
FINETAP_API finetap_status finetap_checkpoint_meta(const finetap_checkpoint* ckpt, const char* key, char** out);
FINETAP_API finetap_status finetap_checkpoint_set_meta(finetap_checkpoint* ckpt, const char* key,
                                                       const char* value);
/* {"metadata":{...},"tensors":[{"name","dtype","dims"}...]} */
FINETAP_API finetap_status finetap_checkpoint_info_json(const finetap_checkpoint* ckpt, char** out);
/* Per-epoch mean |delta| for encoder tensors and the task layer, as JSON. */
FINETAP_API finetap_status finetap_drift_curve_json(const finetap_checkpoint* base, uint64_t seed, char** out);

/* ---- similarity ------------------------------------------------------ */

/* metric: "abs_diff" or "abs_of_abs_diff"; format: "json" or "csv". */
FINETAP_API finetap_status finetap_diff_stats(const finetap_checkpoint* a, const finetap_checkpoint* b,
                                              const char* metric, const char* format, char** out);
FINETAP_API finetap_status finetap_write_heatmap(const finetap_checkpoint* a, const finetap_checkpoint* b,
                                                 const char* tensor, const char* metric, int downsample,
                                                 const char* path);
FINETAP_API finetap_status finetap_sign_agreement(const finetap_checkpoint* a, const finetap_checkpoint* b,
                                                  double min_abs_a, double* out);
FINETAP_API finetap_status finetap_pearson(const double* x, const double* y, size_t n, double* out);
/* Per (layer, head) Pearson r of head confidence, as JSON with the mean. */
FINETAP_API finetap_status finetap_confidence_correlation(const finetap_checkpoint* a, const finetap_checkpoint* b,
                                                          int inputs, uint64_t seed, char** out);

/* ---- traces ---------------------------------------------------------- */

typedef struct finetap_trace_options {
  uint64_t profile_seed;
  int core_vectors;       /* 3 by default */
  double attention_scale; /* 1.0 by default */
} finetap_trace_options;

FINETAP_API void finetap_trace_options_default(finetap_trace_options* opts);
FINETAP_API finetap_status finetap_trace_gen(const char* vendor, const char* framework, const char* arch,
                                             uint64_t seed, const finetap_trace_options* opts, finetap_trace** out);
FINETAP_API finetap_status finetap_trace_read(const char* path, finetap_trace** out);
FINETAP_API finetap_status finetap_trace_write(const finetap_trace* trace, const char* path);
FINETAP_API void finetap_trace_free(finetap_trace* trace);
FINETAP_API size_t finetap_trace_size(const finetap_trace* trace);
FINETAP_API finetap_status finetap_trace_inject_noise(const finetap_trace* trace, size_t n_kernels,
                                                      double amplitude_us, uint64_t seed, finetap_trace** out);
FINETAP_API finetap_status finetap_trace_strip(finetap_trace* trace);
/* graph_family: -1 infer, 0 eager, 1 graph. Thresholds in ns (<= 0: default). */
FINETAP_API finetap_status finetap_detect_arch(const finetap_trace* trace, int graph_family,
                                               double eager_threshold_ns, double graph_threshold_ns, char** out);
FINETAP_API finetap_status finetap_rasterize_pgm(const finetap_trace* trace, const char* path);

/* ---- classifier ------------------------------------------------------ */

typedef struct finetap_hyper {
  double learning_rate;
  double momentum;
  int epochs;
  int batch_size;
  uint64_t seed;
  double validation_fraction;
} finetap_hyper;

FINETAP_API void finetap_hyper_default(finetap_hyper* h);

/* Synthetic corpus: counts {6,12,18,24} x vendors x frameworks, round-robin. */
FINETAP_API finetap_status finetap_dataset_corpus(size_t size, uint64_t seed, uint64_t profile_seed,
                                                  finetap_dataset** out);
/* Every *.jsonl trace in dir whose provenance names vendor, framework and encoders. */
FINETAP_API finetap_status finetap_dataset_from_dir(const char* dir, finetap_dataset** out);
FINETAP_API finetap_status finetap_dataset_write(const finetap_dataset* ds, const char* dir);
FINETAP_API size_t finetap_dataset_size(const finetap_dataset* ds);
FINETAP_API void finetap_dataset_free(finetap_dataset* ds);

/* task: "encoder_count", "vendor" or "framework". */
FINETAP_API finetap_status finetap_model_train(const finetap_dataset* ds, const char* task, const finetap_hyper* h,
                                               finetap_model** out, char** report_json);
FINETAP_API finetap_status finetap_kfold(const finetap_dataset* ds, const char* task, const finetap_hyper* h, int k,
                                         char** report_json);
FINETAP_API finetap_status finetap_model_read(const char* path, finetap_model** out);
FINETAP_API finetap_status finetap_model_write(const finetap_model* model, const char* path);
FINETAP_API void finetap_model_free(finetap_model* model);
/* Class label and the task it belongs to. */
FINETAP_API finetap_status finetap_model_classify(const finetap_model* model, const finetap_trace* trace,
                                                  char** label, char** task);
FINETAP_API finetap_status finetap_gradient_check(const finetap_trace* trace, int classes, int label, double epsilon,
                                                  uint64_t seed, double* max_relative_error);

/* ---- extraction ------------------------------------------------------ */

/* policy: "worked-example" or "algorithm1". Plans use the base's storage format. */
FINETAP_API finetap_status finetap_plan_json(const finetap_checkpoint* base, const char* policy, int include_entries,
                                             char** out);
/* Plans from base, probes victim through a simulated oracle and verifies the
 * clone against victim. transcript_path may be NULL. */
FINETAP_API finetap_status finetap_extract(const finetap_checkpoint* base, const finetap_checkpoint* victim,
                                           const char* policy, double probe_error_rate, uint64_t seed,
                                           const char* transcript_path, finetap_checkpoint** clone,
                                           char** report_json);
FINETAP_API finetap_status finetap_verify(const finetap_checkpoint* clone, const finetap_checkpoint* victim,
                                          const finetap_checkpoint* base, const char* policy, char** report_json);

/* ---- pipeline -------------------------------------------------------- */

FINETAP_API finetap_status finetap_pool_open(const char* dir, finetap_pool** out);
FINETAP_API void finetap_pool_free(finetap_pool* pool);
FINETAP_API finetap_status finetap_pool_json(const finetap_pool* pool, char** out);

/* Models may be NULL. victim (oracle and ground truth) may be NULL, which
 * stops before extraction. *degraded is set when no pool entry was used. */
FINETAP_API finetap_status finetap_pipeline(const finetap_trace* trace, const finetap_pool* pool,
                                            const finetap_model* vendor_model, const finetap_model* framework_model,
                                            const finetap_model* encoder_model, const finetap_checkpoint* victim,
                                            const char* policy, double probe_error_rate, uint64_t seed,
                                            const char* clone_path, char** result_json, int* degraded);

/* sweep: "count", "amplitude" or "both"; format: "csv" or "json". */
FINETAP_API finetap_status finetap_noise_sweep(const finetap_model* vendor_model, const finetap_model* framework_model,
                                               const finetap_model* encoder_model, const char* sweep, size_t trials,
                                               uint64_t seed, const char* format, char** out);

#ifdef __cplusplus
}
#endif

#endif /* FINETAP_FINETAP_H_ */
