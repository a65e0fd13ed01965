/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the classifier library.
 *
 * Every fallible call returns a cattn_status. On failure the message of the
 * most recent error on the calling thread is available from
 * cattn_last_error(). Strings handed out through `char**` parameters are
 * owned by the caller and released with cattn_string_free().
 */
#ifndef CATTN_CATTN_H
#define CATTN_CATTN_H

#include <stddef.h>
#include <stdint.h>

#if defined(CATTN_BUILDING_LIBRARY)
#define CATTN_API __attribute__((visibility("default")))
#else
#define CATTN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cattn_status {
  CATTN_OK = 0,
  CATTN_ERR_ARGUMENT = 1,  /* null handle or pointer */
  CATTN_ERR_CONFIG = 2,
  CATTN_ERR_DIMENSION = 3,
  CATTN_ERR_INGESTION = 4,
  CATTN_ERR_IO = 5,
  CATTN_ERR_CONTRACT = 6,
  CATTN_ERR_INTERNAL = 7
} cattn_status;

typedef enum cattn_format { CATTN_FORMAT_JSON = 0, CATTN_FORMAT_TEXT = 1 } cattn_format;

typedef struct cattn_config cattn_config;
typedef struct cattn_model cattn_model;
typedef struct cattn_corpus cattn_corpus;

CATTN_API const char* cattn_version(void);
CATTN_API const char* cattn_status_name(cattn_status status);
/* Message of the last failed call on this thread; "" if none. */
CATTN_API const char* cattn_last_error(void);
CATTN_API void cattn_string_free(char* s);

/* Corpus generation and loading. */
typedef struct cattn_synthetic_options {
  size_t n_records;
  double patient_fraction;
  double signal_strength;
  uint64_t seed;
  size_t embedding_dim; /* 0 omits embeddings */
} cattn_synthetic_options;

CATTN_API void cattn_synthetic_defaults(cattn_synthetic_options* out);
CATTN_API cattn_status cattn_generate_corpus(const cattn_synthetic_options* options,
                                             const char* out_path, size_t* n_control,
                                             size_t* n_patient);

CATTN_API cattn_status cattn_corpus_load(const char* path, cattn_corpus** out);
CATTN_API size_t cattn_corpus_size(const cattn_corpus* corpus);
CATTN_API void cattn_corpus_free(cattn_corpus* corpus);

/* Run configuration: `key = value` documents. */
CATTN_API cattn_status cattn_config_new(cattn_config** out);
CATTN_API cattn_status cattn_config_load(const char* path, cattn_config** out);
CATTN_API cattn_status cattn_config_parse(const char* text, cattn_config** out);
CATTN_API cattn_status cattn_config_set(cattn_config* config, const char* key, const char* value);
CATTN_API cattn_status cattn_config_get(const cattn_config* config, const char* key, char** out);
CATTN_API cattn_status cattn_config_echo(const cattn_config* config, char** out);
CATTN_API void cattn_config_free(cattn_config* config);

/* Training. */
typedef struct cattn_epoch {
  size_t epoch;
  double train_loss;
  double val_loss;
  double val_acc;
} cattn_epoch;

typedef void (*cattn_epoch_fn)(const cattn_epoch* epoch, void* user);

typedef struct cattn_train_summary {
  size_t best_epoch;
  double best_val_loss;
  double best_val_acc;
  size_t train_records;
  size_t validation_records;
  size_t test_records;
  size_t parameters;
} cattn_train_summary;

/* Trains per config, writing its checkpoint and epoch log. `on_epoch` and
 * `summary` may be null. */
CATTN_API cattn_status cattn_train(const cattn_config* config, cattn_epoch_fn on_epoch, void* user,
                                   cattn_train_summary* summary);

/* Checkpoints. */
CATTN_API cattn_status cattn_model_load(const char* path, cattn_model** out);
CATTN_API cattn_status cattn_model_save(const cattn_model* model, const char* path);
/* JSON object with variant, parameter count, config and run metadata. */
CATTN_API cattn_status cattn_model_info(const cattn_model* model, char** out);
/* Variant name, e.g. "c-attention-unified"; "" for a null handle. */
CATTN_API const char* cattn_model_variant(const cattn_model* model);
CATTN_API void cattn_model_free(cattn_model* model);

/* Evaluation. `split` is train, validation, test or all. */
typedef struct cattn_metrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double auc;  /* valid only when has_auc */
  int has_auc;
  size_t tn, fp, fn, tp;
} cattn_metrics;

CATTN_API cattn_status cattn_metrics_from_counts(size_t tn, size_t fp, size_t fn, size_t tp,
                                                 cattn_metrics* out);
CATTN_API cattn_status cattn_evaluate(const cattn_model* model, const cattn_corpus* corpus,
                                      const char* split, size_t threads, cattn_metrics* out);
CATTN_API cattn_status cattn_metrics_json(const cattn_metrics* metrics, char** out);
CATTN_API cattn_status cattn_metrics_table(const cattn_metrics* metrics, const char* model_name,
                                           char** out);

/* Patient-class probability of corpus record `index`. */
CATTN_API cattn_status cattn_predict(const cattn_model* model, const cattn_corpus* corpus,
                                     size_t index, double* patient_probability);

/* Explanations. With a non-empty `record_id` one record is explained;
 * otherwise every record of `split` plus a corpus summary. JSON output is
 * {"reports": [...], "summary": {...}|null}. */
typedef struct cattn_explain_options {
  size_t top_sentences;
  size_t top_tags;
  size_t threads;
  cattn_format format;
} cattn_explain_options;

CATTN_API void cattn_explain_defaults(cattn_explain_options* out);
CATTN_API cattn_status cattn_explain(const cattn_model* model, const cattn_corpus* corpus,
                                     const char* record_id, const char* split,
                                     const cattn_explain_options* options, char** out);

#ifdef __cplusplus
}
#endif

#endif /* CATTN_CATTN_H */
