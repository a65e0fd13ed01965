// SPDX-License-Identifier: Apache-2.0
#include "cattn/cattn.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include <json.hpp>

#include "cattn/error.hpp"
#include "cattn/pipeline.hpp"

struct cattn_config {
  cattn::RunConfig value;
};

struct cattn_model {
  cattn::Checkpoint checkpoint;
};

struct cattn_corpus {
  std::vector<cattn::Record> records;
};

namespace {

thread_local std::string last_error;

cattn_status fail(cattn_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

// Maps the exception in flight to a status code.
cattn_status translate() {
  try {
    throw;
  } catch (const cattn::DimensionError& e) {
    return fail(CATTN_ERR_DIMENSION, e.what());
  } catch (const cattn::ConfigError& e) {
    return fail(CATTN_ERR_CONFIG, e.what());
  } catch (const cattn::IngestionError& e) {
    return fail(CATTN_ERR_INGESTION, e.what());
  } catch (const cattn::IoError& e) {
    return fail(CATTN_ERR_IO, e.what());
  } catch (const cattn::ContractError& e) {
    return fail(CATTN_ERR_CONTRACT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(CATTN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CATTN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CATTN_ERR_INTERNAL, "unknown error");
  }
}

template <class F>
cattn_status guarded(F&& body) {
  try {
    body();
    return CATTN_OK;
  } catch (...) {
    return translate();
  }
}

cattn_status null_argument(const char* name) {
  return fail(CATTN_ERR_ARGUMENT, std::string("null argument: ") + name);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out)
    throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

cattn_metrics to_c(const cattn::MetricsReport& m) {
  cattn_metrics c{};
  c.accuracy = m.accuracy;
  c.precision = m.precision;
  c.recall = m.recall;
  c.f1 = m.f1;
  c.has_auc = m.auc.has_value() ? 1 : 0;
  c.auc = m.auc.value_or(0.0);
  c.tn = m.tn;
  c.fp = m.fp;
  c.fn = m.fn;
  c.tp = m.tp;
  return c;
}

cattn::MetricsReport from_c(const cattn_metrics& c) {
  cattn::MetricsReport m;
  m.accuracy = c.accuracy;
  m.precision = c.precision;
  m.recall = c.recall;
  m.f1 = c.f1;
  if (c.has_auc)
    m.auc = c.auc;
  m.tn = c.tn;
  m.fp = c.fp;
  m.fn = c.fn;
  m.tp = c.tp;
  return m;
}

} // namespace

extern "C" {

const char* cattn_version(void) { return "1.0.0"; }

const char* cattn_status_name(cattn_status status) {
  switch (status) {
  case CATTN_OK: return "ok";
  case CATTN_ERR_ARGUMENT: return "argument error";
  case CATTN_ERR_CONFIG: return "config error";
  case CATTN_ERR_DIMENSION: return "dimension error";
  case CATTN_ERR_INGESTION: return "ingestion error";
  case CATTN_ERR_IO: return "i/o error";
  case CATTN_ERR_CONTRACT: return "contract error";
  case CATTN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* cattn_last_error(void) { return last_error.c_str(); }

void cattn_string_free(char* s) { std::free(s); }

void cattn_synthetic_defaults(cattn_synthetic_options* out) {
  if (!out)
    return;
  const cattn::SyntheticOptions d;
  *out = {d.n_records, d.patient_fraction, d.signal_strength, d.seed, d.embedding_dim};
}

cattn_status cattn_generate_corpus(const cattn_synthetic_options* options, const char* out_path,
                                   size_t* n_control, size_t* n_patient) {
  if (!options)
    return null_argument("options");
  if (!out_path)
    return null_argument("out_path");
  return guarded([&] {
    cattn::SyntheticOptions o;
    o.n_records = options->n_records;
    o.patient_fraction = options->patient_fraction;
    o.signal_strength = options->signal_strength;
    o.seed = options->seed;
    o.embedding_dim = options->embedding_dim;
    const auto s = cattn::run_generate(o, out_path);
    if (n_control)
      *n_control = s.control;
    if (n_patient)
      *n_patient = s.patient;
  });
}

cattn_status cattn_corpus_load(const char* path, cattn_corpus** out) {
  if (!path)
    return null_argument("path");
  if (!out)
    return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new cattn_corpus{cattn::read_corpus_file(path)}; });
}

size_t cattn_corpus_size(const cattn_corpus* corpus) { return corpus ? corpus->records.size() : 0; }

void cattn_corpus_free(cattn_corpus* corpus) { delete corpus; }

cattn_status cattn_config_new(cattn_config** out) {
  if (!out)
    return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new cattn_config{}; });
}

cattn_status cattn_config_load(const char* path, cattn_config** out) {
  if (!path)
    return null_argument("path");
  if (!out)
    return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new cattn_config{cattn::load_run_config(path)}; });
}

cattn_status cattn_config_parse(const char* text, cattn_config** out) {
  if (!text)
    return null_argument("text");
  if (!out)
    return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new cattn_config{cattn::parse_run_config(text)}; });
}

cattn_status cattn_config_set(cattn_config* config, const char* key, const char* value) {
  if (!config)
    return null_argument("config");
  if (!key || !value)
    return null_argument(!key ? "key" : "value");
  return guarded([&] { config->value.set(key, value); });
}

cattn_status cattn_config_get(const cattn_config* config, const char* key, char** out) {
  if (!config)
    return null_argument("config");
  if (!key || !out)
    return null_argument(!key ? "key" : "out");
  return guarded([&] { *out = dup_string(config->value.get(key)); });
}

cattn_status cattn_config_echo(const cattn_config* config, char** out) {
  if (!config)
    return null_argument("config");
  if (!out)
    return null_argument("out");
  return guarded([&] { *out = dup_string(config->value.echo()); });
}

void cattn_config_free(cattn_config* config) { delete config; }

cattn_status cattn_train(const cattn_config* config, cattn_epoch_fn on_epoch, void* user,
                         cattn_train_summary* summary) {
  if (!config)
    return null_argument("config");
  return guarded([&] {
    cattn::EpochCallback cb;
    if (on_epoch)
      cb = [&](const cattn::EpochLog& e) {
        const cattn_epoch c{e.epoch, e.train_loss, e.val_loss, e.val_acc};
        on_epoch(&c, user);
      };
    const auto s = cattn::run_train(config->value, cb);
    if (summary)
      *summary = {s.best_epoch,         s.best_val_loss, s.best_val_acc, s.train_records,
                  s.validation_records, s.test_records,  s.parameters};
  });
}

cattn_status cattn_model_load(const char* path, cattn_model** out) {
  if (!path)
    return null_argument("path");
  if (!out)
    return null_argument("out");
  *out = nullptr;
  return guarded([&] { *out = new cattn_model{cattn::load_checkpoint(path)}; });
}

cattn_status cattn_model_save(const cattn_model* model, const char* path) {
  if (!model)
    return null_argument("model");
  if (!path)
    return null_argument("path");
  return guarded(
      [&] { cattn::save_checkpoint(model->checkpoint.model, path, model->checkpoint.metadata); });
}

cattn_status cattn_model_info(const cattn_model* model, char** out) {
  if (!model)
    return null_argument("model");
  if (!out)
    return null_argument("out");
  return guarded([&] {
    const auto& ck = model->checkpoint;
    auto j = nlohmann::json::parse(cattn::checkpoint_to_json(ck.model, ck.metadata));
    j.erase("parameters");
    j["variant"] = std::string(cattn::variant_name(ck.model.config().variant));
    j["parameter_count"] = ck.model.parameter_count();
    *out = dup_string(j.dump(2));
  });
}

const char* cattn_model_variant(const cattn_model* model) {
  // variant_name views a static string, so the pointer stays valid.
  return model ? cattn::variant_name(model->checkpoint.model.config().variant).data() : "";
}

void cattn_model_free(cattn_model* model) { delete model; }

cattn_status cattn_metrics_from_counts(size_t tn, size_t fp, size_t fn, size_t tp,
                                       cattn_metrics* out) {
  if (!out)
    return null_argument("out");
  return guarded([&] { *out = to_c(cattn::metrics_from_counts(tn, fp, fn, tp)); });
}

cattn_status cattn_evaluate(const cattn_model* model, const cattn_corpus* corpus, const char* split,
                            size_t threads, cattn_metrics* out) {
  if (!model || !corpus)
    return null_argument(!model ? "model" : "corpus");
  if (!out)
    return null_argument("out");
  return guarded([&] {
    *out = to_c(cattn::run_evaluate(model->checkpoint, corpus->records, split ? split : "test",
                                    threads ? threads : 1));
  });
}

cattn_status cattn_metrics_json(const cattn_metrics* metrics, char** out) {
  if (!metrics || !out)
    return null_argument(!metrics ? "metrics" : "out");
  return guarded([&] { *out = dup_string(cattn::metrics_to_json(from_c(*metrics))); });
}

cattn_status cattn_metrics_table(const cattn_metrics* metrics, const char* model_name, char** out) {
  if (!metrics || !out)
    return null_argument(!metrics ? "metrics" : "out");
  return guarded([&] {
    *out = dup_string(cattn::metrics_table(from_c(*metrics), model_name ? model_name : ""));
  });
}

cattn_status cattn_predict(const cattn_model* model, const cattn_corpus* corpus, size_t index,
                           double* patient_probability) {
  if (!model || !corpus)
    return null_argument(!model ? "model" : "corpus");
  if (!patient_probability)
    return null_argument("patient_probability");
  if (index >= corpus->records.size())
    return fail(CATTN_ERR_CONFIG, "record index " + std::to_string(index) + " out of range (" +
                                      std::to_string(corpus->records.size()) + " records)");
  return guarded([&] {
    const auto& ck = model->checkpoint;
    const cattn::Sample s = cattn::make_sample(corpus->records[index], ck.model.config(),
                                               cattn::checkpoint_embedding(ck));
    const auto scored = cattn::score_samples(ck.model, std::span(&s, 1));
    *patient_probability = scored.patient_scores.front();
  });
}

void cattn_explain_defaults(cattn_explain_options* out) {
  if (!out)
    return;
  const cattn::ExplainOptions d;
  *out = {d.top_sentences, d.top_tags, 1, CATTN_FORMAT_JSON};
}

cattn_status cattn_explain(const cattn_model* model, const cattn_corpus* corpus,
                           const char* record_id, const char* split,
                           const cattn_explain_options* options, char** out) {
  if (!model || !corpus)
    return null_argument(!model ? "model" : "corpus");
  if (!out)
    return null_argument("out");
  return guarded([&] {
    cattn_explain_options o;
    cattn_explain_defaults(&o);
    if (options)
      o = *options;
    const cattn::ExplainOptions eo{o.top_sentences, o.top_tags};
    const auto run = cattn::run_explain(model->checkpoint, corpus->records,
                                        record_id ? record_id : "", split ? split : "test", eo,
                                        o.threads ? o.threads : 1);
    std::string text;
    if (o.format == CATTN_FORMAT_TEXT) {
      for (std::size_t i = 0; i < run.reports.size(); ++i)
        text += (i ? "\n" : "") + cattn::report_to_text(run.reports[i]);
      if (run.summary)
        text += "\n" + cattn::summary_to_text(*run.summary);
    } else {
      nlohmann::json j;
      j["reports"] = nlohmann::json::array();
      for (const auto& r : run.reports)
        j["reports"].push_back(nlohmann::json::parse(cattn::report_to_json(r)));
      j["summary"] = run.summary ? nlohmann::json::parse(cattn::summary_to_json(*run.summary))
                                 : nlohmann::json(nullptr);
      text = j.dump(2) + "\n";
    }
    *out = dup_string(text);
  });
}

} // extern "C"
