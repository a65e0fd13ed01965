// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cattn/cattn.h"

namespace {

struct CString {
  char* p = nullptr;
  ~CString() { cattn_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct ConfigHandle {
  cattn_config* p = nullptr;
  ~ConfigHandle() { cattn_config_free(p); }
};
struct ModelHandle {
  cattn_model* p = nullptr;
  ~ModelHandle() { cattn_model_free(p); }
};
struct CorpusHandle {
  cattn_corpus* p = nullptr;
  ~CorpusHandle() { cattn_corpus_free(p); }
};

struct Failure {
  cattn_status status;
};

void check(cattn_status s) {
  if (s != CATTN_OK)
    throw Failure{s};
}

int run_generate(const cattn_synthetic_options& o, const std::string& out) {
  size_t control = 0, patient = 0;
  check(cattn_generate_corpus(&o, out.c_str(), &control, &patient));
  std::printf("wrote %zu records to %s: control %zu, patient %zu\n", control + patient, out.c_str(),
              control, patient);
  return 0;
}

void print_epoch(const cattn_epoch* e, void*) {
  std::fprintf(stderr, "epoch %3zu  train_loss %.6f  val_loss %.6f  val_acc %.4f\n", e->epoch,
               e->train_loss, e->val_loss, e->val_acc);
}

std::string config_value(const ConfigHandle& c, const char* key) {
  CString v;
  check(cattn_config_get(c.p, key, &v.p));
  return v.str();
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides, bool quiet) {
  ConfigHandle config;
  if (config_path.empty())
    check(cattn_config_new(&config.p));
  else
    check(cattn_config_load(config_path.c_str(), &config.p));
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    check(cattn_config_set(config.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }

  CString echo;
  check(cattn_config_echo(config.p, &echo.p));
  std::fprintf(stderr, "resolved config: h=%s L=%s weights %s/%s\n%s",
               config_value(config, "num_layers").c_str(),
               config_value(config, "utterances").c_str(),
               config_value(config, "class_weight_control").c_str(),
               config_value(config, "class_weight_patient").c_str(), echo.str().c_str());

  cattn_train_summary s{};
  check(cattn_train(config.p, quiet ? nullptr : print_epoch, nullptr, &s));
  std::printf("best epoch %zu: val_loss %.6f val_acc %.4f (train %zu, validation %zu, test %zu, "
              "%zu parameters) -> %s\n",
              s.best_epoch, s.best_val_loss, s.best_val_acc, s.train_records, s.validation_records,
              s.test_records, s.parameters, config_value(config, "checkpoint").c_str());
  return 0;
}

void load_inputs(const std::string& checkpoint, const std::string& corpus, ModelHandle& m,
                 CorpusHandle& c) {
  check(cattn_model_load(checkpoint.c_str(), &m.p));
  check(cattn_corpus_load(corpus.c_str(), &c.p));
}

int run_evaluate(const std::string& checkpoint, const std::string& corpus, const std::string& split,
                 std::size_t threads, const std::string& format) {
  ModelHandle model;
  CorpusHandle data;
  load_inputs(checkpoint, corpus, model, data);
  cattn_metrics metrics{};
  check(cattn_evaluate(model.p, data.p, split.c_str(), threads, &metrics));

  if (format != "table") {
    CString json;
    check(cattn_metrics_json(&metrics, &json.p));
    std::printf("%s\n", json.str().c_str());
  }
  if (format != "json") {
    CString table;
    check(cattn_metrics_table(&metrics, cattn_model_variant(model.p), &table.p));
    std::printf("%s", table.str().c_str());
  }
  return 0;
}

int run_explain(const std::string& checkpoint, const std::string& corpus, const std::string& record,
                const std::string& split, bool text, const cattn_explain_options& base) {
  ModelHandle model;
  CorpusHandle data;
  load_inputs(checkpoint, corpus, model, data);
  cattn_explain_options o = base;
  o.format = text ? CATTN_FORMAT_TEXT : CATTN_FORMAT_JSON;
  CString out;
  check(cattn_explain(model.p, data.p, record.c_str(), split.c_str(), &o, &out.p));
  std::printf("%s", out.str().c_str());
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention/CNN transcript classifier"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cattn_version()));

  cattn_synthetic_options gen;
  cattn_synthetic_defaults(&gen);
  std::string gen_out = "corpus.jsonl";
  auto* generate = app.add_subcommand("generate", "write a synthetic JSONL corpus");
  generate->add_option("-n,--n", gen.n_records, "number of records")->capture_default_str();
  generate->add_option("--patient-fraction", gen.patient_fraction)->capture_default_str();
  generate->add_option("--signal", gen.signal_strength, "class signal strength in [0, 1]")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--embedding-dim", gen.embedding_dim, "0 omits embeddings")
      ->capture_default_str();
  generate->add_option("-o,--out", gen_out)->capture_default_str();

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model and write its checkpoint");
  train->add_option("config", config_path, "key = value config file (defaults if omitted)");
  train->add_option("--set", overrides, "override one config key (key=value)");
  train->add_flag("-q,--quiet", quiet, "no per-epoch progress");

  std::string checkpoint = "model.json", corpus = "corpus.jsonl", split = "test", format = "both";
  std::size_t threads = 1;
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a corpus split");
  evaluate->add_option("--checkpoint", checkpoint)->capture_default_str();
  evaluate->add_option("--corpus", corpus)->capture_default_str();
  evaluate->add_option("--split", split, "train, validation, test or all")->capture_default_str();
  evaluate->add_option("--threads", threads)->capture_default_str();
  evaluate->add_option("--format", format)
      ->check(CLI::IsMember({"json", "table", "both"}))
      ->capture_default_str();

  std::string record;
  bool all = false, text = false;
  cattn_explain_options explain_opts;
  cattn_explain_defaults(&explain_opts);
  auto* explain = app.add_subcommand("explain", "attention and capture report for records");
  explain->add_option("--checkpoint", checkpoint)->capture_default_str();
  explain->add_option("--corpus", corpus)->capture_default_str();
  auto* record_opt = explain->add_option("--record", record, "record id");
  auto* all_opt = explain->add_flag("--all", all, "every record of --split plus a summary");
  record_opt->excludes(all_opt);
  explain->add_option("--split", split)->capture_default_str();
  explain->add_flag("--text", text, "plain-text instead of JSON");
  explain->add_option("--top-sentences", explain_opts.top_sentences)->capture_default_str();
  explain->add_option("--top-tags", explain_opts.top_tags)->capture_default_str();
  explain->add_option("--threads", explain_opts.threads)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*generate)
      return run_generate(gen, gen_out);
    if (*train)
      return run_train(config_path, overrides, quiet);
    if (*evaluate)
      return run_evaluate(checkpoint, corpus, split, threads, format);
    if (*explain) {
      if (record.empty() && !all) {
        std::fprintf(stderr, "error: explain needs --record ID or --all\n");
        return 2;
      }
      return run_explain(checkpoint, corpus, record, split, text, explain_opts);
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", cattn_status_name(f.status), cattn_last_error());
    return 1;
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
