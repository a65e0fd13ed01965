// SPDX-License-Identifier: Apache-2.0
//
// Run-level orchestration behind the command-line tool: configuration
// documents, corpus → sample conversion, and the generate / train / evaluate
// / explain operations.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cattn/explain.hpp"
#include "cattn/features.hpp"
#include "cattn/model.hpp"
#include "cattn/training.hpp"

namespace cattn {

/// Every tunable of a run. Defaults follow the reference experiment setup
/// (6 attention layers, 17 utterances, 7:3 class weights, 81/9/10 split);
/// sizes the setup leaves open default to small desk-scale values.
struct RunConfig {
  std::string variant = "c-attention-unified";
  std::string corpus = "corpus.jsonl";
  std::string checkpoint = "model.json";
  std::string epoch_log = "epochs.csv";
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 42;

  std::size_t utterances = 17;
  std::size_t num_layers = 6;
  std::size_t num_heads = 2;
  std::size_t model_dim = 32;
  std::size_t num_filters = 16;
  std::size_t kernel_width = 3;
  bool feed_forward = false;
  bool tag_identity = true;

  std::string embedding_provider = "auto"; // auto | precomputed | hash-projection
  std::size_t embedding_dim = 64;          // hash-projection width
  std::uint64_t embedding_seed = 0x5eed;

  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double class_weight_control = 0.7;
  double class_weight_patient = 0.3;

  std::size_t threads = 1;

  /// Assigns one key from its textual value. Unknown keys and malformed
  /// values are ConfigErrors.
  void set(std::string_view key, std::string_view value);
  /// All keys in canonical order.
  static const std::vector<std::string>& keys();
  std::string get(std::string_view key) const;
  /// `key = value` lines for every key, in canonical order.
  std::string echo() const;

  void validate() const;
  TrainConfig train_config() const;
  ModelConfig model_config(std::size_t embedding_dim) const;
};

/// Parses `key = value` lines; `#` starts a comment, values may be quoted.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

/// Resolves the provider for a corpus: `auto` picks precomputed embeddings
/// when every record carries them.
EmbeddingOptions resolve_embedding(const RunConfig& config, const std::vector<Record>& records);

/// Embedding settings a checkpoint was trained with.
EmbeddingOptions checkpoint_embedding(const Checkpoint& checkpoint);

Sample make_sample(const Record& record, const ModelConfig& config, const EmbeddingOptions& emb);
std::vector<Sample> make_samples(const std::vector<Record>& records, const ModelConfig& config,
                                 const EmbeddingOptions& emb);

struct GenerateSummary {
  std::size_t control = 0;
  std::size_t patient = 0;
};

GenerateSummary run_generate(const SyntheticOptions& options, const std::string& out_path);

struct TrainSummary {
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double best_val_acc = 0.0;
  std::size_t train_records = 0, validation_records = 0, test_records = 0;
  std::size_t parameters = 0;
};

/// Trains per `config`, writes the checkpoint and the CSV epoch log.
TrainSummary run_train(const RunConfig& config, const EpochCallback& on_epoch = {});

/// Selects `train`, `validation`, `test` or `all` records of a corpus using
/// the split seed recorded in the checkpoint.
std::vector<Record> select_split(const std::vector<Record>& records, const Checkpoint& checkpoint,
                                 std::string_view split);

MetricsReport run_evaluate(const Checkpoint& checkpoint, const std::vector<Record>& corpus,
                           std::string_view split = "test", std::size_t threads = 1);

struct ExplainRun {
  std::vector<ExplanationReport> reports;
  std::optional<CorpusExplanationSummary> summary; // only for whole-split runs
};

/// One record by id (searched in the whole corpus) or, when `record_id` is
/// empty, every record of `split` plus the corpus summary.
ExplainRun run_explain(const Checkpoint& checkpoint, const std::vector<Record>& corpus,
                       std::string_view record_id, std::string_view split = "test",
                       const ExplainOptions& options = {}, std::size_t threads = 1);

} // namespace cattn
