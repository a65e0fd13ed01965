// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cattn/features.hpp"
#include "cattn/model.hpp"

namespace cattn {

/// Per-class loss weights, normalized to sum to 1. The default 7:3 ratio
/// favours the minority (control) class.
struct ClassWeights {
  double control = 0.7;
  double patient = 0.3;

  /// Throws ConfigError unless both are positive and finite.
  static ClassWeights normalized(double control, double patient);
  double of(Label label) const { return label == Label::Control ? control : patient; }
};

inline constexpr double kProbabilityFloor = 1e-12;

/// −w_label · log(max(p_label, 1e-12)).
double weighted_cross_entropy(std::array<double, 2> probabilities, Label label,
                              const ClassWeights& weights);
/// Recorded variant; `probabilities` is a [1 × 2] node.
Var weighted_cross_entropy(const Var& probabilities, Label label, const ClassWeights& weights);

/// v ← momentum·v + grad; param ← param − lr·v.
void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                       double momentum);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  ClassWeights class_weights;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One record turned into model inputs.
struct Sample {
  std::string id;
  Label label = Label::Control;
  ModelInput input;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Model model;              // parameters of the best validation-loss epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch SGD with momentum on the weighted cross-entropy. Batch
/// gradients are averaged over the batch. Deterministic for a fixed config.
TrainResult train(const ModelConfig& model_config, std::span<const Sample> train_set,
                  std::span<const Sample> validation_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Mean weighted loss and accuracy of `model` over `samples`.
std::pair<double, double> loss_and_accuracy(const Model& model, std::span<const Sample> samples,
                                            const ClassWeights& weights);

std::string epoch_log_csv(std::span<const EpochLog> log);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc; // absent for single-class sets
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;

  std::size_t total() const { return tn + fp + fn + tp; }
  bool operator==(const MetricsReport&) const = default;
};

/// Accuracy/precision/recall/F1 from a confusion matrix; the patient class is
/// positive. Precision and recall are 0 when their denominator is 0.
MetricsReport metrics_from_counts(std::size_t tn, std::size_t fp, std::size_t fn, std::size_t tp);

/// Mann-Whitney AUC of patient-class scores; ties count 1/2. Absent when
/// either class is missing.
std::optional<double> auc_mann_whitney(std::span<const double> patient_scores,
                                       std::span<const Label> labels);

/// Full report; a record is predicted patient when its patient probability
/// exceeds 0.5.
MetricsReport compute_metrics(std::span<const double> patient_scores, std::span<const Label> labels);

struct Scored {
  std::vector<double> patient_scores;
  std::vector<Label> labels;
};

/// Inference over samples, optionally sharded across `threads` workers.
/// Results are ordered as the input regardless of thread count.
Scored score_samples(const Model& model, std::span<const Sample> samples, std::size_t threads = 1);

MetricsReport evaluate(const Model& model, std::span<const Sample> test_set, std::size_t threads = 1);

std::string metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(std::string_view text);
/// Aligned table in the column order
/// Model | Accuracy | Precision | Recall | F1 | AUC | TN | FP | FN | TP.
std::string metrics_table(const MetricsReport& m, std::string_view model_name);

} // namespace cattn
