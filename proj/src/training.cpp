// SPDX-License-Identifier: Apache-2.0
#include "cattn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cattn/error.hpp"
#include "cattn/random.hpp"
#include "parallel.hpp"

namespace cattn {

using json = nlohmann::json;

ClassWeights ClassWeights::normalized(double control, double patient) {
  if (!(control > 0.0 && patient > 0.0 && std::isfinite(control) && std::isfinite(patient)))
    throw ConfigError("class weights must be positive and finite");
  const double s = control + patient;
  return {control / s, patient / s};
}

double weighted_cross_entropy(std::array<double, 2> probabilities, Label label,
                              const ClassWeights& weights) {
  const double p = probabilities[static_cast<int>(label)];
  return -weights.of(label) * std::log(std::max(p, kProbabilityFloor));
}

Var weighted_cross_entropy(const Var& probabilities, Label label, const ClassWeights& weights) {
  const std::size_t k = static_cast<std::size_t>(label);
  Var p = element(probabilities, 0, k);
  if (p.value().item() < kProbabilityFloor) {
    // Clamped: constant loss, no gradient.
    return p.tape()->constant(
        Tensor::scalar(-weights.of(label) * std::log(kProbabilityFloor)));
  }
  return scale(log(p), -weights.of(label));
}

void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                       double momentum) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape())
    throw ContractError("sgd step: parameter " + shape_string(param.shape()) + ", gradient " +
                        shape_string(grad.shape()) + " and velocity " +
                        shape_string(velocity.shape()) + " must share a shape");
  auto p = param.values();
  auto g = grad.values();
  auto v = velocity.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate)))
    throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("momentum must lie in [0, 1)");
  if (epochs == 0)
    throw ConfigError("epochs must be >= 1");
  if (batch_size == 0)
    throw ConfigError("batch_size must be >= 1");
  ClassWeights::normalized(class_weights.control, class_weights.patient);
}

namespace {

Label predicted_label(double patient_score) {
  return patient_score > 0.5 ? Label::Patient : Label::Control;
}

} // namespace

std::pair<double, double> loss_and_accuracy(const Model& model, std::span<const Sample> samples,
                                            const ClassWeights& weights) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (const Sample& s : samples) {
    Tape tape;
    ForwardResult r = forward(tape, model, s.input);
    const std::array<double, 2> p{r.probabilities.value()[0], r.probabilities.value()[1]};
    loss += weighted_cross_entropy(p, s.label, weights);
    if (predicted_label(p[1]) == s.label)
      ++correct;
  }
  const double n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train(const ModelConfig& model_config, std::span<const Sample> train_set,
                  std::span<const Sample> validation_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty())
    throw ConfigError("training split is empty");
  if (validation_set.empty())
    throw ConfigError("validation split is empty");
  const ClassWeights weights =
      ClassWeights::normalized(config.class_weights.control, config.class_weights.patient);

  Model model = Model::create(model_config);
  std::vector<Tensor*> params;
  model.visit_parameters([&](const std::string&, Tensor& t) { params.push_back(&t); });
  std::vector<Tensor> velocity, grads;
  for (Tensor* p : params) {
    velocity.emplace_back(p->shape());
    grads.emplace_back(p->shape());
  }

  TrainResult result{model, {}, 0};
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (Tensor& g : grads)
        g.fill(0.0);
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = train_set[order[b]];
        Tape tape;
        ForwardResult r = forward(tape, model, s.input);
        Var loss = weighted_cross_entropy(r.probabilities, s.label, weights);
        epoch_loss += loss.value().item();
        tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
          const Tensor g = tape.grad_of(*params[i]);
          auto dst = grads[i].values();
          for (std::size_t q = 0; q < dst.size(); ++q)
            dst[q] += g[q];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (double& g : grads[i].values())
          g *= inv;
        sgd_momentum_step(*params[i], grads[i], velocity[i], config.learning_rate, config.momentum);
      }
    }

    const auto [val_loss, val_acc] = loss_and_accuracy(model, validation_set, weights);
    EpochLog entry{epoch, epoch_loss / static_cast<double>(train_set.size()), val_loss, val_acc};
    result.log.push_back(entry);
    if (on_epoch)
      on_epoch(entry);
    if (val_loss < best_val) {
      best_val = val_loss;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

std::string epoch_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_acc\n";
  char buf[128];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_acc);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Metrics

MetricsReport metrics_from_counts(std::size_t tn, std::size_t fp, std::size_t fn, std::size_t tp) {
  MetricsReport m;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  m.tp = tp;
  const double total = static_cast<double>(tn + fp + fn + tp);
  m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

std::optional<double> auc_mann_whitney(std::span<const double> scores,
                                       std::span<const Label> labels) {
  if (scores.size() != labels.size())
    throw ContractError("auc: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mid-ranks over tie groups, then U = R_pos − n_pos(n_pos+1)/2.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]])
      ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q)
      if (labels[idx[q]] == Label::Patient) {
        rank_sum += mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size())
    throw ContractError("metrics: score and label counts differ");
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = predicted_label(scores[i]) == Label::Patient;
    const bool truth = labels[i] == Label::Patient;
    if (pred && truth)
      ++tp;
    else if (pred)
      ++fp;
    else if (truth)
      ++fn;
    else
      ++tn;
  }
  MetricsReport m = metrics_from_counts(tn, fp, fn, tp);
  m.auc = auc_mann_whitney(scores, labels);
  return m;
}

Scored score_samples(const Model& model, std::span<const Sample> samples, std::size_t threads) {
  Scored out;
  out.patient_scores.resize(samples.size());
  out.labels.resize(samples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Tape tape;
      ForwardResult r = forward(tape, model, samples[i].input);
      out.patient_scores[i] = r.probabilities.value()[1];
      out.labels[i] = samples[i].label;
    }
  };
  detail::parallel_for(samples.size(), threads, work);
  return out;
}

MetricsReport evaluate(const Model& model, std::span<const Sample> test_set, std::size_t threads) {
  if (test_set.empty())
    throw ConfigError("cannot evaluate on an empty test set");
  Scored s = score_samples(model, test_set, threads);
  return compute_metrics(s.patient_scores, s.labels);
}

std::string metrics_to_json(const MetricsReport& m) {
  json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["auc"] = m.auc ? json(*m.auc) : json(nullptr);
  j["tn"] = m.tn;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tp"] = m.tp;
  return j.dump(2);
}

MetricsReport metrics_from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    MetricsReport m;
    m.accuracy = j.at("accuracy").get<double>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    if (!j.at("auc").is_null())
      m.auc = j.at("auc").get<double>();
    m.tn = j.at("tn").get<std::size_t>();
    m.fp = j.at("fp").get<std::size_t>();
    m.fn = j.at("fn").get<std::size_t>();
    m.tp = j.at("tp").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw IngestionError(std::string("metrics report: ") + e.what());
  }
}

std::string metrics_table(const MetricsReport& m, std::string_view model_name) {
  const std::size_t name_w = std::max<std::size_t>(5, model_name.size());
  char buf[256];
  std::ostringstream os;
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %9s  %6s  %5s  %5s  %4s  %4s  %4s  %4s\n",
                static_cast<int>(name_w), "Model", "Accuracy", "Precision", "Recall", "F1", "AUC",
                "TN", "FP", "FN", "TP");
  os << buf;
  const std::string auc = m.auc ? [&] {
    char a[16];
    std::snprintf(a, sizeof a, "%.3f", *m.auc);
    return std::string(a);
  }()
                                : std::string("n/a");
  std::snprintf(buf, sizeof buf, "%-*s  %8.3f  %9.3f  %6.3f  %5.3f  %5s  %4zu  %4zu  %4zu  %4zu\n",
                static_cast<int>(name_w), std::string(model_name).c_str(), m.accuracy, m.precision,
                m.recall, m.f1, auc.c_str(), m.tn, m.fp, m.fn, m.tp);
  os << buf;
  return os.str();
}

} // namespace cattn
