#include <doctest.h>

#include <cmath>
#include <string>

#include "cattn/error.hpp"
#include "cattn/pipeline.hpp"
#include "cattn/training.hpp"
#include "oracles.hpp"

using namespace cattn;

TEST_CASE("weighted cross-entropy") {
  const ClassWeights w;
  CHECK(weighted_cross_entropy({0.5, 0.5}, Label::Control, w) == doctest::Approx(0.485203).epsilon(1e-6));
  CHECK(weighted_cross_entropy({0.5, 0.5}, Label::Control, w) == doctest::Approx(0.7 * std::log(2.0)));
  CHECK(weighted_cross_entropy({0.0, 1.0}, Label::Patient, w) == 0.0);
  CHECK(weighted_cross_entropy({0.0, 1.0}, Label::Control, w) ==
        doctest::Approx(-0.7 * std::log(kProbabilityFloor)));
  CHECK(std::isfinite(weighted_cross_entropy({0.0, 1.0}, Label::Control, w)));

  Tape t;
  Var p = t.constant(Tensor::from_rows({{0.25, 0.75}}));
  CHECK(weighted_cross_entropy(p, Label::Patient, w).value().item() ==
        weighted_cross_entropy({0.25, 0.75}, Label::Patient, w));
}

TEST_CASE("class weights") {
  const auto w = ClassWeights::normalized(7, 3);
  CHECK(w.control == doctest::Approx(0.7));
  CHECK(w.patient == doctest::Approx(0.3));
  CHECK_THROWS_AS(ClassWeights::normalized(0, 1), ConfigError);
  CHECK_THROWS_AS(ClassWeights::normalized(1, -1), ConfigError);
}

TEST_CASE("sgd with momentum") {
  SUBCASE("two steps on x squared") {
    Tensor x = Tensor::scalar(1.0), v = Tensor::scalar(0.0);
    for (int step = 0; step < 2; ++step)
      sgd_momentum_step(x, Tensor::scalar(2 * x.item()), v, 0.1, 0.9);
    CHECK(x.item() == doctest::Approx(0.46).epsilon(1e-14));
    CHECK(v.item() == doctest::Approx(3.4).epsilon(1e-14));
  }
  SUBCASE("momentum zero is plain descent") {
    Tensor x = Tensor::from_rows({{1, 2}}), v = Tensor::matrix(1, 2);
    sgd_momentum_step(x, Tensor::from_rows({{1, -1}}), v, 0.5, 0.0);
    CHECK(x == Tensor::from_rows({{0.5, 2.5}}));
  }
  SUBCASE("zero gradient and velocity leave params unchanged") {
    Tensor x = Tensor::from_rows({{1, 2}}), v = Tensor::matrix(1, 2);
    sgd_momentum_step(x, Tensor::matrix(1, 2), v, 0.5, 0.9);
    CHECK(x == Tensor::from_rows({{1, 2}}));
  }
  Tensor x = Tensor::matrix(1, 2), v = Tensor::matrix(1, 2);
  CHECK_THROWS_AS(sgd_momentum_step(x, Tensor::matrix(2, 1), v, 0.1, 0.9), ContractError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.validate();
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("metric oracle rows") {
  const auto a = metrics_from_counts(19, 7, 3, 100);
  CHECK(std::abs(a.accuracy - 0.922) <= 0.0005);
  CHECK(std::abs(a.precision - 0.935) <= 0.0005);
  CHECK(std::abs(a.recall - 0.971) <= 0.0005);
  CHECK(std::abs(a.f1 - 0.952) <= 0.0005);
  CHECK(a.accuracy == doctest::Approx(0.9225).epsilon(1e-4));
  CHECK(a.precision == doctest::Approx(0.9346).epsilon(1e-4));
  CHECK(a.recall == doctest::Approx(0.9709).epsilon(1e-4));
  CHECK(a.f1 == doctest::Approx(200.0 / 210.0).epsilon(1e-12));
  CHECK(std::abs(metrics_from_counts(18, 11, 6, 94).accuracy - 0.868) <= 0.0005);
}

TEST_CASE("metrics from counts match direct formulas") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t tn = rng.below(30), fp = rng.below(30), fn = rng.below(30), tp = 1 + rng.below(30);
    const auto m = metrics_from_counts(tn, fp, fn, tp);
    const double p = double(tp) / double(tp + fp), r = double(tp) / double(tp + fn);
    REQUIRE(m.accuracy == doctest::Approx(double(tp + tn) / double(tn + fp + fn + tp)));
    REQUIRE(m.precision == doctest::Approx(p));
    REQUIRE(m.recall == doctest::Approx(r));
    REQUIRE(m.f1 == doctest::Approx(2 * p * r / (p + r)));
  }
  const auto z = metrics_from_counts(5, 0, 0, 0);
  CHECK(z.precision == 0.0);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(z.accuracy == 1.0);
}

TEST_CASE("AUC fixed cases") {
  const std::vector<Label> labels{Label::Control, Label::Control, Label::Patient, Label::Patient};
  CHECK(auc_mann_whitney(std::vector<double>{0.1, 0.2, 0.8, 0.9}, labels) == 1.0);
  CHECK(auc_mann_whitney(std::vector<double>{0.9, 0.8, 0.2, 0.1}, labels) == 0.0);
  CHECK(auc_mann_whitney(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
  CHECK_FALSE(auc_mann_whitney(std::vector<double>{0.1, 0.2}, std::vector<Label>{Label::Patient, Label::Patient})
                  .has_value());
}

TEST_CASE("AUC matches the all-pairs oracle") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> scores;
    std::vector<Label> labels;
    std::vector<int> ints;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores force ties.
      scores.push_back(static_cast<double>(rng.below(6)) / 5.0);
      ints.push_back(rng.bernoulli(0.6) ? 1 : 0);
      labels.push_back(static_cast<Label>(ints.back()));
    }
    const auto got = auc_mann_whitney(scores, labels);
    const auto want = oracle::auc_all_pairs(scores, ints);
    REQUIRE(got.has_value() == want.has_value());
    if (got)
      REQUIRE(std::abs(*got - *want) < 1e-12);
  }
}

TEST_CASE("compute_metrics thresholds at one half") {
  const std::vector<double> s{0.5, 0.51, 0.2, 0.9};
  const std::vector<Label> l{Label::Patient, Label::Patient, Label::Control, Label::Control};
  const auto m = compute_metrics(s, l);
  CHECK(m.tp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 1);
  CHECK(m.fp == 1);
}

TEST_CASE("metrics serialization") {
  auto m = metrics_from_counts(19, 7, 3, 100);
  m.auc = 0.875;
  const std::string j = metrics_to_json(m);
  CHECK(metrics_from_json(j) == m);
  CHECK(metrics_to_json(metrics_from_json(j)) == j);
  m.auc.reset();
  CHECK(metrics_from_json(metrics_to_json(m)) == m);

  const std::string table = metrics_table(metrics_from_counts(19, 7, 3, 100), "c-attention-ft");
  for (const char* col : {"Model", "Accuracy", "Precision", "Recall", "F1", "AUC", "TN", "FP", "FN", "TP"})
    CHECK(table.find(col) != std::string::npos);
  CHECK(table.find("0.922") != std::string::npos);
  CHECK(table.find("0.952") != std::string::npos);
}

namespace {

std::vector<Sample> tiny_samples(const ModelConfig& mc, std::size_t n, std::uint64_t seed, double signal) {
  SyntheticOptions o;
  o.n_records = n;
  o.seed = seed;
  o.signal_strength = signal;
  o.patient_fraction = 0.5;
  o.embedding_dim = mc.embedding_dim;
  return make_samples(generate_synthetic_corpus(o), mc,
                      EmbeddingOptions{EmbeddingProvider::Precomputed, mc.embedding_dim, 0});
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.variant = ModelVariant::CAttentionUnified;
  mc.model_dim = 8;
  mc.num_layers = 1;
  mc.num_filters = 4;
  mc.embedding_dim = 8;
  return mc;
}

} // namespace

TEST_CASE("training lowers the loss and is deterministic") {
  const ModelConfig mc = tiny_model();
  const auto train_set = tiny_samples(mc, 60, 1, 1.0);
  const auto val_set = tiny_samples(mc, 20, 2, 1.0);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 8;
  std::vector<EpochLog> seen;
  const auto a = train(mc, train_set, val_set, tc, [&](const EpochLog& e) { seen.push_back(e); });
  REQUIRE(a.log.size() == 6);
  CHECK(seen.size() == 6);
  CHECK(a.log.back().train_loss < a.log.front().train_loss);
  CHECK(a.best_epoch >= 1);
  double best = a.log[a.best_epoch - 1].val_loss;
  for (const auto& e : a.log)
    CHECK(best <= e.val_loss);
  // The returned model is the best-epoch model.
  CHECK(loss_and_accuracy(a.model, val_set, tc.class_weights).first == doctest::Approx(best).epsilon(1e-12));

  const auto b = train(mc, train_set, val_set, tc);
  CHECK(a.model == b.model);
  CHECK(epoch_log_csv(a.log) == epoch_log_csv(b.log));
  CHECK(epoch_log_csv(a.log).rfind("epoch,train_loss,val_loss,val_acc\n", 0) == 0);

  CHECK_THROWS_AS(train(mc, {}, val_set, tc), ConfigError);
  CHECK_THROWS_AS(evaluate(a.model, {}), ConfigError);
}

TEST_CASE("threaded scoring matches single-threaded") {
  const ModelConfig mc = tiny_model();
  const auto samples = tiny_samples(mc, 25, 3, 0.5);
  const Model m = Model::create(mc);
  const auto one = score_samples(m, samples, 1);
  const auto four = score_samples(m, samples, 4);
  CHECK(one.patient_scores == four.patient_scores);
  CHECK(one.labels == four.labels);
  CHECK(evaluate(m, samples, 1) == evaluate(m, samples, 3));
}
