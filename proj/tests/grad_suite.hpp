// Finite-difference cases for every differentiable op, every layer and the
// full networks. Each case builds its inputs from a seed.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cattn/model.hpp"
#include "cattn/nn.hpp"
#include "cattn/training.hpp"
#include "oracles.hpp"

namespace grad_suite {

using cattn::Rng;
using cattn::Tape;
using cattn::Tensor;
using cattn::Var;
using oracle::GradCheck;
using oracle::random_tensor;

struct Case {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

namespace detail {

// Unary op on an [r × c] input with r, c drawn from [1, 5].
inline Case unary(std::string name, std::function<Var(const Var&)> op, double lo = -2.0,
                  double hi = 2.0) {
  return {name, [op, lo, hi](std::uint64_t seed) {
            Rng rng(seed);
            Tensor x = random_tensor({1 + rng.below(5), 1 + rng.below(5)}, rng, lo, hi);
            return oracle::finite_difference(
                {&x}, [&](Tape& t) { return oracle::probe_sum(t, op(t.watch(x)), seed); }, rng);
          }};
}

inline Case binary_same(std::string name, std::function<Var(const Var&, const Var&)> op) {
  return {name, [op](std::uint64_t seed) {
            Rng rng(seed);
            const std::size_t r = 1 + rng.below(5), c = 1 + rng.below(5);
            Tensor a = random_tensor({r, c}, rng), b = random_tensor({r, c}, rng);
            return oracle::finite_difference(
                {&a, &b},
                [&](Tape& t) { return oracle::probe_sum(t, op(t.watch(a), t.watch(b)), seed); }, rng);
          }};
}

inline cattn::ModelConfig small_config(cattn::ModelVariant v, std::uint64_t seed) {
  cattn::ModelConfig c;
  c.variant = v;
  c.num_heads = 2;
  c.model_dim = 4;
  c.num_layers = 2;
  c.num_filters = 3;
  c.kernel_width = 2;
  c.utterances = 4;
  c.num_tags = 5;
  c.embedding_dim = 3;
  c.feed_forward = (seed % 2) == 1;
  c.seed = seed;
  return c;
}

inline Case architecture(cattn::ModelVariant v) {
  return {std::string(cattn::variant_name(v)), [v](std::uint64_t seed) {
            Rng rng(cattn::mix_seed(seed));
            cattn::Model model = cattn::Model::create(small_config(v, seed));
            const auto& c = model.config();
            cattn::ModelInput in;
            in.pos = random_tensor({c.num_tags, c.utterances}, rng, 0.0, 3.0);
            in.emb = random_tensor({c.utterances, c.embedding_dim}, rng, -1.0, 1.0);
            const auto label = rng.bernoulli(0.5) ? cattn::Label::Patient : cattn::Label::Control;
            std::vector<Tensor*> params;
            model.visit_parameters([&](const std::string&, Tensor& p) { params.push_back(&p); });
            return oracle::finite_difference(
                params,
                [&](Tape& t) {
                  auto r = cattn::forward(t, model, in);
                  return cattn::weighted_cross_entropy(r.probabilities, label, cattn::ClassWeights{});
                },
                rng, 6);
          }};
}

} // namespace detail

inline std::vector<Case> op_cases() {
  using namespace detail;
  std::vector<Case> cases;
  cases.push_back({"matmul", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(5), k = 1 + rng.below(5), m = 1 + rng.below(5);
                     Tensor a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng);
                     return oracle::finite_difference(
                         {&a, &b},
                         [&](Tape& t) { return oracle::probe_sum(t, matmul(t.watch(a), t.watch(b)), seed); },
                         rng);
                   }});
  cases.push_back(unary("transpose", [](const Var& x) { return cattn::transpose(x); }));
  cases.push_back(binary_same("add", [](const Var& a, const Var& b) { return cattn::add(a, b); }));
  cases.push_back(binary_same("sub", [](const Var& a, const Var& b) { return cattn::sub(a, b); }));
  cases.push_back(binary_same("mul", [](const Var& a, const Var& b) { return cattn::mul(a, b); }));
  cases.push_back(unary("scale", [](const Var& x) { return cattn::scale(x, -1.7); }));
  cases.push_back({"add_row", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(5), c = 1 + rng.below(5);
                     Tensor a = random_tensor({n, c}, rng), b = random_tensor({1, c}, rng);
                     return oracle::finite_difference(
                         {&a, &b},
                         [&](Tape& t) { return oracle::probe_sum(t, add_row(t.watch(a), t.watch(b)), seed); },
                         rng);
                   }});
  cases.push_back({"scale_rows", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(5), c = 1 + rng.below(5);
                     Tensor a = random_tensor({n, c}, rng), w = random_tensor({n, 1}, rng);
                     return oracle::finite_difference(
                         {&a, &w},
                         [&](Tape& t) { return oracle::probe_sum(t, scale_rows(t.watch(a), t.watch(w)), seed); },
                         rng);
                   }});
  cases.push_back(unary("relu", [](const Var& x) { return cattn::relu(x); }));
  cases.push_back(unary("tanh", [](const Var& x) { return cattn::tanh(x); }));
  cases.push_back(unary("log", [](const Var& x) { return cattn::log(x); }, 0.2, 2.0));
  cases.push_back(unary("softmax", [](const Var& x) { return cattn::softmax(x); }));
  cases.push_back(unary("sum", [](const Var& x) { return cattn::sum(x); }));
  cases.push_back(unary("mean", [](const Var& x) { return cattn::mean(x); }));
  cases.push_back(unary("mean_rows", [](const Var& x) { return cattn::mean_rows(x); }));
  cases.push_back(unary("concat_cols", [](const Var& x) {
    std::array<Var, 2> parts{x, cattn::scale(x, 2.0)};
    return cattn::concat_cols(parts);
  }));
  cases.push_back(unary("concat_rows", [](const Var& x) {
    std::array<Var, 3> parts{x, cattn::relu(x), x};
    return cattn::concat_rows(parts);
  }));
  cases.push_back(unary("slice_cols", [](const Var& x) { return cattn::slice_cols(x, x.cols() / 2, (x.cols() + 1) / 2); }));
  cases.push_back(unary("slice_rows", [](const Var& x) { return cattn::slice_rows(x, x.rows() / 2, (x.rows() + 1) / 2); }));
  cases.push_back(unary("element", [](const Var& x) { return cattn::element(x, x.rows() - 1, 0); }));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(5), c = 2 + rng.below(5);
                     Tensor x = random_tensor({n, c}, rng), g = random_tensor({1, c}, rng),
                            b = random_tensor({1, c}, rng);
                     return oracle::finite_difference(
                         {&x, &g, &b},
                         [&](Tape& t) {
                           return oracle::probe_sum(t, layer_norm(t.watch(x), t.watch(g), t.watch(b)), seed);
                         },
                         rng);
                   }});
  cases.push_back({"unfold_windows", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t k = 1 + rng.below(3), n = k + rng.below(4), c = 1 + rng.below(4);
                     Tensor x = random_tensor({n, c}, rng);
                     return oracle::finite_difference(
                         {&x}, [&](Tape& t) { return oracle::probe_sum(t, unfold_windows(t.watch(x), k), seed); },
                         rng);
                   }});
  cases.push_back(unary("max_rows", [](const Var& x) { return cattn::max_rows(x, nullptr); }));
  return cases;
}

inline std::vector<Case> layer_cases() {
  using namespace detail;
  std::vector<Case> cases;
  cases.push_back({"dense", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(4), in = 1 + rng.below(5), out = 1 + rng.below(5);
                     auto layer = cattn::DenseLayer::create(in, out, rng);
                     Tensor x = random_tensor({n, in}, rng);
                     return oracle::finite_difference(
                         {&x, &layer.weight, &layer.bias},
                         [&](Tape& t) { return oracle::probe_sum(t, dense_forward(t, t.watch(x), layer), seed); },
                         rng);
                   }});
  cases.push_back({"scaled_dot_attention", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(5), d = 1 + rng.below(4);
                     Tensor q = random_tensor({n, d}, rng), k = random_tensor({n, d}, rng),
                            v = random_tensor({n, d}, rng);
                     return oracle::finite_difference(
                         {&q, &k, &v},
                         [&](Tape& t) {
                           return oracle::probe_sum(
                               t, scaled_dot_attention(t.watch(q), t.watch(k), t.watch(v)).output, seed);
                         },
                         rng);
                   }});
  for (bool ff : {false, true}) {
    cases.push_back({ff ? "mha_block_ffn" : "mha_block", [ff](std::uint64_t seed) {
                       Rng rng(seed);
                       // Width 2 is left out: layer norm over two features is constant up to
                       // its epsilon, so upstream gradients sit at roundoff level.
                       const std::size_t heads = 1 + rng.below(2);
                       const std::size_t dm = heads == 1 ? 3 + rng.below(2) : 2 * (2 + rng.below(2));
                       const std::size_t n = 1 + rng.below(5);
                       auto block = cattn::MhaBlock::create(heads, dm, rng, ff);
                       Tensor x = random_tensor({n, dm}, rng);
                       std::vector<Tensor*> params{&x};
                       block.visit("b", [&](const std::string&, Tensor& p) { params.push_back(&p); });
                       return oracle::finite_difference(
                           params,
                           [&](Tape& t) { return oracle::probe_sum(t, mha_forward(t, t.watch(x), block).output, seed); },
                           rng, 8);
                     }});
  }
  cases.push_back({"mha_stack", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<cattn::MhaBlock> blocks;
                     for (int i = 0; i < 3; ++i)
                       blocks.push_back(cattn::MhaBlock::create(2, 4, rng));
                     Tensor x = random_tensor({1 + rng.below(5), 4}, rng);
                     std::vector<Tensor*> params{&x};
                     for (auto& b : blocks)
                       b.visit("b", [&](const std::string&, Tensor& p) { params.push_back(&p); });
                     return oracle::finite_difference(
                         params,
                         [&](Tape& t) { return oracle::probe_sum(t, mha_stack(t, t.watch(x), blocks).output, seed); },
                         rng, 6);
                   }});
  cases.push_back({"positional_encode", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor({1 + rng.below(6), 1 + rng.below(6)}, rng);
                     return oracle::finite_difference(
                         {&x}, [&](Tape& t) { return oracle::probe_sum(t, positional_encode(t, t.watch(x)), seed); },
                         rng);
                   }});
  cases.push_back({"position_attention", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(4);
                     auto layer = cattn::PositionAttention::create(d, rng);
                     Tensor x = random_tensor({n, d}, rng);
                     return oracle::finite_difference(
                         {&x, &layer.context},
                         [&](Tape& t) {
                           auto out = position_attention(t, t.watch(x), layer);
                           return cattn::add(oracle::probe_sum(t, out.scaled, seed),
                                             oracle::probe_sum(t, out.weights, seed + 1));
                         },
                         rng);
                   }});
  cases.push_back({"conv1d_maxpool", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t k = 1 + rng.below(3), n = k + rng.below(5), d = 1 + rng.below(3);
                     auto layer = cattn::Conv1dLayer::create(1 + rng.below(4), k, d, rng);
                     Tensor x = random_tensor({n, d}, rng);
                     return oracle::finite_difference(
                         {&x, &layer.filters, &layer.bias},
                         [&](Tape& t) { return oracle::probe_sum(t, conv1d_maxpool(t, t.watch(x), layer).features, seed); },
                         rng);
                   }});
  cases.push_back({"classify_head", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t m = 1 + rng.below(6);
                     auto head = cattn::DenseLayer::create(m, 2, rng);
                     Tensor f = random_tensor({1, m}, rng);
                     return oracle::finite_difference(
                         {&f, &head.weight, &head.bias},
                         [&](Tape& t) { return oracle::probe_sum(t, classify_head(t, t.watch(f), head), seed); },
                         rng);
                   }});
  cases.push_back({"weighted_cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor logits = random_tensor({1, 2}, rng);
                     const auto label = rng.bernoulli(0.5) ? cattn::Label::Patient : cattn::Label::Control;
                     return oracle::finite_difference(
                         {&logits},
                         [&](Tape& t) {
                           return cattn::weighted_cross_entropy(cattn::softmax(t.watch(logits)), label,
                                                                cattn::ClassWeights{});
                         },
                         rng);
                   }});
  return cases;
}

inline std::vector<Case> architecture_cases() {
  using cattn::ModelVariant;
  std::vector<Case> cases;
  for (auto v : {ModelVariant::CAttentionFt, ModelVariant::CAttentionEmbedding,
                 ModelVariant::CAttentionUnified, ModelVariant::AttentionFt,
                 ModelVariant::AttentionEmbedding, ModelVariant::AttentionUnified})
    cases.push_back(detail::architecture(v));
  return cases;
}

inline std::vector<Case> all_cases() {
  auto cases = op_cases();
  for (auto& c : layer_cases())
    cases.push_back(std::move(c));
  for (auto& c : architecture_cases())
    cases.push_back(std::move(c));
  return cases;
}

} // namespace grad_suite
