// SPDX-License-Identifier: Apache-2.0
#include "cattn/nn.hpp"

#include <cmath>

#include "cattn/error.hpp"

namespace cattn {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.values())
    x = rng.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------------------
// Dense

DenseLayer DenseLayer::create(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer d;
  d.weight = init_uniform({in, out}, in, rng);
  d.bias = init_uniform({1, out}, in, rng);
  return d;
}

void DenseLayer::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}

Var dense_forward(Tape& tape, const Var& x, const DenseLayer& layer) {
  if (x.cols() != layer.in_width())
    throw DimensionError("dense: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(layer.weight.shape()));
  return add_row(matmul(x, tape.watch(layer.weight)), tape.watch(layer.bias));
}

// ---------------------------------------------------------------------------
// Attention

AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v) {
  if (q.cols() != k.cols())
    throw DimensionError("attention: query " + shape_string(q.shape()) + " and key " +
                         shape_string(k.shape()) + " differ in d_k");
  if (k.rows() != v.rows())
    throw DimensionError("attention: key " + shape_string(k.shape()) + " and value " +
                         shape_string(v.shape()) + " differ in length");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var weights = softmax(scale(matmul(q, transpose(k)), inv));
  return {matmul(weights, v), weights.value()};
}

MhaBlock MhaBlock::create(std::size_t num_heads, std::size_t model_dim, Rng& rng,
                          bool feed_forward) {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  MhaBlock b;
  b.num_heads = num_heads;
  b.model_dim = model_dim;
  const std::size_t dk = model_dim / num_heads;
  for (std::size_t h = 0; h < num_heads; ++h) {
    b.w_q.push_back(init_uniform({model_dim, dk}, model_dim, rng));
    b.w_k.push_back(init_uniform({model_dim, dk}, model_dim, rng));
    b.w_v.push_back(init_uniform({model_dim, dk}, model_dim, rng));
  }
  b.w_o = init_uniform({model_dim, model_dim}, model_dim, rng);
  b.ln_gain = Tensor({1, model_dim}, 1.0);
  b.ln_bias = Tensor({1, model_dim}, 0.0);
  b.feed_forward = feed_forward;
  if (feed_forward) {
    b.ff_in = DenseLayer::create(model_dim, 2 * model_dim, rng);
    b.ff_out = DenseLayer::create(2 * model_dim, model_dim, rng);
    b.ff_ln_gain = Tensor({1, model_dim}, 1.0);
    b.ff_ln_bias = Tensor({1, model_dim}, 0.0);
  }
  return b;
}

void MhaBlock::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::string p = prefix + ".head" + std::to_string(h);
    f(p + ".w_q", w_q[h]);
    f(p + ".w_k", w_k[h]);
    f(p + ".w_v", w_v[h]);
  }
  f(prefix + ".w_o", w_o);
  f(prefix + ".ln_gain", ln_gain);
  f(prefix + ".ln_bias", ln_bias);
  if (feed_forward) {
    ff_in.visit(prefix + ".ff_in", f);
    ff_out.visit(prefix + ".ff_out", f);
    f(prefix + ".ff_ln_gain", ff_ln_gain);
    f(prefix + ".ff_ln_bias", ff_ln_bias);
  }
}

MhaOutput mha_forward(Tape& tape, const Var& x, const MhaBlock& block) {
  if (x.cols() != block.model_dim)
    throw DimensionError("mha: input " + shape_string(x.shape()) + " does not have d_m = " +
                         std::to_string(block.model_dim) + " columns");
  MhaOutput out;
  std::vector<Var> heads;
  heads.reserve(block.num_heads);
  for (std::size_t h = 0; h < block.num_heads; ++h) {
    Var q = matmul(x, tape.watch(block.w_q[h]));
    Var k = matmul(x, tape.watch(block.w_k[h]));
    Var v = matmul(x, tape.watch(block.w_v[h]));
    AttentionResult r = scaled_dot_attention(q, k, v);
    heads.push_back(r.output);
    out.head_weights.push_back(std::move(r.weights));
  }
  Var merged = heads.size() == 1 ? heads[0] : concat_cols(heads);
  Var y = matmul(merged, tape.watch(block.w_o));
  if (block.residual_norm)
    y = layer_norm(add(x, y), tape.watch(block.ln_gain), tape.watch(block.ln_bias));
  if (block.feed_forward) {
    Var ff = dense_forward(tape, relu(dense_forward(tape, y, block.ff_in)), block.ff_out);
    y = layer_norm(add(y, ff), tape.watch(block.ff_ln_gain), tape.watch(block.ff_ln_bias));
  }
  out.output = y;
  return out;
}

MhaStackOutput mha_stack(Tape& tape, const Var& x, std::span<const MhaBlock> blocks) {
  if (blocks.empty())
    throw ConfigError("mha stack needs at least one layer");
  MhaStackOutput out;
  Var h = x;
  for (const MhaBlock& b : blocks) {
    MhaOutput o = mha_forward(tape, h, b);
    h = o.output;
    out.layer_weights.push_back(std::move(o.head_weights));
  }
  out.output = h;
  return out;
}

// ---------------------------------------------------------------------------
// Positional encoding

Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe = Tensor::matrix(n, d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t pair = j / 2;
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(d));
      pe(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

Var positional_encode(Tape& tape, const Var& u) {
  return add(u, tape.constant(positional_encoding(u.rows(), u.cols())));
}

// ---------------------------------------------------------------------------
// Position attention

PositionAttention PositionAttention::create(std::size_t model_dim, Rng& rng) {
  return {init_uniform({model_dim, 1}, model_dim, rng)};
}

void PositionAttention::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".context", context);
}

PositionAttentionOutput position_attention(Tape& tape, const Var& x, const PositionAttention& layer) {
  if (x.cols() != layer.context.rows())
    throw DimensionError("position attention: input " + shape_string(x.shape()) +
                         " does not match context " + shape_string(layer.context.shape()));
  Var alpha = softmax(transpose(matmul(x, tape.watch(layer.context))));
  Var scaled = scale_rows(x, scale(alpha, static_cast<double>(x.rows())));
  return {alpha, scaled};
}

// ---------------------------------------------------------------------------
// Convolution + max pooling

Conv1dLayer Conv1dLayer::create(std::size_t num_filters, std::size_t width, std::size_t model_dim,
                                Rng& rng) {
  if (num_filters == 0 || width == 0)
    throw ConfigError("convolution needs at least one filter of width >= 1");
  Conv1dLayer c;
  c.num_filters = num_filters;
  c.width = width;
  c.filters = init_uniform({num_filters, width * model_dim}, width * model_dim, rng);
  c.bias = init_uniform({1, num_filters}, width * model_dim, rng);
  return c;
}

void Conv1dLayer::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".filters", filters);
  f(prefix + ".bias", bias);
}

ConvOutput conv1d_maxpool(Tape& tape, const Var& x, const Conv1dLayer& layer) {
  const std::size_t n = x.rows();
  if (n < layer.width)
    throw DimensionError("sequence too short for convolution: n = " + std::to_string(n) +
                         " < k = " + std::to_string(layer.width));
  if (x.cols() * layer.width != layer.filters.cols())
    throw DimensionError("convolution: input " + shape_string(x.shape()) +
                         " does not match filters " + shape_string(layer.filters.shape()));
  Var windows = unfold_windows(x, layer.width);
  Var scores = add_row(matmul(windows, transpose(tape.watch(layer.filters))), tape.watch(layer.bias));
  std::vector<std::size_t> argmax;
  ConvOutput out;
  out.features = max_rows(scores, &argmax);
  out.captures.reserve(argmax.size());
  for (std::size_t j = 0; j < argmax.size(); ++j)
    out.captures.push_back({j, argmax[j]});
  return out;
}

Var classify_head(Tape& tape, const Var& features, const DenseLayer& head) {
  return softmax(dense_forward(tape, features, head));
}

} // namespace cattn
