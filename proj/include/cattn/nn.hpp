// SPDX-License-Identifier: Apache-2.0
//
// Layers used by the attention/CNN classifiers. Parameters are plain Tensors
// owned by the layer structs; forward functions bind them to the tape with
// Tape::watch so the same const layer can run on many tapes concurrently.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cattn/random.hpp"
#include "cattn/tensor.hpp"

namespace cattn {

/// Visitor over (name, tensor) pairs in a fixed order; used by optimizers and
/// checkpoint I/O.
using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;

/// Uniform initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Affine map x·W + b with W [in × out] and b [1 × out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  static DenseLayer create(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_width() const { return weight.rows(); }
  std::size_t out_width() const { return weight.cols(); }
  void visit(const std::string& prefix, const ParamVisitor& f);
};

Var dense_forward(Tape& tape, const Var& x, const DenseLayer& layer);

struct AttentionResult {
  Var output;
  Tensor weights; // [n × n], rows sum to 1
};

/// softmax(Q·Kᵀ/√d_k)·V.
AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v);

/// One multi-head self-attention block. With `residual_norm` set the block
/// computes LayerNorm(x + MHA(x)); the optional feed-forward sublayer adds
/// LayerNorm(y + W₂·relu(W₁·y)).
struct MhaBlock {
  std::size_t num_heads = 0;
  std::size_t model_dim = 0;
  std::vector<Tensor> w_q, w_k, w_v; // one [d_m × d_k] per head
  Tensor w_o;                        // [d_m × d_m]
  Tensor ln_gain, ln_bias;           // [1 × d_m]
  bool residual_norm = true;
  bool feed_forward = false;
  DenseLayer ff_in, ff_out;
  Tensor ff_ln_gain, ff_ln_bias;

  /// Throws ConfigError unless num_heads divides model_dim.
  static MhaBlock create(std::size_t num_heads, std::size_t model_dim, Rng& rng,
                         bool feed_forward = false);
  std::size_t head_dim() const { return model_dim / num_heads; }
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct MhaOutput {
  Var output;
  std::vector<Tensor> head_weights;
};

MhaOutput mha_forward(Tape& tape, const Var& x, const MhaBlock& block);

struct MhaStackOutput {
  Var output;
  std::vector<std::vector<Tensor>> layer_weights; // [layer][head] -> [n × n]
};

/// Applies every block in order. An empty stack is a ConfigError.
MhaStackOutput mha_stack(Tape& tape, const Var& x, std::span<const MhaBlock> blocks);

/// Sinusoidal table: PE(pos, 2i) = sin(pos/10000^(2i/d)), PE(pos, 2i+1) = cos(...).
Tensor positional_encoding(std::size_t n, std::size_t d);
Var positional_encode(Tape& tape, const Var& u);

struct PositionAttention {
  Tensor context; // [d_m × 1]

  static PositionAttention create(std::size_t model_dim, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct PositionAttentionOutput {
  Var weights; // [1 × n], softmax(x·c)
  Var scaled;  // row i is n·α_i·x_i
};

PositionAttentionOutput position_attention(Tape& tape, const Var& x, const PositionAttention& layer);

struct Capture {
  std::size_t filter = 0;
  std::size_t window_start = 0;

  bool operator==(const Capture&) const = default;
};

/// `num_filters` filters of width `width` over d_m-wide rows. Filter j is row
/// j of `filters`, laid out as k consecutive d_m-blocks (window offset major).
struct Conv1dLayer {
  std::size_t num_filters = 0;
  std::size_t width = 0;
  Tensor filters; // [m × k·d_m]
  Tensor bias;    // [1 × m]

  static Conv1dLayer create(std::size_t num_filters, std::size_t width, std::size_t model_dim,
                            Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct ConvOutput {
  Var features; // [1 × m]
  std::vector<Capture> captures;
};

/// Valid 1-D convolution followed by max pooling over all windows. Throws
/// DimensionError when the sequence is shorter than the filter width.
ConvOutput conv1d_maxpool(Tape& tape, const Var& x, const Conv1dLayer& layer);

/// softmax(dense(features)); a [1 × 2] probability row for two classes.
Var classify_head(Tape& tape, const Var& features, const DenseLayer& head);

} // namespace cattn
