// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and a tape-based reverse-mode differentiator.
//
// A Tape is created per forward pass. Every operation appends a node holding
// its value and a backward rule; Tape::backward walks the nodes in reverse
// insertion order, which is a topological order by construction. Tensors that
// must receive gradients (model parameters) are bound with Tape::watch and
// their gradient is read back with Tape::grad_of after the pass.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cattn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  /// Builds a matrix from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Leading extent for rank-2 tensors; 1 for vectors.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  /// Trailing extent.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols(), cols());
  }
  double item() const;

  void fill(double v);
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

private:
  Shape shape_;
  std::vector<double> values_;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  /// Gradient after Tape::backward; zeros when the node was unreachable.
  Tensor grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A node that never receives a gradient.
  Var constant(Tensor value);
  /// A leaf that receives a gradient.
  Var leaf(Tensor value);
  /// Binds an externally owned tensor as a gradient-receiving leaf. Binding
  /// the same tensor twice returns the same node.
  Var watch(const Tensor& value);

  /// Records an operation result. `backward` receives the output gradient
  /// and must call accumulate() for each differentiable input.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a single-element node.
  void backward(const Var& loss);

  /// Adds `g` into the gradient buffer of node `id`.
  void accumulate(std::size_t id, const Tensor& g);
  /// Same, for a single element at flat index `i`.
  void accumulate_at(std::size_t id, std::size_t i, double g);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor grad(std::size_t id) const;
  /// Gradient of a tensor bound with watch(); zeros if it was never bound.
  Tensor grad_of(const Tensor& watched) const;

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> watched_;
};

// Differentiable operations. All operands must live on the same tape.
// Matrices are rank 2; vectors are represented as 1×n rows.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a[n×c] + bias[1×c] broadcast over rows.
Var add_row(const Var& a, const Var& bias);
/// Row i of a[n×c] multiplied by w[i], with w shaped [n×1].
Var scale_rows(const Var& a, const Var& w);
Var relu(const Var& a);
Var tanh(const Var& a);
Var log(const Var& a);
/// Softmax along the last axis, max-subtracted.
Var softmax(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
/// Column means of a[n×c], shaped [1×c].
Var mean_rows(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
/// Single element as a 1×1 node.
Var element(const Var& a, std::size_t r, std::size_t c);
/// Row-wise layer normalization: gain ⊙ (x − μ)/√(σ² + eps) + bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Stacks every length-k window of rows of a[n×d] into a row of the result,
/// shaped [(n−k+1) × k·d].
Var unfold_windows(const Var& a, std::size_t k);

/// Column-wise maximum of a[n×c]; `argmax` receives the winning row for each
/// column (lowest index on ties). Gradient flows to the winners only.
Var max_rows(const Var& a, std::vector<std::size_t>* argmax);

// Plain (non-recorded) helpers shared by layers and oracles.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a);

} // namespace cattn
