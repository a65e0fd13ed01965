// SPDX-License-Identifier: Apache-2.0
#include "cattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "cattn/error.hpp"

namespace cattn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw ContractError("operands recorded on different tapes");
  return *a.tape();
}

// c += a · b  (a: m×k, b: k×n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0)
        continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] += aip * bp[j];
    }
  }
}

// c += a · bᵀ  (a: m×k, b: n×k)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// c += aᵀ · b  (a: k×m, b: k×n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0)
        continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] += api * bp[j];
    }
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (product(shape_) != values_.size())
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c)
      throw DimensionError("ragged rows in matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  gemm_nn(a.values().data(), b.values().data(), out.values().data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor softmax(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t c = a.cols();
  const std::size_t r = a.numel() / std::max<std::size_t>(c, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = a.values().data() + i * c;
    double* y = out.values().data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < c; ++j)
      y[j] /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_)
    throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::watch(const Tensor& value) {
  if (auto it = watched_.find(&value); it != watched_.end())
    return Var(this, it->second);
  Var v = leaf(value);
  watched_.emplace(&value, v.id());
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this)
      throw ContractError("operand recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad)
    node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad)
    return;
  if (n.grad.empty())
    n.grad = Tensor(n.value.shape());
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] += src[i];
}

void Tape::accumulate_at(std::size_t id, std::size_t i, double g) {
  Node& n = nodes_[id];
  if (!n.requires_grad)
    return;
  if (n.grad.empty())
    n.grad = Tensor(n.value.shape());
  n.grad[i] += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this)
    throw ContractError("backward: loss recorded on a different tape");
  if (nodes_[loss.id()].value.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(nodes_[loss.id()].value.shape()));
  for (Node& n : nodes_)
    n.grad = Tensor();
  accumulate(loss.id(), Tensor(nodes_[loss.id()].value.shape(), 1.0));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty())
      continue;
    // The closure may append to other nodes' gradients but never reallocates
    // nodes_, so holding a copy of the gradient is enough.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

Tensor Tape::grad_of(const Tensor& watched) const {
  if (auto it = watched_.find(&watched); it != watched_.end())
    return grad(it->second);
  return Tensor(watched.shape());
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = Tensor::matrix(m, k);
      gemm_nt(g.values().data(), b.value().values().data(), ga.values().data(), m, n, k);
      tape.accumulate(a.id(), ga);
    }
    if (b.requires_grad()) {
      Tensor gb = Tensor::matrix(k, n);
      gemm_tn(a.value().values().data(), g.values().data(), gb.values().data(), k, m, n);
      tape.accumulate(b.id(), gb);
    }
  });
}

Var transpose(const Var& a) {
  require_matrix(a.value(), "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(j, i) = a.value()(i, j);
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape& tape, const Tensor& g) {
    Tensor ga = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        ga(i, j) = g(j, i);
    tape.accumulate(a.id(), ga);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] += bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a.id(), g);
    tape.accumulate(b.id(), g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a.id(), g);
    Tensor neg = g;
    for (double& x : neg.values())
      x = -x;
    tape.accumulate(b.id(), neg);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] *= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = g;
      auto bv = b.value().values();
      for (std::size_t i = 0; i < bv.size(); ++i)
        ga[i] *= bv[i];
      tape.accumulate(a.id(), ga);
    }
    if (b.requires_grad()) {
      Tensor gb = g;
      auto av = a.value().values();
      for (std::size_t i = 0; i < av.size(); ++i)
        gb[i] *= av[i];
      tape.accumulate(b.id(), gb);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& x : out.values())
    x *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& tape, const Tensor& g) {
    Tensor ga = g;
    for (double& x : ga.values())
      x *= s;
    tape.accumulate(a.id(), ga);
  });
}

Var add_row(const Var& a, const Var& bias) {
  Tape& t = same_tape(a, bias);
  require_matrix(a.value(), "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.value().numel() != c)
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) += bias.value()[j];
  return t.record(std::move(out), {a, bias}, [a, bias, r, c](Tape& tape, const Tensor& g) {
    tape.accumulate(a.id(), g);
    if (bias.requires_grad()) {
      Tensor gb(bias.shape());
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          gb[j] += g(i, j);
      tape.accumulate(bias.id(), gb);
    }
  });
}

Var scale_rows(const Var& a, const Var& w) {
  Tape& t = same_tape(a, w);
  require_matrix(a.value(), "scale_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (w.value().numel() != r)
    throw DimensionError("scale_rows: weights " + shape_string(w.shape()) + " do not match " +
                         shape_string(a.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) *= w.value()[i];
  return t.record(std::move(out), {a, w}, [a, w, r, c](Tape& tape, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          ga(i, j) *= w.value()[i];
      tape.accumulate(a.id(), ga);
    }
    if (w.requires_grad()) {
      Tensor gw(w.shape());
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          gw[i] += g(i, j) * a.value()(i, j);
      tape.accumulate(w.id(), gw);
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.values())
    x = x > 0.0 ? x : 0.0;
  return a.tape()->record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
    Tensor ga = g;
    auto av = a.value().values();
    for (std::size_t i = 0; i < av.size(); ++i)
      if (!(av[i] > 0.0))
        ga[i] = 0.0;
    tape.accumulate(a.id(), ga);
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.values())
    x = std::tanh(x);
  Tensor y = out;
  return a.tape()->record(std::move(out), {a}, [a, y](Tape& tape, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] *= 1.0 - y[i] * y[i];
    tape.accumulate(a.id(), ga);
  });
}

Var log(const Var& a) {
  Tensor out = a.value();
  for (double& x : out.values())
    x = std::log(x);
  return a.tape()->record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
    Tensor ga = g;
    auto av = a.value().values();
    for (std::size_t i = 0; i < av.size(); ++i)
      ga[i] /= av[i];
    tape.accumulate(a.id(), ga);
  });
}

Var softmax(const Var& a) {
  Tensor y = softmax(a.value());
  Tensor saved = y;
  return a.tape()->record(std::move(y), {a}, [a, saved](Tape& tape, const Tensor& g) {
    // dx = y ⊙ (g − Σ g⊙y) per row
    const std::size_t c = saved.cols();
    const std::size_t r = saved.numel() / std::max<std::size_t>(c, 1);
    Tensor ga(saved.shape());
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        dot += g[i * c + j] * saved[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] = saved[i * c + j] * (g[i * c + j] - dot);
    }
    tape.accumulate(a.id(), ga);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values())
    s += x;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& tape, const Tensor& g) {
    tape.accumulate(a.id(), Tensor(a.shape(), g.item()));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(const Var& a) {
  require_matrix(a.value(), "mean_rows");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(1, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[j] += a.value()(i, j);
  for (double& x : out.values())
    x /= static_cast<double>(r);
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape& tape, const Tensor& g) {
    Tensor ga = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        ga(i, j) = g[j] / static_cast<double>(r);
    tape.accumulate(a.id(), ga);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty())
    throw DimensionError("concat_cols: no operands");
  Tape* t = parts[0].tape();
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != r)
      throw DimensionError("concat_cols: row counts differ (" + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()) + ")");
    c += p.cols();
  }
  Tensor out = Tensor::matrix(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t->record(std::move(out), inputs, [inputs, r](Tape& tape, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t pc = p.cols();
      if (p.requires_grad()) {
        Tensor gp = Tensor::matrix(r, pc);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j)
            gp(i, j) = g(i, off + j);
        tape.accumulate(p.id(), gp);
      }
      off += pc;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty())
    throw DimensionError("concat_rows: no operands");
  Tape* t = parts[0].tape();
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.cols() != c)
      throw DimensionError("concat_rows: column counts differ (" + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()) + ")");
    r += p.rows();
  }
  std::vector<double> v;
  v.reserve(r * c);
  for (const Var& p : parts)
    v.insert(v.end(), p.value().values().begin(), p.value().values().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t->record(Tensor({r, c}, std::move(v)), inputs, [inputs, c](Tape& tape, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t n = p.rows() * c;
      if (p.requires_grad()) {
        std::vector<double> part(g.values().begin() + off, g.values().begin() + off + n);
        tape.accumulate(p.id(), Tensor(p.shape(), std::move(part)));
      }
      off += n;
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  require_matrix(a.value(), "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  if (start + count > c)
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_string(a.shape()));
  Tensor out = Tensor::matrix(r, count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out(i, j) = a.value()(i, start + j);
  return a.tape()->record(std::move(out), {a}, [a, r, c, start, count](Tape& tape, const Tensor& g) {
    Tensor ga = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j)
        ga(i, start + j) = g(i, j);
    tape.accumulate(a.id(), ga);
  });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  require_matrix(a.value(), "slice_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (start + count > r)
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_string(a.shape()));
  auto src = a.value().values().subspan(start * c, count * c);
  Tensor out({count, c}, std::vector<double>(src.begin(), src.end()));
  return a.tape()->record(std::move(out), {a}, [a, r, c, start](Tape& tape, const Tensor& g) {
    Tensor ga = Tensor::matrix(r, c);
    std::copy(g.values().begin(), g.values().end(), ga.values().begin() + start * c);
    tape.accumulate(a.id(), ga);
  });
}

Var element(const Var& a, std::size_t r, std::size_t c) {
  const std::size_t idx = r * a.cols() + c;
  if (idx >= a.value().numel())
    throw DimensionError("element: index out of range for " + shape_string(a.shape()));
  return a.tape()->record(Tensor::scalar(a.value()[idx]), {a}, [a, idx](Tape& tape, const Tensor& g) {
    tape.accumulate_at(a.id(), idx, g.item());
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  require_matrix(x.value(), "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.value().numel() != c || bias.value().numel() != c)
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_string(x.shape()));
  Tensor xhat = Tensor::matrix(r, c);
  std::vector<double> inv_std(r);
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      mu += x.value()(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.value()(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (x.value()(i, j) - mu) * inv_std[i];
      out(i, j) = gain.value()[j] * xhat(i, j) + bias.value()[j];
    }
  }
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat, inv_std, r, c](Tape& tape, const Tensor& g) {
                    if (gain.requires_grad() || bias.requires_grad()) {
                      Tensor gg(gain.shape()), gb(bias.shape());
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) {
                          gg[j] += g(i, j) * xhat(i, j);
                          gb[j] += g(i, j);
                        }
                      tape.accumulate(gain.id(), gg);
                      tape.accumulate(bias.id(), gb);
                    }
                    if (x.requires_grad()) {
                      Tensor gx = Tensor::matrix(r, c);
                      const double n = static_cast<double>(c);
                      for (std::size_t i = 0; i < r; ++i) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = g(i, j) * gain.value()[j];
                          s1 += dxh;
                          s2 += dxh * xhat(i, j);
                        }
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = g(i, j) * gain.value()[j];
                          gx(i, j) = inv_std[i] * (dxh - s1 / n - xhat(i, j) * s2 / n);
                        }
                      }
                      tape.accumulate(x.id(), gx);
                    }
                  });
}

Var unfold_windows(const Var& a, std::size_t k) {
  require_matrix(a.value(), "unfold_windows");
  const std::size_t n = a.rows(), d = a.cols();
  if (k == 0 || n < k)
    throw DimensionError("unfold_windows: sequence of length " + std::to_string(n) +
                         " is shorter than window " + std::to_string(k));
  const std::size_t w = n - k + 1;
  // Window i is the contiguous row block [i, i+k), so each output row is a
  // straight copy of k·d values.
  Tensor out = Tensor::matrix(w, k * d);
  const double* src = a.value().values().data();
  for (std::size_t i = 0; i < w; ++i)
    std::copy(src + i * d, src + (i + k) * d, out.values().data() + i * k * d);
  return a.tape()->record(std::move(out), {a}, [a, n, d, k, w](Tape& tape, const Tensor& g) {
    Tensor ga = Tensor::matrix(n, d);
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t q = 0; q < k * d; ++q)
        ga[i * d + q] += g[i * k * d + q];
    tape.accumulate(a.id(), ga);
  });
}

Var max_rows(const Var& a, std::vector<std::size_t>* argmax) {
  require_matrix(a.value(), "max_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0)
    throw DimensionError("max_rows: empty input");
  std::vector<std::size_t> best(c, 0);
  Tensor out = Tensor::matrix(1, c);
  for (std::size_t j = 0; j < c; ++j) {
    double m = a.value()(0, j);
    for (std::size_t i = 1; i < r; ++i)
      if (a.value()(i, j) > m) {
        m = a.value()(i, j);
        best[j] = i;
      }
    out[j] = m;
  }
  if (argmax)
    *argmax = best;
  return a.tape()->record(std::move(out), {a}, [a, best, c](Tape& tape, const Tensor& g) {
    for (std::size_t j = 0; j < c; ++j)
      tape.accumulate_at(a.id(), best[j] * c + j, g[j]);
  });
}

} // namespace cattn
