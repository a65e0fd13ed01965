// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's numeric kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "cattn/nn.hpp"
#include "cattn/random.hpp"
#include "cattn/tensor.hpp"

namespace oracle {

using cattn::Tensor;

inline Tensor random_tensor(cattn::Shape shape, cattn::Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values())
    v = rng.uniform(lo, hi);
  return t;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  return out;
}

/// Row softmax in long double without max subtraction (inputs are kept in a
/// range where exp does not overflow).
inline std::vector<std::vector<long double>> softmax_ld(const Tensor& a) {
  std::vector<std::vector<long double>> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < a.cols(); ++j)
      z += std::exp(static_cast<long double>(a(i, j)));
    for (std::size_t j = 0; j < a.cols(); ++j)
      out[i].push_back(std::exp(static_cast<long double>(a(i, j))) / z);
  }
  return out;
}

struct ConvReference {
  std::vector<double> features;
  std::vector<std::size_t> argmax;
};

/// Every valid window of every filter evaluated directly; lowest start wins
/// ties.
inline ConvReference conv_exhaustive(const Tensor& x, const cattn::Conv1dLayer& layer) {
  const std::size_t n = x.rows(), d = x.cols(), k = layer.width;
  ConvReference ref;
  for (std::size_t f = 0; f < layer.num_filters; ++f) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t where = 0;
    for (std::size_t s = 0; s + k <= n; ++s) {
      long double acc = layer.bias[f];
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < d; ++c)
          acc += static_cast<long double>(layer.filters(f, r * d + c)) * x(s + r, c);
      const double v = static_cast<double>(acc);
      if (v > best) {
        best = v;
        where = s;
      }
    }
    ref.features.push_back(best);
    ref.argmax.push_back(where);
  }
  return ref;
}

/// AUC as the fraction of (patient, control) pairs ranked correctly, ties
/// counting one half.
inline std::optional<double> auc_all_pairs(const std::vector<double>& scores,
                                           const std::vector<int>& labels) {
  double good = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        ++pairs;
        if (scores[i] > scores[j])
          good += 1;
        else if (scores[i] == scores[j])
          good += 0.5;
      }
  if (pairs == 0)
    return std::nullopt;
  return good / static_cast<double>(pairs);
}

/// A scalar loss built on a fresh tape; tensors it reads through
/// Tape::watch are the ones checked.
using LossBuilder = std::function<cattn::Var(cattn::Tape&)>;

/// Σ out ⊙ R for a fixed random R, so every output element matters.
inline cattn::Var probe_sum(cattn::Tape& tape, const cattn::Var& out, std::uint64_t seed) {
  cattn::Rng rng(seed);
  Tensor r = random_tensor(out.shape(), rng, -1.0, 1.0);
  return cattn::sum(cattn::mul(out, tape.constant(std::move(r))));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Central finite differences (step 1e-5) against the tape gradient. The
/// error per tensor is ‖a − n‖ / (‖a‖ + ‖n‖) over the probed entries;
/// `max_probes` entries per tensor are sampled when the tensor is larger.
inline GradCheck finite_difference(const std::vector<Tensor*>& params, const LossBuilder& loss,
                                   cattn::Rng& rng, std::size_t max_probes = 24) {
  constexpr double eps = 1e-5;
  std::vector<Tensor> analytic;
  {
    cattn::Tape tape;
    cattn::Var l = loss(tape);
    tape.backward(l);
    for (Tensor* p : params)
      analytic.push_back(tape.grad_of(*p));
  }
  auto eval = [&] {
    cattn::Tape tape;
    return loss(tape).value().item();
  };

  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    std::vector<std::size_t> idx;
    if (p.numel() <= max_probes) {
      for (std::size_t i = 0; i < p.numel(); ++i)
        idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_probes; ++i)
        idx.push_back(static_cast<std::size_t>(rng.below(p.numel())));
    }
    long double diff = 0, na = 0, nn = 0;
    for (std::size_t i : idx) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = eval();
      p[i] = saved - eps;
      const double down = eval();
      p[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[t][i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double denom = static_cast<double>(std::sqrt(na) + std::sqrt(nn));
    const double err = denom < 1e-10 ? 0.0 : static_cast<double>(std::sqrt(diff)) / denom;
    out.max_rel_error = std::max(out.max_rel_error, err);
    out.entries += idx.size();
  }
  return out;
}

} // namespace oracle
