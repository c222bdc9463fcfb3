#pragma once

// The scalar/tensor kernels behind every loss term: stabilized softmax,
// inverted dropout, mean-squared error, bidirectional KL and cross-entropy.
// These are the value-level routines; autodiff.hpp wraps them with tape
// recording.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "lrdrop/rng.hpp"
#include "lrdrop/tensor.hpp"

namespace lrdrop {

// Floor applied to any probability before it is passed to log.
inline constexpr double kProbFloor = 1e-12;

// Row-wise softmax with max-subtraction. Rows sum to 1 and the result is
// invariant under adding a constant to a row.
inline Tensor row_softmax(const Tensor& scores) {
  if (scores.ndim() != 2) throw std::invalid_argument("row_softmax: input must be 2-D");
  for (std::size_t i = 0; i < scores.numel(); ++i)
    if (std::isnan(scores[i])) throw NumericError("row_softmax: NaN input");
  const std::size_t r = scores.rows(), c = scores.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = scores.data() + i * c;
    double* po = out.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      po[j] = std::exp(row[j] - m);
      sum += po[j];
    }
    for (std::size_t j = 0; j < c; ++j) po[j] /= sum;
  }
  return out;
}

// Softmax of a flat vector (any shape, treated 1-D).
inline Tensor softmax_flat(const Tensor& logits) {
  Tensor asrow = logits.reshaped({1, logits.numel()});
  return row_softmax(asrow).reshaped(logits.shape());
}

struct DropoutResult {
  Tensor output;
  Tensor mask;  // entries in {0, 1}
};

// Inverted dropout: kept entries are scaled by 1/(1-rate) at train time so
// inference applies no correction. rate == 0 returns the input bitwise.
inline DropoutResult dropout(const Tensor& x, double rate, RngStream& rng) {
  if (!(rate >= 0.0) || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return {x, Tensor::full(x.shape(), 1.0)};
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = rng.bernoulli(keep) ? 1.0 : 0.0;
    out[i] = x[i] * mask[i] * inv_keep;
  }
  return {std::move(out), std::move(mask)};
}

// Mean over all elements of (a-b)^2.
inline double mse_mean(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse_mean");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

// 0.5 * [KL(p||q) + KL(q||p)] with probabilities floored at kProbFloor
// before any log. Exactly symmetric under argument swap.
inline double kl_bidirectional(const Tensor& p, const Tensor& q) {
  if (p.numel() != q.numel())
    throw std::invalid_argument("kl_bidirectional: length mismatch");
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (p[i] < 0.0 || q[i] < 0.0)
      throw std::invalid_argument("kl_bidirectional: negative entries");
  double kl_pq = 0.0, kl_qp = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double lp = std::log(std::max(p[i], kProbFloor));
    const double lq = std::log(std::max(q[i], kProbFloor));
    kl_pq += p[i] * (lp - lq);
    kl_qp += q[i] * (lq - lp);
  }
  return 0.5 * (kl_pq + kl_qp);
}

// log(sum(exp(v))) over a flat tensor, max-shifted.
inline double log_sum_exp(const Tensor& v) {
  double m = v[0];
  for (std::size_t i = 1; i < v.numel(); ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

// -log softmax(logits)[label], computed through log-sum-exp.
inline double cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.numel())
    throw std::invalid_argument("cross_entropy: label out of range");
  return log_sum_exp(logits) - logits[label];
}

inline std::size_t argmax_flat(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace lrdrop
