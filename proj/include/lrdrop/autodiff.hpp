#pragma once

// Reverse-mode differentiation over Tensor values. A Tape records every
// operation in application order; backward() walks the record once in
// reverse and accumulates gradients into the parameter leaves. Gradients
// flow through every argument of every op — there is no stop-gradient.
//
// A tape is single-owner and single-use: after backward() it is consumed.

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lrdrop/ops.hpp"
#include "lrdrop/tensor.hpp"

namespace lrdrop {

class Tape;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;                      // same shape as value, zero until backward
  std::function<void()> backward;   // empty for leaves and constants
  std::string param_name;           // non-empty for parameter leaves
};
}  // namespace detail

// Lightweight handle to a node owned by a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return n_ != nullptr; }
  const Tensor& value() const { return node().value; }
  const Tensor& grad() const { return node().grad; }

  double scalar() const {
    if (value().numel() != 1) throw std::invalid_argument("Var::scalar: not a scalar node");
    return value()[0];
  }

 private:
  friend class Tape;
  explicit Var(detail::Node* n) : n_(n) {}
  detail::Node& node() const {
    if (!n_) throw std::logic_error("Var: empty handle");
    return *n_;
  }
  detail::Node* n_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Non-differentiable input.
  Var constant(Tensor v) { return wrap(make(std::move(v))); }

  // Parameter leaf; gradients surface in backward()'s map under `name`.
  Var leaf(const std::string& name, Tensor v) {
    if (name.empty()) throw std::invalid_argument("Tape::leaf: empty name");
    for (const auto* l : leaves_)
      if (l->param_name == name) throw std::invalid_argument("Tape::leaf: duplicate name " + name);
    detail::Node* n = make(std::move(v));
    n->param_name = name;
    leaves_.push_back(n);
    return wrap(n);
  }

  Var add(Var a, Var b) {
    detail::Node *pa = a.n_, *pb = b.n_;
    detail::Node* n = make(lrdrop::add(pa->value, pb->value));
    n->backward = [n, pa, pb] {
      accumulate(pa->grad, n->grad);
      accumulate(pb->grad, n->grad);
    };
    return wrap(n);
  }

  Var mul(Var a, Var b) {
    detail::Node *pa = a.n_, *pb = b.n_;
    detail::Node* n = make(lrdrop::mul(pa->value, pb->value));
    n->backward = [n, pa, pb] {
      for (std::size_t i = 0; i < n->grad.numel(); ++i) {
        pa->grad[i] += n->grad[i] * pb->value[i];
        pb->grad[i] += n->grad[i] * pa->value[i];
      }
    };
    return wrap(n);
  }

  Var scale(Var a, double c) {
    detail::Node* pa = a.n_;
    detail::Node* n = make(lrdrop::scale(pa->value, c));
    n->backward = [n, pa, c] {
      for (std::size_t i = 0; i < n->grad.numel(); ++i) pa->grad[i] += c * n->grad[i];
    };
    return wrap(n);
  }

  Var matmul(Var a, Var b) {
    detail::Node *pa = a.n_, *pb = b.n_;
    detail::Node* n = make(lrdrop::matmul(pa->value, pb->value));
    n->backward = [n, pa, pb] {
      accumulate(pa->grad, lrdrop::matmul_nt(n->grad, pb->value));
      accumulate(pb->grad, lrdrop::matmul_tn(pa->value, n->grad));
    };
    return wrap(n);
  }

  // a · bᵀ
  Var matmul_nt(Var a, Var b) {
    detail::Node *pa = a.n_, *pb = b.n_;
    detail::Node* n = make(lrdrop::matmul_nt(pa->value, pb->value));
    n->backward = [n, pa, pb] {
      accumulate(pa->grad, lrdrop::matmul(n->grad, pb->value));
      accumulate(pb->grad, lrdrop::matmul_tn(n->grad, pa->value));
    };
    return wrap(n);
  }

  // m (r×c) + v (c) broadcast over rows.
  Var add_rowvec(Var m, Var v) {
    detail::Node *pm = m.n_, *pv = v.n_;
    const Tensor& mv = pm->value;
    const Tensor& vv = pv->value;
    if (mv.ndim() != 2 || vv.numel() != mv.cols())
      throw std::invalid_argument("add_rowvec: incompatible shapes");
    Tensor out = mv;
    for (std::size_t i = 0; i < mv.rows(); ++i)
      for (std::size_t j = 0; j < mv.cols(); ++j) out.at(i, j) += vv[j];
    detail::Node* n = make(std::move(out));
    n->backward = [n, pm, pv] {
      accumulate(pm->grad, n->grad);
      for (std::size_t i = 0; i < n->grad.rows(); ++i)
        for (std::size_t j = 0; j < n->grad.cols(); ++j) pv->grad[j] += n->grad.at(i, j);
    };
    return wrap(n);
  }

  Var relu(Var a) {
    detail::Node* pa = a.n_;
    detail::Node* n = make(lrdrop::relu(pa->value));
    n->backward = [n, pa] {
      for (std::size_t i = 0; i < n->grad.numel(); ++i)
        if (pa->value[i] > 0.0) pa->grad[i] += n->grad[i];
    };
    return wrap(n);
  }

  Var row_softmax(Var a) {
    detail::Node* pa = a.n_;
    detail::Node* n = make(lrdrop::row_softmax(pa->value));
    n->backward = [n, pa] {
      const std::size_t r = n->value.rows(), c = n->value.cols();
      for (std::size_t i = 0; i < r; ++i) {
        const double* p = n->value.data() + i * c;
        const double* g = n->grad.data() + i * c;
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += g[j] * p[j];
        double* da = pa->grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) da[j] += p[j] * (g[j] - s);
      }
    };
    return wrap(n);
  }

  // Per-row normalization with learnable gain/bias (both length cols).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
    detail::Node *px = x.n_, *pg = gain.n_, *pb = bias.n_;
    const Tensor& xv = px->value;
    if (xv.ndim() != 2 || pg->value.numel() != xv.cols() || pb->value.numel() != xv.cols())
      throw std::invalid_argument("layer_norm: incompatible shapes");
    const std::size_t r = xv.rows(), c = xv.cols();
    Tensor xhat({r, c});
    Tensor inv_std({r});
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      const double* xi = xv.data() + i * c;
      double mean = 0.0;
      for (std::size_t j = 0; j < c; ++j) mean += xi[j];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xi[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[i] = is;
      for (std::size_t j = 0; j < c; ++j) {
        xhat.at(i, j) = (xi[j] - mean) * is;
        out.at(i, j) = pg->value[j] * xhat.at(i, j) + pb->value[j];
      }
    }
    detail::Node* n = make(std::move(out));
    n->backward = [n, px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const std::size_t r = n->grad.rows(), c = n->grad.cols();
      for (std::size_t i = 0; i < r; ++i) {
        const double* gy = n->grad.data() + i * c;
        const double* xh = xhat.data() + i * c;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dxh = gy[j] * pg->value[j];
          m1 += dxh;
          m2 += dxh * xh[j];
          pg->grad[j] += gy[j] * xh[j];
          pb->grad[j] += gy[j];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        double* dx = px->grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
          const double dxh = gy[j] * pg->value[j];
          dx[j] += (dxh - m1 - xh[j] * m2) * inv_std[i];
        }
      }
    };
    return wrap(n);
  }

  // out[i, :] = table[ids[i], :]
  Var gather_rows(Var table, std::vector<int> ids) {
    detail::Node* pt = table.n_;
    const Tensor& tv = pt->value;
    if (tv.ndim() != 2) throw std::invalid_argument("gather_rows: table must be 2-D");
    const std::size_t c = tv.cols();
    Tensor out({ids.size(), c});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
        throw std::invalid_argument("gather_rows: id out of range");
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) = tv.at(static_cast<std::size_t>(ids[i]), j);
    }
    detail::Node* n = make(std::move(out));
    n->backward = [n, pt, ids = std::move(ids)] {
      const std::size_t c = n->grad.cols();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          pt->grad.at(static_cast<std::size_t>(ids[i]), j) += n->grad.at(i, j);
    };
    return wrap(n);
  }

  // Submatrix a[r0 : r0+nr, c0 : c0+nc].
  Var block(Var a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
    detail::Node* pa = a.n_;
    const Tensor& av = pa->value;
    if (av.ndim() != 2 || r0 + nr > av.rows() || c0 + nc > av.cols() || nr == 0 || nc == 0)
      throw std::invalid_argument("block: region out of range");
    Tensor out({nr, nc});
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) out.at(i, j) = av.at(r0 + i, c0 + j);
    detail::Node* n = make(std::move(out));
    n->backward = [n, pa, r0, nr, c0, nc] {
      for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < nc; ++j) pa->grad.at(r0 + i, c0 + j) += n->grad.at(i, j);
    };
    return wrap(n);
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t r = parts.front().value().rows();
    std::size_t c = 0;
    for (const Var& p : parts) {
      if (p.value().ndim() != 2 || p.value().rows() != r)
        throw std::invalid_argument("concat_cols: row mismatch");
      c += p.value().cols();
    }
    Tensor out({r, c});
    std::vector<detail::Node*> srcs;
    std::size_t off = 0;
    for (const Var& p : parts) {
      const Tensor& pv = p.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, off + j) = pv.at(i, j);
      srcs.push_back(p.n_);
      off += pv.cols();
    }
    detail::Node* n = make(std::move(out));
    n->backward = [n, srcs = std::move(srcs)] {
      std::size_t off = 0;
      for (detail::Node* src : srcs) {
        const std::size_t pc = src->value.cols();
        for (std::size_t i = 0; i < src->value.rows(); ++i)
          for (std::size_t j = 0; j < pc; ++j) src->grad.at(i, j) += n->grad.at(i, off + j);
        off += pc;
      }
    };
    return wrap(n);
  }

  // Weighted sum of rows: out (1×c), out[0, j] = sum_i w[i] * a[i, j].
  Var pool_rows(Var a, std::vector<double> w) {
    detail::Node* pa = a.n_;
    const Tensor& av = pa->value;
    if (av.ndim() != 2 || w.size() != av.rows())
      throw std::invalid_argument("pool_rows: weight length mismatch");
    Tensor out({1, av.cols()});
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) out.at(0, j) += w[i] * av.at(i, j);
    detail::Node* n = make(std::move(out));
    n->backward = [n, pa, w = std::move(w)] {
      for (std::size_t i = 0; i < pa->grad.rows(); ++i)
        for (std::size_t j = 0; j < pa->grad.cols(); ++j)
          pa->grad.at(i, j) += w[i] * n->grad.at(0, j);
    };
    return wrap(n);
  }

  // Scalar node: -log softmax(logits)[label].
  Var cross_entropy(Var logits, std::size_t label) {
    detail::Node* pl = logits.n_;
    const double v = lrdrop::cross_entropy(pl->value, label);
    detail::Node* n = make(Tensor({1}, {v}));
    n->backward = [n, pl, label] {
      const Tensor p = softmax_flat(pl->value);
      const double g = n->grad[0];
      for (std::size_t i = 0; i < pl->grad.numel(); ++i)
        pl->grad[i] += g * (p[i] - (i == label ? 1.0 : 0.0));
    };
    return wrap(n);
  }

  Var mse_mean(Var a, Var b) {
    detail::Node *pa = a.n_, *pb = b.n_;
    const double v = lrdrop::mse_mean(pa->value, pb->value);
    detail::Node* n = make(Tensor({1}, {v}));
    n->backward = [n, pa, pb] {
      const double g = n->grad[0] * 2.0 / static_cast<double>(pa->value.numel());
      for (std::size_t i = 0; i < pa->value.numel(); ++i) {
        const double d = g * (pa->value[i] - pb->value[i]);
        pa->grad[i] += d;
        pb->grad[i] -= d;
      }
    };
    return wrap(n);
  }

  Var kl_bidirectional(Var p, Var q) {
    detail::Node *pp = p.n_, *pq = q.n_;
    const double v = lrdrop::kl_bidirectional(pp->value, pq->value);
    detail::Node* n = make(Tensor({1}, {v}));
    n->backward = [n, pp, pq] {
      const double g = n->grad[0];
      for (std::size_t i = 0; i < pp->value.numel(); ++i) {
        const double pi = pp->value[i], qi = pq->value[i];
        const double pc = std::max(pi, kProbFloor), qc = std::max(qi, kProbFloor);
        const double lp = std::log(pc), lq = std::log(qc);
        const double dp = 0.5 * ((lp - lq) + (pi >= kProbFloor ? (pi - qi) / pc : 0.0));
        const double dq = 0.5 * ((lq - lp) + (qi >= kProbFloor ? (qi - pi) / qc : 0.0));
        pp->grad[i] += g * dp;
        pq->grad[i] += g * dq;
      }
    };
    return wrap(n);
  }

  // Runs the reverse sweep from a scalar loss and returns the gradient of
  // every parameter leaf (zero tensors for leaves the loss never touched).
  // Consumes the tape.
  GradMap backward(Var loss) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
    if (loss.value().numel() != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar");
    consumed_ = true;
    loss.n_->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if ((*it)->backward) (*it)->backward();
    GradMap grads;
    for (const detail::Node* l : leaves_) grads.emplace(l->param_name, l->grad);
    return grads;
  }

 private:
  static void accumulate(Tensor& into, const Tensor& g) {
    for (std::size_t i = 0; i < into.numel(); ++i) into[i] += g[i];
  }

  detail::Node* make(Tensor value) {
    auto node = std::make_unique<detail::Node>();
    node->grad = Tensor(value.shape());
    node->value = std::move(value);
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  static Var wrap(detail::Node* n) { return Var(n); }

  std::vector<std::unique_ptr<detail::Node>> nodes_;
  std::vector<detail::Node*> leaves_;
  bool consumed_ = false;
};

// Differentiable view of a parameter map: one leaf per block.
struct ParamVars {
  std::map<std::string, Var> vars;
  const Var& at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::invalid_argument("ParamVars: unknown block " + name);
    return it->second;
  }
};

inline ParamVars bind_params(Tape& tape, const ParamMap& params) {
  ParamVars pv;
  for (const auto& [name, tensor] : params) pv.vars.emplace(name, tape.leaf(name, tensor));
  return pv;
}

}  // namespace lrdrop
