#pragma once

// Adam with bias correction, decoupled weight decay and global-norm gradient
// clipping. Updates iterate the parameter map in sorted order, so a given
// (params, grads, state) triple always produces the same bits.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "lrdrop/tensor.hpp"

namespace lrdrop {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (applied to the weights directly)

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("AdamConfig: lr must be positive");
    if (!(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0)
      throw std::invalid_argument("AdamConfig: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("AdamConfig: negative weight decay");
  }
};

struct OptimizerState {
  AdamConfig cfg;
  std::size_t step = 0;  // number of updates applied
  GradMap m;             // first moments
  GradMap v;             // second moments

  explicit OptimizerState(AdamConfig c = {}) : cfg(c) { cfg.validate(); }

  void init(const ParamMap& params) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto& [name, t] : params) {
      m.emplace(name, Tensor(t.shape()));
      v.emplace(name, Tensor(t.shape()));
    }
  }
};

inline double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += dot_flat(g, g);
  return std::sqrt(sq);
}

// Scales all gradients down so the global norm is at most max_norm.
// max_norm <= 0 disables clipping. Returns the pre-clip norm.
inline double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= factor;
  }
  return norm;
}

// One Adam update, in place. The state must have been init()ed against the
// same parameter structure.
inline void adam_step(ParamMap& params, const GradMap& grads, OptimizerState& st) {
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameters");
  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(st.cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(st.cfg.beta2, t);
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw std::invalid_argument("adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (!g.same_shape(theta)) throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    Tensor& m = st.m.at(name);
    Tensor& v = st.v.at(name);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      m[i] = st.cfg.beta1 * m[i] + (1.0 - st.cfg.beta1) * g[i];
      v[i] = st.cfg.beta2 * v[i] + (1.0 - st.cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double update = mhat / (std::sqrt(vhat) + st.cfg.eps);
      if (st.cfg.weight_decay > 0.0) update += st.cfg.weight_decay * theta[i];
      theta[i] -= st.cfg.lr * update;
      if (!std::isfinite(theta[i])) throw NumericError("adam_step: non-finite update in " + name);
    }
  }
}

}  // namespace lrdrop
