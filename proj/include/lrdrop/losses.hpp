#pragma once

// The training objective over k dropout-sampled forward passes:
//
//   total = ce + alpha * hsr + beta * mhar + gamma * or
//
// ce    sum of the per-pass cross-entropies (a sum, not a mean; the
//       learning rate absorbs the factor)
// hsr   mean squared error between per-layer hidden states, averaged over
//       the regularized layers
// mhar  mean squared error between attention matrices, averaged over heads
//       within a layer and then over layers
// or    bidirectional KL between the output distributions
//
// With k > 2 passes each pairwise term is the mean over all unordered pass
// pairs; with k = 1 the objective is the single cross-entropy. A term whose
// effective weight is zero (switched off, or weight 0) is not computed at
// all: its breakdown entry is exactly 0.0 and the total is the sum of the
// remaining weighted terms only, so an ablation flag and a zero coefficient
// produce bitwise-identical results.
//
// Pad rows are excluded from every regularizer reduction. Gradients flow
// through both traces of every term.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/autodiff.hpp"
#include "lrdrop/transformer.hpp"

namespace lrdrop {

enum class HsrLayers { kAll, kLast };

struct LossWeights {
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 0.1;
  bool hsr_on = true;
  bool mhar_on = true;
  bool or_on = true;
  HsrLayers hsr_layers = HsrLayers::kAll;

  double eff_alpha() const { return hsr_on ? alpha : 0.0; }
  double eff_beta() const { return mhar_on ? beta : 0.0; }
  double eff_gamma() const { return or_on ? gamma : 0.0; }
};

// The four scalar terms and the weighted total. The term fields hold the
// unweighted values; skipped terms stay exactly 0.0.
struct LossBreakdown {
  double ce = 0.0;
  double hsr = 0.0;
  double mhar = 0.0;
  double or_ = 0.0;
  double total = 0.0;
  std::vector<double> per_layer_hsr;
  std::vector<double> per_layer_mhar;
};

// The weighted sum of the four terms in the exact association order the
// objective graph uses: ((ce + a*hsr) + b*mhar) + g*or. Skipped terms are
// not added at all.
inline double weighted_total(double ce, double hsr, double mhar, double or_,
                             const LossWeights& w) {
  double total = ce;
  if (w.eff_alpha() > 0.0) total += w.eff_alpha() * hsr;
  if (w.eff_beta() > 0.0) total += w.eff_beta() * mhar;
  if (w.eff_gamma() > 0.0) total += w.eff_gamma() * or_;
  return total;
}

namespace detail {
inline void require_comparable(const ForwardTrace& a, const ForwardTrace& b) {
  if (a.n_real != b.n_real || a.hidden_states.size() != b.hidden_states.size())
    throw std::invalid_argument("loss: traces are not comparable");
}

// Slice to the leading non-pad rows; identity when nothing is padded.
inline Var real_rows(Tape& tape, Var x, std::size_t n_real) {
  if (n_real == x.value().rows()) return x;
  return tape.block(x, 0, n_real, 0, x.value().cols());
}

inline Var real_square(Tape& tape, Var a, std::size_t n_real) {
  if (n_real == a.value().rows()) return a;
  return tape.block(a, 0, n_real, 0, n_real);
}

// Sum then scale by 1/n; a single term is returned as-is so the one-pair
// case reduces exactly to the pair value.
inline Var mean_of(Tape& tape, const std::vector<Var>& terms) {
  if (terms.size() == 1) return terms.front();
  Var sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = tape.add(sum, terms[i]);
  return tape.scale(sum, 1.0 / static_cast<double>(terms.size()));
}

inline std::vector<double> mean_columns(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out(rows.front().size(), 0.0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += row[i];
  for (double& v : out) v /= static_cast<double>(rows.size());
  return out;
}
}  // namespace detail

// A pairwise regularization term: the scalar node plus its per-layer values.
struct RegTerm {
  Var node;
  std::vector<double> per_layer;
};

// Sum of the cross-entropies of all passes against the shared label.
// This is the dual (or k-fold) loss, so it requires at least two passes.
inline Var dual_cross_entropy(Tape& tape, const std::vector<ForwardTrace>& traces,
                              std::size_t label) {
  if (traces.size() < 2) throw std::invalid_argument("dual_cross_entropy: needs k >= 2 passes");
  Var sum = tape.cross_entropy(traces[0].logits, label);
  for (std::size_t i = 1; i < traces.size(); ++i)
    sum = tape.add(sum, tape.cross_entropy(traces[i].logits, label));
  return sum;
}

// MSE between the two passes' hidden states on the non-pad rows, averaged
// over the regularized layers (all of them, or just the last).
inline RegTerm hidden_state_reg(Tape& tape, const ForwardTrace& a, const ForwardTrace& b,
                                HsrLayers scope = HsrLayers::kAll) {
  detail::require_comparable(a, b);
  const std::size_t layers = a.hidden_states.size();
  const std::size_t first = scope == HsrLayers::kLast ? layers - 1 : 0;
  RegTerm term;
  std::vector<Var> per_layer;
  for (std::size_t l = first; l < layers; ++l) {
    per_layer.push_back(tape.mse_mean(detail::real_rows(tape, a.hidden_states[l], a.n_real),
                                      detail::real_rows(tape, b.hidden_states[l], b.n_real)));
    term.per_layer.push_back(per_layer.back().scalar());
  }
  term.node = detail::mean_of(tape, per_layer);
  return term;
}

// Per layer, the head-averaged MSE between the two passes' attention
// matrices on the non-pad block; then the mean over layers.
inline RegTerm attention_reg(Tape& tape, const ForwardTrace& a, const ForwardTrace& b) {
  detail::require_comparable(a, b);
  RegTerm term;
  std::vector<Var> per_layer;
  for (std::size_t l = 0; l < a.attentions.size(); ++l) {
    if (a.attentions[l].size() != b.attentions[l].size())
      throw std::invalid_argument("attention_reg: head count mismatch");
    std::vector<Var> per_head;
    for (std::size_t h = 0; h < a.attentions[l].size(); ++h)
      per_head.push_back(tape.mse_mean(detail::real_square(tape, a.attentions[l][h], a.n_real),
                                       detail::real_square(tape, b.attentions[l][h], b.n_real)));
    per_layer.push_back(detail::mean_of(tape, per_head));
    term.per_layer.push_back(per_layer.back().scalar());
  }
  term.node = detail::mean_of(tape, per_layer);
  return term;
}

// Bidirectional KL between the two passes' output distributions.
inline Var output_reg(Tape& tape, const ForwardTrace& a, const ForwardTrace& b) {
  if (a.logits.value().numel() != b.logits.value().numel())
    throw std::invalid_argument("output_reg: class count mismatch");
  return tape.kl_bidirectional(tape.row_softmax(a.logits), tape.row_softmax(b.logits));
}

struct Objective {
  Var total;
  LossBreakdown breakdown;
};

// Builds the full objective over the given passes. Pairwise terms are the
// mean over all unordered pass pairs; with one pass the objective is the
// plain cross-entropy.
inline Objective total_objective(Tape& tape, const std::vector<ForwardTrace>& traces,
                                 std::size_t label, const LossWeights& w) {
  if (traces.empty()) throw std::invalid_argument("total_objective: no passes");
  Objective obj;
  const std::size_t k = traces.size();
  Var total = k == 1 ? tape.cross_entropy(traces[0].logits, label)
                     : dual_cross_entropy(tape, traces, label);
  obj.breakdown.ce = total.scalar();

  if (k >= 2) {
    std::vector<Var> hsr_terms, mhar_terms, or_terms;
    std::vector<std::vector<double>> hsr_layers, mhar_layers;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        if (w.eff_alpha() > 0.0) {
          RegTerm t = hidden_state_reg(tape, traces[i], traces[j], w.hsr_layers);
          hsr_terms.push_back(t.node);
          hsr_layers.push_back(std::move(t.per_layer));
        }
        if (w.eff_beta() > 0.0) {
          RegTerm t = attention_reg(tape, traces[i], traces[j]);
          mhar_terms.push_back(t.node);
          mhar_layers.push_back(std::move(t.per_layer));
        }
        if (w.eff_gamma() > 0.0)
          or_terms.push_back(output_reg(tape, traces[i], traces[j]));
      }
    }
    if (!hsr_terms.empty()) {
      Var hsr = detail::mean_of(tape, hsr_terms);
      obj.breakdown.hsr = hsr.scalar();
      obj.breakdown.per_layer_hsr = detail::mean_columns(hsr_layers);
      total = tape.add(total, tape.scale(hsr, w.eff_alpha()));
    }
    if (!mhar_terms.empty()) {
      Var mhar = detail::mean_of(tape, mhar_terms);
      obj.breakdown.mhar = mhar.scalar();
      obj.breakdown.per_layer_mhar = detail::mean_columns(mhar_layers);
      total = tape.add(total, tape.scale(mhar, w.eff_beta()));
    }
    if (!or_terms.empty()) {
      Var oreg = detail::mean_of(tape, or_terms);
      obj.breakdown.or_ = oreg.scalar();
      total = tape.add(total, tape.scale(oreg, w.eff_gamma()));
    }
  }
  obj.total = total;
  obj.breakdown.total = total.scalar();
  return obj;
}

}  // namespace lrdrop
