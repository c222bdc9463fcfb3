#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lrdrop/losses.hpp"
#include "lrdrop/model.hpp"
#include "lrdrop/ops.hpp"

namespace {

using lrdrop::ForwardTrace;
using lrdrop::HsrLayers;
using lrdrop::LossWeights;
using lrdrop::ModelConfig;
using lrdrop::ParamMap;
using lrdrop::RngStream;
using lrdrop::Tape;
using lrdrop::Tensor;
using lrdrop::Var;

Tensor random_mat(std::size_t r, std::size_t c, RngStream& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian();
  return t;
}

Tensor take_rows(const Tensor& t, std::size_t n) {
  Tensor out({n, t.cols()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(i, j);
  return out;
}

Tensor take_square(const Tensor& t, std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = t.at(i, j);
  return out;
}

// A synthetic trace built from constants, for exercising the loss terms
// without a model in the way.
ForwardTrace const_trace(Tape& tape, RngStream& rng, std::size_t n, std::size_t n_real,
                         std::size_t d, std::size_t layers, std::size_t heads,
                         std::size_t classes) {
  ForwardTrace tr;
  tr.n_real = n_real;
  for (std::size_t l = 0; l < layers; ++l) {
    tr.hidden_states.push_back(tape.constant(random_mat(n, d, rng)));
    std::vector<Var> row;
    for (std::size_t h = 0; h < heads; ++h) row.push_back(tape.constant(random_mat(n, n, rng)));
    tr.attentions.push_back(std::move(row));
  }
  tr.logits = tape.constant(random_mat(1, classes, rng));
  return tr;
}

ModelConfig tiny_config(double dropout) {
  ModelConfig cfg;
  cfg.vocab_size = 5;
  cfg.pad_id = 4;
  cfg.max_len = 5;
  cfg.hidden_size = 4;
  cfg.num_heads = 2;
  cfg.num_layers = 2;
  cfg.ffn_size = 6;
  cfg.num_classes = 2;
  cfg.dropout_rate = dropout;
  return cfg;
}

std::vector<ForwardTrace> model_traces(Tape& tape, const ParamMap& params,
                                       const ModelConfig& cfg, std::size_t k,
                                       std::uint64_t seed,
                                       std::vector<int> tokens = {2, 0, 1, 4, 4}) {
  lrdrop::ParamVars pv = lrdrop::bind_params(tape, params);
  RngStream root(seed);
  std::vector<ForwardTrace> traces;
  for (std::size_t p = 0; p < k; ++p)
    traces.push_back(lrdrop::forward_pass(tape, pv, cfg, tokens, true,
                                          root.fork(std::uint64_t{p}),
                                          static_cast<int>(p)));
  return traces;
}

TEST(WeightedTotal, GoldenExactValue) {
  LossWeights w;
  w.alpha = 0.5;
  w.beta = 0.5;
  w.gamma = 0.5;
  const double got = lrdrop::weighted_total(1.0, 0.2, 0.3, 0.4, w);
  double expect = 1.0;
  expect += 0.5 * 0.2;
  expect += 0.5 * 0.3;
  expect += 0.5 * 0.4;
  EXPECT_EQ(got, expect);
  EXPECT_EQ(got, 1.45);
}

TEST(WeightedTotal, FlagOffEqualsWeightZero) {
  LossWeights off;
  off.alpha = 0.7;
  off.hsr_on = false;
  LossWeights zero;
  zero.alpha = 0.0;
  const double a = lrdrop::weighted_total(1.3, 0.9, 0.2, 0.5, off);
  const double b = lrdrop::weighted_total(1.3, 0.9, 0.2, 0.5, zero);
  EXPECT_EQ(a, b);
  EXPECT_EQ(off.eff_alpha(), 0.0);
  EXPECT_EQ(zero.eff_alpha(), 0.0);
}

TEST(WeightedTotal, SkippedTermNeverTouched) {
  LossWeights w;
  w.hsr_on = false;
  w.mhar_on = false;
  w.or_on = false;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(lrdrop::weighted_total(2.0, nan, nan, nan, w), 2.0);
}

TEST(DualCrossEntropy, MatchesPerPassSum) {
  Tape tape;
  RngStream rng(17);
  std::vector<ForwardTrace> traces;
  std::vector<Tensor> logits;
  for (int i = 0; i < 3; ++i) {
    ForwardTrace tr;
    logits.push_back(random_mat(1, 4, rng));
    tr.logits = tape.constant(logits.back());
    tr.n_real = 3;
    traces.push_back(tr);
  }
  const Var dual = lrdrop::dual_cross_entropy(tape, traces, 2);
  double expect = lrdrop::cross_entropy(logits[0], 2);
  expect += lrdrop::cross_entropy(logits[1], 2);
  expect += lrdrop::cross_entropy(logits[2], 2);
  EXPECT_EQ(dual.scalar(), expect);

  traces.resize(1);
  EXPECT_THROW(lrdrop::dual_cross_entropy(tape, traces, 0), std::invalid_argument);
}

TEST(HiddenStateReg, MatchesManualRecompute) {
  Tape tape;
  RngStream rng(23);
  const std::size_t n = 4, n_real = 3, d = 5, layers = 2;
  const ForwardTrace a = const_trace(tape, rng, n, n_real, d, layers, 2, 3);
  const ForwardTrace b = const_trace(tape, rng, n, n_real, d, layers, 2, 3);

  const auto term = lrdrop::hidden_state_reg(tape, a, b);
  ASSERT_EQ(term.per_layer.size(), layers);
  std::vector<double> manual(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    manual[l] = lrdrop::mse_mean(take_rows(a.hidden_states[l].value(), n_real),
                                 take_rows(b.hidden_states[l].value(), n_real));
    EXPECT_EQ(term.per_layer[l], manual[l]);
  }
  const double expect = (manual[0] + manual[1]) * (1.0 / 2.0);
  EXPECT_EQ(term.node.scalar(), expect);
}

TEST(HiddenStateReg, LastLayerScope) {
  Tape tape;
  RngStream rng(29);
  const ForwardTrace a = const_trace(tape, rng, 3, 3, 4, 3, 1, 2);
  const ForwardTrace b = const_trace(tape, rng, 3, 3, 4, 3, 1, 2);
  const auto term = lrdrop::hidden_state_reg(tape, a, b, HsrLayers::kLast);
  ASSERT_EQ(term.per_layer.size(), 1u);
  const double manual =
      lrdrop::mse_mean(a.hidden_states[2].value(), b.hidden_states[2].value());
  EXPECT_EQ(term.per_layer[0], manual);
  EXPECT_EQ(term.node.scalar(), manual);
}

TEST(AttentionReg, MatchesManualRecompute) {
  Tape tape;
  RngStream rng(31);
  const std::size_t n = 4, n_real = 2, heads = 2;
  const ForwardTrace a = const_trace(tape, rng, n, n_real, 3, 1, heads, 2);
  const ForwardTrace b = const_trace(tape, rng, n, n_real, 3, 1, heads, 2);
  const auto term = lrdrop::attention_reg(tape, a, b);
  ASSERT_EQ(term.per_layer.size(), 1u);
  double h0 = lrdrop::mse_mean(take_square(a.attentions[0][0].value(), n_real),
                               take_square(b.attentions[0][0].value(), n_real));
  double h1 = lrdrop::mse_mean(take_square(a.attentions[0][1].value(), n_real),
                               take_square(b.attentions[0][1].value(), n_real));
  const double layer = (h0 + h1) * (1.0 / 2.0);
  EXPECT_EQ(term.per_layer[0], layer);
  EXPECT_EQ(term.node.scalar(), layer);
}

TEST(LossTerms, ComparabilityErrors) {
  Tape tape;
  RngStream rng(37);
  ForwardTrace a = const_trace(tape, rng, 4, 3, 4, 2, 2, 2);
  ForwardTrace b = const_trace(tape, rng, 4, 2, 4, 2, 2, 2);  // n_real differs
  EXPECT_THROW(lrdrop::hidden_state_reg(tape, a, b), std::invalid_argument);
  EXPECT_THROW(lrdrop::attention_reg(tape, a, b), std::invalid_argument);

  ForwardTrace c = const_trace(tape, rng, 4, 3, 4, 1, 2, 2);  // layer count differs
  EXPECT_THROW(lrdrop::hidden_state_reg(tape, a, c), std::invalid_argument);

  ForwardTrace d = const_trace(tape, rng, 4, 3, 4, 2, 1, 2);  // head count differs
  EXPECT_THROW(lrdrop::attention_reg(tape, a, d), std::invalid_argument);

  ForwardTrace e = const_trace(tape, rng, 4, 3, 4, 2, 2, 5);  // class count differs
  EXPECT_THROW(lrdrop::output_reg(tape, a, e), std::invalid_argument);
}

TEST(OutputReg, MatchesOpsRecomputeAndSwapSymmetry) {
  Tape tape;
  RngStream rng(41);
  const ForwardTrace a = const_trace(tape, rng, 3, 3, 4, 1, 1, 4);
  const ForwardTrace b = const_trace(tape, rng, 3, 3, 4, 1, 1, 4);
  const Var ab = lrdrop::output_reg(tape, a, b);
  const Var ba = lrdrop::output_reg(tape, b, a);
  EXPECT_EQ(ab.scalar(), ba.scalar());
  const double manual = lrdrop::kl_bidirectional(lrdrop::row_softmax(a.logits.value()),
                                                 lrdrop::row_softmax(b.logits.value()));
  EXPECT_EQ(ab.scalar(), manual);
  EXPECT_GT(ab.scalar(), 0.0);
}

TEST(TotalObjective, SinglePassIsPlainCrossEntropy) {
  Tape tape;
  const ModelConfig cfg = tiny_config(0.2);
  const ParamMap params = lrdrop::init_params(cfg, 3);
  const auto traces = model_traces(tape, params, cfg, 1, 100);
  LossWeights w;
  const auto obj = lrdrop::total_objective(tape, traces, 1, w);
  const double ce = lrdrop::cross_entropy(traces[0].logits.value(), 1);
  EXPECT_EQ(obj.breakdown.ce, ce);
  EXPECT_EQ(obj.breakdown.hsr, 0.0);
  EXPECT_EQ(obj.breakdown.mhar, 0.0);
  EXPECT_EQ(obj.breakdown.or_, 0.0);
  EXPECT_EQ(obj.breakdown.total, obj.breakdown.ce);
  EXPECT_TRUE(obj.breakdown.per_layer_hsr.empty());
  EXPECT_TRUE(obj.breakdown.per_layer_mhar.empty());
}

TEST(TotalObjective, DropoutZeroDegeneratesToDoubledCe) {
  Tape tape;
  const ModelConfig cfg = tiny_config(0.0);
  const ParamMap params = lrdrop::init_params(cfg, 4);
  const auto traces = model_traces(tape, params, cfg, 2, 200);
  LossWeights w;
  w.alpha = 0.5;
  w.beta = 0.5;
  w.gamma = 0.5;
  const auto obj = lrdrop::total_objective(tape, traces, 0, w);
  EXPECT_EQ(obj.breakdown.hsr, 0.0);
  EXPECT_EQ(obj.breakdown.mhar, 0.0);
  EXPECT_EQ(obj.breakdown.or_, 0.0);
  EXPECT_EQ(obj.breakdown.total, obj.breakdown.ce);
  const double single = lrdrop::cross_entropy(traces[0].logits.value(), 0);
  EXPECT_EQ(obj.breakdown.ce, single + single);
}

TEST(TotalObjective, TotalEqualsWeightedTotalOfFields) {
  const ModelConfig cfg = tiny_config(0.3);
  const ParamMap params = lrdrop::init_params(cfg, 5);
  std::vector<LossWeights> configs;
  {
    LossWeights w;
    w.alpha = 0.1;
    w.beta = 0.2;
    w.gamma = 0.3;
    configs.push_back(w);
    w.hsr_on = false;
    configs.push_back(w);
    w.hsr_on = true;
    w.beta = 0.0;
    configs.push_back(w);
    w.or_on = false;
    configs.push_back(w);
    LossWeights none;
    none.hsr_on = none.mhar_on = none.or_on = false;
    configs.push_back(none);
  }
  for (std::size_t k = 2; k <= 3; ++k) {
    for (const auto& w : configs) {
      Tape tape;
      const auto traces = model_traces(tape, params, cfg, k, 300 + k);
      const auto obj = lrdrop::total_objective(tape, traces, 1, w);
      EXPECT_EQ(obj.breakdown.total,
                lrdrop::weighted_total(obj.breakdown.ce, obj.breakdown.hsr,
                                       obj.breakdown.mhar, obj.breakdown.or_, w));
      EXPECT_EQ(obj.breakdown.total, obj.total.scalar());
      if (w.eff_alpha() == 0.0) EXPECT_EQ(obj.breakdown.hsr, 0.0);
      if (w.eff_beta() == 0.0) EXPECT_EQ(obj.breakdown.mhar, 0.0);
      if (w.eff_gamma() == 0.0) EXPECT_EQ(obj.breakdown.or_, 0.0);
    }
  }
}

TEST(TotalObjective, FlagOffMatchesWeightZeroBitwise) {
  const ModelConfig cfg = tiny_config(0.3);
  const ParamMap params = lrdrop::init_params(cfg, 6);
  LossWeights off;
  off.alpha = 0.4;
  off.beta = 0.2;
  off.gamma = 0.3;
  off.mhar_on = false;
  LossWeights zero = off;
  zero.mhar_on = true;
  zero.beta = 0.0;
  Tape t1, t2;
  const auto obj_off =
      lrdrop::total_objective(t1, model_traces(t1, params, cfg, 2, 77), 1, off);
  const auto obj_zero =
      lrdrop::total_objective(t2, model_traces(t2, params, cfg, 2, 77), 1, zero);
  EXPECT_EQ(obj_off.breakdown.total, obj_zero.breakdown.total);
  EXPECT_EQ(obj_off.breakdown.ce, obj_zero.breakdown.ce);
  EXPECT_EQ(obj_off.breakdown.hsr, obj_zero.breakdown.hsr);
  EXPECT_EQ(obj_off.breakdown.mhar, obj_zero.breakdown.mhar);
  EXPECT_EQ(obj_off.breakdown.or_, obj_zero.breakdown.or_);
}

TEST(TotalObjective, ThreePassPairwiseMeanOracle) {
  Tape tape;
  const ModelConfig cfg = tiny_config(0.3);
  const ParamMap params = lrdrop::init_params(cfg, 7);
  const auto traces = model_traces(tape, params, cfg, 3, 400);
  LossWeights w;
  w.alpha = 1.0;
  w.beta = 1.0;
  w.gamma = 1.0;
  const auto obj = lrdrop::total_objective(tape, traces, 0, w);

  // Brute force over the three unordered pairs, replicating the exact
  // reduction structure: left-to-right sum, then multiply by 1/3.
  const std::size_t pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  std::vector<double> hsr_vals, mhar_vals, or_vals;
  std::vector<std::vector<double>> hsr_pl, mhar_pl;
  for (const auto& pr : pairs) {
    auto h = lrdrop::hidden_state_reg(tape, traces[pr[0]], traces[pr[1]]);
    auto m = lrdrop::attention_reg(tape, traces[pr[0]], traces[pr[1]]);
    hsr_vals.push_back(h.node.scalar());
    mhar_vals.push_back(m.node.scalar());
    hsr_pl.push_back(h.per_layer);
    mhar_pl.push_back(m.per_layer);
    or_vals.push_back(lrdrop::output_reg(tape, traces[pr[0]], traces[pr[1]]).scalar());
  }
  auto mean3 = [](const std::vector<double>& v) {
    return ((v[0] + v[1]) + v[2]) * (1.0 / 3.0);
  };
  EXPECT_EQ(obj.breakdown.hsr, mean3(hsr_vals));
  EXPECT_EQ(obj.breakdown.mhar, mean3(mhar_vals));
  EXPECT_EQ(obj.breakdown.or_, mean3(or_vals));

  ASSERT_EQ(obj.breakdown.per_layer_hsr.size(), cfg.num_layers);
  ASSERT_EQ(obj.breakdown.per_layer_mhar.size(), cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const double ph = (hsr_pl[0][l] + hsr_pl[1][l] + hsr_pl[2][l]) / 3.0;
    const double pm = (mhar_pl[0][l] + mhar_pl[1][l] + mhar_pl[2][l]) / 3.0;
    EXPECT_EQ(obj.breakdown.per_layer_hsr[l], ph);
    EXPECT_EQ(obj.breakdown.per_layer_mhar[l], pm);
  }
}

TEST(TotalObjective, RDropFormTotalIsCePlusGammaKl) {
  const ModelConfig cfg = tiny_config(0.3);
  const ParamMap params = lrdrop::init_params(cfg, 8);
  LossWeights w;
  w.alpha = 0.0;
  w.beta = 0.0;
  w.gamma = 0.4;
  for (std::uint64_t seed = 500; seed < 505; ++seed) {
    Tape tape;
    const auto traces = model_traces(tape, params, cfg, 2, seed);
    const auto obj = lrdrop::total_objective(tape, traces, 1, w);
    EXPECT_EQ(obj.breakdown.hsr, 0.0);
    EXPECT_EQ(obj.breakdown.mhar, 0.0);
    EXPECT_GT(obj.breakdown.or_, 0.0);
    double expect = obj.breakdown.ce;
    expect += 0.4 * obj.breakdown.or_;
    EXPECT_EQ(obj.breakdown.total, expect);
  }
}

TEST(TotalObjective, GradientsFlowThroughRegularizers) {
  Tape tape;
  const ModelConfig cfg = tiny_config(0.3);
  const ParamMap params = lrdrop::init_params(cfg, 9);
  const auto traces = model_traces(tape, params, cfg, 2, 600);
  LossWeights w;
  w.alpha = 0.5;
  w.beta = 0.5;
  w.gamma = 0.5;
  const auto obj = lrdrop::total_objective(tape, traces, 1, w);
  const auto grads = tape.backward(obj.total);
  double total_mag = 0.0;
  for (const auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) total_mag += std::fabs(g[i]);
  EXPECT_GT(total_mag, 0.0);
  EXPECT_TRUE(std::isfinite(total_mag));
}

TEST(TotalObjective, EmptyTracesThrows) {
  Tape tape;
  std::vector<ForwardTrace> none;
  LossWeights w;
  EXPECT_THROW(lrdrop::total_objective(tape, none, 0, w), std::invalid_argument);
}

}  // namespace
