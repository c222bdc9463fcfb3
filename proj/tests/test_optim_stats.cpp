#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "lrdrop/optim.hpp"
#include "lrdrop/rng.hpp"
#include "lrdrop/stats.hpp"
#include "lrdrop/tensor.hpp"

namespace {

using lrdrop::AdamConfig;
using lrdrop::GradMap;
using lrdrop::OptimizerState;
using lrdrop::ParamMap;
using lrdrop::RngStream;
using lrdrop::Tensor;

// Student-t density via lgamma, for an integration-based p-value oracle
// that shares nothing with the boost CDF used by the implementation.
double t_pdf(double x, double df) {
  const double logc = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                      0.5 * std::log(df * std::numbers::pi);
  return std::exp(logc - 0.5 * (df + 1.0) * std::log1p(x * x / df));
}

// Two-sided p as 1 minus the central mass, by Simpson's rule. Integrating
// the bounded interval [-|t|, |t|] avoids any tail truncation error.
double oracle_two_sided_p(double t, double df) {
  const double a = std::fabs(t);
  if (a == 0.0) return 1.0;
  const int n = 20000;
  const double h = 2.0 * a / n;
  double s = t_pdf(-a, df) + t_pdf(a, df);
  for (int i = 1; i < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * t_pdf(-a + i * h, df);
  return 1.0 - s * h / 3.0;
}

void oracle_welch(const std::vector<double>& a, const std::vector<double>& b, double* t_out,
                  double* df_out) {
  long double ma = 0, mb = 0;
  for (double x : a) ma += x;
  for (double x : b) mb += x;
  ma /= a.size();
  mb /= b.size();
  long double va = 0, vb = 0;
  for (double x : a) va += (x - ma) * (x - ma);
  for (double x : b) vb += (x - mb) * (x - mb);
  va /= (a.size() - 1);
  vb /= (b.size() - 1);
  const long double sa = va / a.size(), sb = vb / b.size();
  *t_out = static_cast<double>((ma - mb) / std::sqrt(sa + sb));
  *df_out = static_cast<double>((sa + sb) * (sa + sb) /
                                (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1)));
}

TEST(Stats, MeanAndVarianceHandValues) {
  EXPECT_EQ(lrdrop::mean_of({1.0, 2.0, 3.0, 4.0}), 2.5);
  EXPECT_EQ(lrdrop::sample_variance({1.0, 2.0, 3.0, 4.0}), 5.0 / 3.0);
  EXPECT_THROW(lrdrop::sample_variance({1.0}), std::invalid_argument);
}

TEST(Welch, GoldenHandComputedCase) {
  const std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> b = {2.0, 4.0, 6.0, 8.0};
  const auto r = lrdrop::welch_t_test(a, b);
  EXPECT_NEAR(r.t, -std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(r.df, 1875.0 / 425.0, 1e-12);
  EXPECT_EQ(r.mean_gap, -2.5);
  EXPECT_GT(r.p, 0.1);
  EXPECT_LT(r.p, 0.2);
  EXPECT_NEAR(r.p, oracle_two_sided_p(r.t, r.df), 1e-8);

  const auto swapped = lrdrop::welch_t_test(b, a);
  EXPECT_EQ(swapped.t, -r.t);
  EXPECT_EQ(swapped.p, r.p);
}

TEST(Welch, MatchesOracleOnRandomSamples) {
  RngStream rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(6), b(9);
    for (double& x : a) x = 0.7 + 0.12 * rng.gaussian();
    for (double& x : b) x = 0.65 + 0.2 * rng.gaussian();
    const auto r = lrdrop::welch_t_test(a, b);
    double t_want = 0, df_want = 0;
    oracle_welch(a, b, &t_want, &df_want);
    EXPECT_NEAR(r.t, t_want, 1e-12 * std::max(1.0, std::fabs(t_want)));
    EXPECT_NEAR(r.df, df_want, 1e-12 * df_want);
    EXPECT_NEAR(r.p, oracle_two_sided_p(r.t, r.df), 1e-8);
    EXPECT_GT(r.p, 0.0);
    EXPECT_LE(r.p, 1.0);
  }
}

TEST(Welch, DegenerateZeroVarianceBranches) {
  const auto same = lrdrop::welch_t_test({1.0, 1.0, 1.0}, {1.0, 1.0, 1.0});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_EQ(same.df, 4.0);

  const auto gap = lrdrop::welch_t_test({1.0, 1.0}, {2.0, 2.0});
  EXPECT_TRUE(std::isinf(gap.t));
  EXPECT_LT(gap.t, 0.0);
  EXPECT_EQ(gap.p, 0.0);
  EXPECT_EQ(gap.df, 2.0);

  const auto up = lrdrop::welch_t_test({3.0, 3.0}, {2.0, 2.0});
  EXPECT_TRUE(std::isinf(up.t));
  EXPECT_GT(up.t, 0.0);
}

TEST(Welch, RejectsTinySamples) {
  EXPECT_THROW(lrdrop::welch_t_test({1.0}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(lrdrop::welch_t_test({1.0, 2.0}, {}), std::invalid_argument);
}

TEST(Adam, FirstStepMatchesClosedForm) {
  AdamConfig cfg;
  ParamMap params;
  params.emplace("w", Tensor::vec({1.0, -2.0, 0.5}));
  GradMap grads;
  grads.emplace("w", Tensor::vec({0.5, -0.25, 2.0}));
  OptimizerState st(cfg);
  st.init(params);
  const ParamMap before = params;
  adam_step(params, grads, st);
  EXPECT_EQ(st.step, 1u);

  const double bc1 = 1.0 - std::pow(cfg.beta1, 1.0);
  const double bc2 = 1.0 - std::pow(cfg.beta2, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grads.at("w")[i];
    const double m = cfg.beta1 * 0.0 + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * 0.0 + (1.0 - cfg.beta2) * g * g;
    const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    const double want = before.at("w")[i] - cfg.lr * update;
    EXPECT_EQ(params.at("w")[i], want);
    // With |g| >> eps the first bias-corrected step has magnitude ~lr.
    EXPECT_NEAR(std::fabs(params.at("w")[i] - before.at("w")[i]), cfg.lr, 0.01 * cfg.lr);
  }
}

TEST(Adam, TwoStepsMatchReplicatedRecurrence) {
  AdamConfig cfg;
  cfg.lr = 0.01;
  ParamMap params;
  params.emplace("w", Tensor::vec({0.3}));
  OptimizerState st(cfg);
  st.init(params);

  double theta = 0.3, m = 0.0, v = 0.0;
  for (int step = 1; step <= 2; ++step) {
    const double g = 0.1 * step;
    GradMap grads;
    grads.emplace("w", Tensor::vec({g}));
    adam_step(params, grads, st);

    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    theta -= cfg.lr * update;
    EXPECT_EQ(params.at("w")[0], theta);
  }
}

TEST(Adam, DecoupledWeightDecaySingleStep) {
  AdamConfig cfg;
  cfg.weight_decay = 0.01;
  ParamMap params;
  params.emplace("w", Tensor::vec({2.0}));
  GradMap grads;
  grads.emplace("w", Tensor::vec({0.5}));
  OptimizerState st(cfg);
  st.init(params);
  adam_step(params, grads, st);

  const double g = 0.5;
  const double m = (1.0 - cfg.beta1) * g;
  const double v = (1.0 - cfg.beta2) * g * g;
  const double bc1 = 1.0 - cfg.beta1;
  const double bc2 = 1.0 - cfg.beta2;
  double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
  update += cfg.weight_decay * 2.0;
  EXPECT_EQ(params.at("w")[0], 2.0 - cfg.lr * update);
  // The moments never see the decay term.
  EXPECT_EQ(st.m.at("w")[0], m);
  EXPECT_EQ(st.v.at("w")[0], v);
}

TEST(Adam, ConvergesOnQuadratic) {
  AdamConfig cfg;
  cfg.lr = 0.05;
  ParamMap params;
  params.emplace("w", Tensor::vec({3.0, -4.0, 1.5}));
  OptimizerState st(cfg);
  st.init(params);
  for (int i = 0; i < 500; ++i) {
    GradMap grads;
    Tensor g({3});
    for (std::size_t j = 0; j < 3; ++j) g[j] = 2.0 * params.at("w")[j];
    grads.emplace("w", g);
    adam_step(params, grads, st);
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(std::fabs(params.at("w")[j]), 1e-3);
}

TEST(Adam, ErrorsAndValidation) {
  AdamConfig bad;
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = AdamConfig{};
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = AdamConfig{};
  bad.eps = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = AdamConfig{};
  bad.weight_decay = -0.1;
  EXPECT_THROW(OptimizerState{bad}, std::invalid_argument);

  ParamMap params;
  params.emplace("w", Tensor::vec({1.0}));
  GradMap grads;
  grads.emplace("w", Tensor::vec({0.1}));
  OptimizerState uninit{AdamConfig{}};
  EXPECT_THROW(adam_step(params, grads, uninit), std::invalid_argument);

  OptimizerState st{AdamConfig{}};
  st.init(params);
  GradMap wrong_name;
  wrong_name.emplace("x", Tensor::vec({0.1}));
  EXPECT_THROW(adam_step(params, wrong_name, st), std::invalid_argument);
  GradMap wrong_shape;
  wrong_shape.emplace("w", Tensor::vec({0.1, 0.2}));
  EXPECT_THROW(adam_step(params, wrong_shape, st), std::invalid_argument);
}

TEST(Adam, NonFiniteUpdateRaisesNumericError) {
  ParamMap params;
  params.emplace("w", Tensor::vec({1.0}));
  GradMap grads;
  grads.emplace("w", Tensor::vec({std::numeric_limits<double>::infinity()}));
  OptimizerState st{AdamConfig{}};
  st.init(params);
  EXPECT_THROW(adam_step(params, grads, st), lrdrop::NumericError);
}

TEST(Clip, GlobalNormOracleAndScaling) {
  GradMap grads;
  grads.emplace("a", Tensor::vec({3.0}));
  grads.emplace("b", Tensor::vec({4.0}));
  EXPECT_NEAR(lrdrop::global_norm(grads), 5.0, 1e-12);

  GradMap clipped = grads;
  const double pre = lrdrop::clip_global_norm(clipped, 1.0);
  EXPECT_NEAR(pre, 5.0, 1e-12);
  EXPECT_NEAR(lrdrop::global_norm(clipped), 1.0, 1e-12);
  // Direction preserved.
  EXPECT_NEAR(clipped.at("a")[0] / clipped.at("b")[0], 3.0 / 4.0, 1e-12);

  GradMap untouched = grads;
  lrdrop::clip_global_norm(untouched, 0.0);
  EXPECT_TRUE(lrdrop::bitwise_equal(untouched, grads));
  lrdrop::clip_global_norm(untouched, 10.0);
  EXPECT_TRUE(lrdrop::bitwise_equal(untouched, grads));

  GradMap many;
  RngStream rng(53);
  double sq = 0.0;
  for (int i = 0; i < 3; ++i) {
    Tensor t({4});
    for (std::size_t j = 0; j < 4; ++j) {
      t[j] = rng.gaussian();
      sq += t[j] * t[j];
    }
    many.emplace("t" + std::to_string(i), t);
  }
  EXPECT_NEAR(lrdrop::global_norm(many), std::sqrt(sq), 1e-12);
}

}  // namespace
