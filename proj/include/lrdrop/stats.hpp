#pragma once

// Welch's unequal-variance t-test for comparing accuracy samples across two
// run groups. The statistic, the Welch-Satterthwaite degrees of freedom and
// the degenerate branches are computed here; only the Student-t CDF behind
// the p-value comes from Boost.Math.
//
// Degenerate variance branch: when both samples have zero variance the test
// reports t = 0, p = 1 for a zero gap and t = +/-inf, p = 0 otherwise.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace lrdrop {

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Unbiased (n-1) sample variance.
inline double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_variance: needs at least 2 samples");
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

struct WelchResult {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double mean_gap = 0.0;  // mean_a - mean_b
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("welch_t_test: each side needs at least 2 samples");
  WelchResult r;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = mean_of(a);
  r.mean_b = mean_of(b);
  r.var_a = sample_variance(a);
  r.var_b = sample_variance(b);
  r.mean_gap = r.mean_a - r.mean_b;

  const double na = static_cast<double>(r.n_a), nb = static_cast<double>(r.n_b);
  const double sa = r.var_a / na, sb = r.var_b / nb;
  const double se2 = sa + sb;
  if (se2 == 0.0) {
    r.df = na + nb - 2.0;
    if (r.mean_gap == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_gap);
      r.p = 0.0;
    }
    return r;
  }
  r.t = r.mean_gap / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

}  // namespace lrdrop
