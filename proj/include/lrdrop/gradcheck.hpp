#pragma once

// Central-difference validation of analytic gradients. The loss function is
// re-evaluated with single coordinates nudged, so it must be a pure function
// of the parameter map (same RNG draws on every call).

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/rng.hpp"
#include "lrdrop/tensor.hpp"

namespace lrdrop {

using LossFn = std::function<double(const ParamMap&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_block;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t n_checked = 0;
};

// Checks up to `n_samples` coordinates (all of them when the model is small
// enough), chosen without replacement. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult finite_diff_check(const LossFn& loss_fn, const ParamMap& params,
                                         const GradMap& analytic, std::size_t n_samples,
                                         RngStream rng, double base_step = 1e-5) {
  if (!(base_step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  struct Coord {
    const std::string* block;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& [name, tensor] : params) {
    if (analytic.find(name) == analytic.end())
      throw std::invalid_argument("finite_diff_check: missing gradient for " + name);
    for (std::size_t i = 0; i < tensor.numel(); ++i) coords.push_back({&name, i});
  }
  if (coords.empty()) throw std::invalid_argument("finite_diff_check: empty parameter map");

  // Partial Fisher-Yates: the first n_samples entries become the sample.
  const std::size_t take = std::min(n_samples, coords.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (coords.size() - i));
    std::swap(coords[i], coords[j]);
  }

  ParamMap work = params;
  GradCheckResult res;
  res.n_checked = take;
  for (std::size_t s = 0; s < take; ++s) {
    const std::string& block = *coords[s].block;
    const std::size_t idx = coords[s].index;
    Tensor& t = work.at(block);
    const double x0 = t[idx];
    const double h = base_step * std::max(1.0, std::fabs(x0));
    t[idx] = x0 + h;
    const double fp = loss_fn(work);
    t[idx] = x0 - h;
    const double fm = loss_fn(work);
    t[idx] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite loss at " + block);
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.at(block)[idx];
    const double rel =
        std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_block = block;
      res.worst_index = idx;
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
  }
  return res;
}

}  // namespace lrdrop
