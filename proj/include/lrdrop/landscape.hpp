#pragma once

// Loss-surface slicing around a trained parameter point:
//
//   f(a, b) = L(theta* + a*dx + b*dy)
//
// on an odd n×n grid over [-r, r]^2, with the two directions drawn from
// per-block Gaussians and rescaled per block. The default rule matches each
// direction block's norm to the parameter block's norm (filter
// normalization); the alternative matches the block's standard deviation
// instead.
//
// The center cell is computed from the unperturbed parameters, so f(0,0)
// equals the direct evaluation loss bit for bit. Cells whose loss comes out
// non-finite are recorded as +inf rather than aborting the sweep.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/rng.hpp"
#include "lrdrop/tensor.hpp"

namespace lrdrop {

enum class DirectionRule { kBlockNorm, kBlockStd };

struct DirectionPair {
  GradMap dx;
  GradMap dy;
  std::uint64_t seed = 0;
};

namespace detail {
inline double block_std(const Tensor& t) {
  double mean = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) mean += t[i];
  mean /= static_cast<double>(t.numel());
  double var = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) var += (t[i] - mean) * (t[i] - mean);
  return std::sqrt(var / static_cast<double>(t.numel()));
}

inline GradMap sample_axis(const ParamMap& params, RngStream axis_rng, DirectionRule rule) {
  GradMap dir;
  for (const auto& [name, theta] : params) {
    RngStream block_rng = axis_rng.fork(name.c_str());
    Tensor d(theta.shape());
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = block_rng.gaussian();
    const double target = rule == DirectionRule::kBlockNorm ? norm_flat(theta) : block_std(theta);
    const double have = rule == DirectionRule::kBlockNorm ? norm_flat(d) : block_std(d);
    const double factor = (target == 0.0 || have == 0.0) ? 0.0 : target / have;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= factor;
    dir.emplace(name, std::move(d));
  }
  return dir;
}
}  // namespace detail

// Two independent random directions with the same block structure as the
// parameters, rescaled block by block. A zero-norm (or zero-spread)
// parameter block gets a zero direction block.
inline DirectionPair sample_directions(const ParamMap& params, std::uint64_t seed,
                                       DirectionRule rule = DirectionRule::kBlockNorm) {
  if (params.empty()) throw std::invalid_argument("sample_directions: empty parameter set");
  RngStream root(seed);
  DirectionPair pair;
  pair.seed = seed;
  pair.dx = detail::sample_axis(params, root.fork("dx"), rule);
  pair.dy = detail::sample_axis(params, root.fork("dy"), rule);
  return pair;
}

struct SurfaceGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<std::vector<double>> values;  // values[i][j] = f(alphas[i], betas[j])
  double center = 0.0;                      // f(0, 0)
};

using SurfaceLossFn = std::function<double(const ParamMap&)>;

// Sweeps the grid. `loss_fn` must be a pure function of the parameters
// (evaluation mode, no dropout).
inline SurfaceGrid evaluate_surface(const ParamMap& center, const DirectionPair& dirs,
                                    double range, std::size_t n, const SurfaceLossFn& loss_fn) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("evaluate_surface: n must be odd");
  if (!(range > 0.0)) throw std::invalid_argument("evaluate_surface: range must be positive");
  for (const auto& [name, theta] : center) {
    if (dirs.dx.find(name) == dirs.dx.end() || dirs.dy.find(name) == dirs.dy.end())
      throw std::invalid_argument("evaluate_surface: direction missing block " + name);
  }

  SurfaceGrid grid;
  grid.alphas.resize(n);
  grid.betas.resize(n);
  const std::size_t mid = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    grid.alphas[i] = n == 1 ? 0.0
                            : -range + static_cast<double>(i) * (2.0 * range) /
                                           static_cast<double>(n - 1);
  }
  grid.alphas[mid] = 0.0;  // exact center regardless of grid arithmetic
  grid.betas = grid.alphas;

  const double inf = std::numeric_limits<double>::infinity();
  const double center_loss = loss_fn(center);
  grid.center = std::isfinite(center_loss) ? center_loss : inf;

  ParamMap perturbed = center;
  grid.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == mid && j == mid) {
        grid.values[i][j] = grid.center;
        continue;
      }
      const double a = grid.alphas[i], b = grid.betas[j];
      for (const auto& [name, theta] : center) {
        const Tensor& dx = dirs.dx.at(name);
        const Tensor& dy = dirs.dy.at(name);
        Tensor& p = perturbed.at(name);
        for (std::size_t e = 0; e < theta.numel(); ++e)
          p[e] = theta[e] + (a * dx[e] + b * dy[e]);
      }
      const double v = loss_fn(perturbed);
      grid.values[i][j] = std::isfinite(v) ? v : inf;
    }
  }
  return grid;
}

struct FlatnessMetrics {
  double mean_rise = 0.0;
  double max_rise = 0.0;
  double radius_at_2x = 0.0;  // +inf if the loss never reaches 2x the center
};

// Rise statistics of the surface relative to its center. Any +inf cell makes
// mean_rise and max_rise +inf; that is reported, not hidden.
inline FlatnessMetrics flatness_metrics(const SurfaceGrid& grid) {
  if (!std::isfinite(grid.center))
    throw std::invalid_argument("flatness_metrics: center loss is not finite");
  FlatnessMetrics m;
  m.radius_at_2x = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t count = 0;
  m.max_rise = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.alphas.size(); ++i) {
    for (std::size_t j = 0; j < grid.betas.size(); ++j) {
      const double rise = grid.values[i][j] - grid.center;
      sum += rise;
      count += 1;
      m.max_rise = std::max(m.max_rise, rise);
      if (grid.values[i][j] >= 2.0 * grid.center) {
        const double r = std::hypot(grid.alphas[i], grid.betas[j]);
        m.radius_at_2x = std::min(m.radius_at_2x, r);
      }
    }
  }
  m.mean_rise = sum / static_cast<double>(count);
  return m;
}

// CSV: header alpha,beta,loss; one row per cell in row-major order.
inline void write_surface_csv(const std::string& path, const SurfaceGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_surface_csv: cannot open " + path);
  out << "alpha,beta,loss\n";
  for (std::size_t i = 0; i < grid.alphas.size(); ++i)
    for (std::size_t j = 0; j < grid.betas.size(); ++j)
      out << format_g17(grid.alphas[i]) << ',' << format_g17(grid.betas[j]) << ','
          << format_g17(grid.values[i][j]) << '\n';
  if (!out) throw std::runtime_error("write_surface_csv: write failed for " + path);
}

namespace detail {
// JSON has no literal for infinities, so non-finite metric values are
// emitted as strings.
inline std::string json_number(double v) {
  return std::isfinite(v) ? format_g17(v) : "\"" + format_g17(v) + "\"";
}
}  // namespace detail

inline void write_metrics_json(const std::string& path, const SurfaceGrid& grid,
                               const FlatnessMetrics& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_metrics_json: cannot open " + path);
  out << "{\n"
      << "  \"center\": " << detail::json_number(grid.center) << ",\n"
      << "  \"mean_rise\": " << detail::json_number(m.mean_rise) << ",\n"
      << "  \"max_rise\": " << detail::json_number(m.max_rise) << ",\n"
      << "  \"radius_at_2x\": " << detail::json_number(m.radius_at_2x) << "\n"
      << "}\n";
  if (!out) throw std::runtime_error("write_metrics_json: write failed for " + path);
}

}  // namespace lrdrop
