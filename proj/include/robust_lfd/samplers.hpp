#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "robust_lfd/grid.hpp"
#include "robust_lfd/rng.hpp"

namespace robust_lfd {

// Piecewise-linear random shape in [0, 1] through `knots` equispaced knots,
// raised to a random power in [1, max_power] so some shapes concentrate.
inline std::vector<double> random_spline_shape(const Grid& grid,
                                               std::uint64_t seed,
                                               int knots = 8,
                                               double max_power = 4.0) {
  SplitMix64 gen(derive_seed(seed, 0x5eed));
  std::vector<double> kv(static_cast<std::size_t>(knots));
  for (double& v : kv) v = uniform01(gen);
  const double power = uniform(gen, 1.0, max_power);
  std::vector<double> out(grid.size());
  const double span = grid.x_max() - grid.x_min();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = (grid.point(i) - grid.x_min()) / span * (knots - 1);
    auto k = static_cast<std::size_t>(std::floor(s));
    if (k + 1 >= kv.size()) k = kv.size() - 2;
    const double a = s - static_cast<double>(k);
    out[i] = std::pow((1.0 - a) * kv[k] + a * kv[k + 1], power);
  }
  return out;
}

// Unit-mass density proportional to (lo + (hi - lo) * spline) * base.
inline GridDensity random_tilt(const GridFunction& base, std::uint64_t seed,
                               double lo = 0.0, double hi = 1.0) {
  auto s = random_spline_shape(base.grid(), seed);
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = (lo + (hi - lo) * s[i]) * base[i];
  return normalize(GridFunction(base.grid(), std::move(s)));
}

// Unit-mass density proportional to a random spline (full support possible).
inline GridDensity random_spline_density(const Grid& grid, std::uint64_t seed) {
  auto s = random_spline_shape(grid, seed);
  for (double& v : s) v += 1e-3;
  return normalize(GridFunction(grid, std::move(s)));
}

inline GridDensity mix(const GridFunction& a, const GridFunction& b,
                       double weight_b) {
  require_same_grid(a.grid(), b.grid());
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = (1.0 - weight_b) * a[i] + weight_b * b[i];
  return normalize(GridFunction(a.grid(), std::move(v)));
}

}  // namespace robust_lfd
