#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "robust_lfd/errors.hpp"
#include "robust_lfd/rng.hpp"

namespace robust_lfd {

// Lower clamp used wherever a ratio or a power of a density is formed.
inline constexpr double kDensityFloor = 1e-300;
inline constexpr double kMassTolerance = 1e-8;

inline double floored(double v) noexcept { return std::max(v, kDensityFloor); }

class Grid {
 public:
  Grid(double x_min, double x_max, std::size_t n)
      : x_min_(x_min), x_max_(x_max), n_(n) {
    if (n < 2) throw ParameterError("grid needs at least 2 points");
    if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max))
      throw ParameterError("grid needs finite x_min < x_max");
  }

  static Grid standard() { return Grid(-12.0, 12.0, 2001); }
  static Grid desk() { return Grid(-6.0, 6.0, 201); }

  double x_min() const noexcept { return x_min_; }
  double x_max() const noexcept { return x_max_; }
  std::size_t size() const noexcept { return n_; }
  double dx() const noexcept {
    return (x_max_ - x_min_) / static_cast<double>(n_ - 1);
  }
  double point(std::size_t i) const noexcept {
    return i + 1 == n_ ? x_max_ : x_min_ + static_cast<double>(i) * dx();
  }
  // Trapezoid quadrature weight of point i.
  double weight(std::size_t i) const noexcept {
    return (i == 0 || i + 1 == n_) ? 0.5 * dx() : dx();
  }

  std::vector<double> points() const {
    std::vector<double> x(n_);
    for (std::size_t i = 0; i < n_; ++i) x[i] = point(i);
    return x;
  }
  std::vector<double> weights() const {
    std::vector<double> w(n_);
    for (std::size_t i = 0; i < n_; ++i) w[i] = weight(i);
    return w;
  }

  bool contains(double x) const noexcept { return x >= x_min_ && x <= x_max_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  double x_min_;
  double x_max_;
  std::size_t n_;
};

inline void require_same_grid(const Grid& a, const Grid& b,
                              const char* what = "grid mismatch") {
  if (!(a == b)) throw DimensionError(what);
}

inline double trapezoid_integral(const Grid& grid,
                                 std::span<const double> values) {
  if (values.size() != grid.size())
    throw DimensionError("trapezoid_integral: expected " +
                         std::to_string(grid.size()) + " values, got " +
                         std::to_string(values.size()));
  const std::size_t n = values.size();
  double interior = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) interior += values[i];
  return grid.dx() * (0.5 * values.front() + interior + 0.5 * values.back());
}

// Nonnegative samples on a grid with arbitrary mass (bounding functions,
// unnormalized shapes).
class GridFunction {
 public:
  GridFunction(Grid grid, std::vector<double> values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw DimensionError("grid function length does not match grid");
    for (double v : values_)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ParameterError("grid function values must be finite and >= 0");
  }

  const Grid& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  std::size_t size() const noexcept { return values_.size(); }
  double mass() const { return trapezoid_integral(grid_, values_); }

  // Piecewise-linear interpolation; x must lie in the grid domain.
  double at(double x) const {
    if (!grid_.contains(x)) throw DomainError("evaluation outside grid domain");
    const double s = (x - grid_.x_min()) / grid_.dx();
    auto i = static_cast<std::size_t>(std::floor(s));
    if (i + 1 >= grid_.size()) return values_.back();
    const double a = s - static_cast<double>(i);
    return (1.0 - a) * values_[i] + a * values_[i + 1];
  }

 protected:
  Grid grid_;
  std::vector<double> values_;
};

class GridDensity : public GridFunction {
 public:
  GridDensity(Grid grid, std::vector<double> values)
      : GridFunction(grid, std::move(values)) {
    const double m = mass();
    if (std::abs(m - 1.0) > kMassTolerance)
      throw ParameterError("density mass " + std::to_string(m) +
                           " is not 1 within tolerance");
  }
};

inline GridDensity normalize(const GridFunction& d) {
  const double m = d.mass();
  if (!(m > 0.0)) throw DegenerateDensityError("cannot normalize zero mass");
  std::vector<double> v = d.values();
  for (double& x : v) x /= m;
  return GridDensity(d.grid(), std::move(v));
}

inline GridDensity gaussian_density(const Grid& grid, double mean,
                                    double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw ParameterError("gaussian_density: variance must be positive");
  std::vector<double> v(grid.size());
  const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi * variance);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double z = grid.point(i) - mean;
    v[i] = c * std::exp(-0.5 * z * z / variance);
  }
  return normalize(GridFunction(grid, std::move(v)));
}

// Inverse-CDF sampler for the piecewise-linear density through the grid
// samples; the CDF is piecewise quadratic and inverted exactly per cell.
class InverseCdfSampler {
 public:
  explicit InverseCdfSampler(const GridFunction& d)
      : grid_(d.grid()), values_(d.values()), cum_(d.size(), 0.0) {
    const double dx = grid_.dx();
    for (std::size_t i = 0; i + 1 < values_.size(); ++i)
      cum_[i + 1] = cum_[i] + 0.5 * dx * (values_[i] + values_[i + 1]);
    if (!(cum_.back() > 0.0))
      throw DegenerateDensityError("cannot sample from zero mass");
  }

  // Maps p in [0,1) to a point of the domain.
  double quantile(double p) const {
    const double target = p * cum_.back();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
    std::size_t k =
        it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
    k = std::min(k, values_.size() - 2);
    const double dx = grid_.dx();
    const double a = values_[k];
    const double b = values_[k + 1];
    const double r = std::max(0.0, target - cum_[k]);
    const double slope = (b - a) / dx;
    const double disc = a * a + 2.0 * slope * r;
    const double denom = a + std::sqrt(std::max(0.0, disc));
    double tau = denom > 0.0 ? 2.0 * r / denom : 0.0;
    tau = std::clamp(tau, 0.0, dx);
    return std::min(grid_.point(k) + tau, grid_.x_max());
  }

  template <class Gen>
  double operator()(Gen& gen) const {
    return quantile(uniform01(gen));
  }

  // Exact CDF of the piecewise-linear density (normalized).
  double cdf(double x) const {
    if (x <= grid_.x_min()) return 0.0;
    if (x >= grid_.x_max()) return 1.0;
    const double dx = grid_.dx();
    auto k = static_cast<std::size_t>((x - grid_.x_min()) / dx);
    k = std::min(k, values_.size() - 2);
    const double tau = x - grid_.point(k);
    const double a = values_[k];
    const double slope = (values_[k + 1] - a) / dx;
    return (cum_[k] + a * tau + 0.5 * slope * tau * tau) / cum_.back();
  }

 private:
  Grid grid_;
  std::vector<double> values_;
  std::vector<double> cum_;
};

inline std::vector<double> sample_from(const GridFunction& d, std::size_t count,
                                       std::uint64_t seed) {
  if (count < 1) throw ParameterError("sample_from: count must be >= 1");
  InverseCdfSampler sampler(d);
  std::mt19937_64 gen(seed);
  std::vector<double> out(count);
  for (double& x : out) x = sampler(gen);
  return out;
}

}  // namespace robust_lfd
