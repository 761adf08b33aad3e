#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "robust_lfd/divergence.hpp"
#include "robust_lfd/grid.hpp"
#include "robust_lfd/roots.hpp"
#include "robust_lfd/samplers.hpp"

// Lower and upper eps-contamination classes: band models with one active
// bound, g_j^L = (1 - eps_j) f_j or g_j^U = (1 + eps_j) f_j.
//
// Threshold naming: only (t_l, t_u) are stored. For the lower model the
// classical pair is t_l = k1, t_u = 1/k2; for the upper model t_l = 1/k2,
// t_u = k1.

namespace robust_lfd {

enum class ContaminationDirection { lower, upper };

class ContaminationSpec {
 public:
  ContaminationSpec(ContaminationDirection dir, GridDensity f0, GridDensity f1,
                    double eps0, double eps1)
      : dir_(dir), f0_(std::move(f0)), f1_(std::move(f1)), eps0_(eps0),
        eps1_(eps1) {
    require_same_grid(f0_.grid(), f1_.grid(), "ContaminationSpec: grid mismatch");
    if (dir == ContaminationDirection::lower) {
      if (!(eps0 >= 0.0 && eps0 < 1.0) || !(eps1 >= 0.0 && eps1 < 1.0))
        throw ParameterError("lower contamination: eps must lie in [0, 1)");
    } else if (!(eps0 > 0.0) || !(eps1 > 0.0) || !std::isfinite(eps0) ||
               !std::isfinite(eps1)) {
      throw ParameterError("upper contamination: eps must be positive");
    }
    const double s0 = dir == ContaminationDirection::lower ? 1.0 - eps0 : 1.0 + eps0;
    const double s1 = dir == ContaminationDirection::lower ? 1.0 - eps1 : 1.0 + eps1;
    std::vector<double> b0 = f0_.values();
    std::vector<double> b1 = f1_.values();
    for (double& v : b0) v *= s0;
    for (double& v : b1) v *= s1;
    bound0_ = std::move(b0);
    bound1_ = std::move(b1);
    ratio_.resize(bound0_.size());
    for (std::size_t i = 0; i < ratio_.size(); ++i)
      ratio_[i] = bound1_[i] / floored(bound0_[i]);
  }

  ContaminationDirection direction() const noexcept { return dir_; }
  const GridDensity& f0() const noexcept { return f0_; }
  const GridDensity& f1() const noexcept { return f1_; }
  double eps0() const noexcept { return eps0_; }
  double eps1() const noexcept { return eps1_; }
  const Grid& grid() const noexcept { return f0_.grid(); }
  const std::vector<double>& bound0() const noexcept { return bound0_; }
  const std::vector<double>& bound1() const noexcept { return bound1_; }
  // l = g1 / g0 of the active bounds (equals the scaled nominal ratio).
  const std::vector<double>& bound_ratio() const noexcept { return ratio_; }

  ContaminationSpec swapped() const {
    return ContaminationSpec(dir_, f1_, f0_, eps1_, eps0_);
  }

  // Class member (1 -/+ eps_j) f_j +/- eps_j h for hypothesis j.
  GridDensity member(int j, const GridFunction& h) const {
    require_same_grid(h.grid(), grid(), "contamination member: grid mismatch");
    const auto& f = j == 0 ? f0_ : f1_;
    const double e = j == 0 ? eps0_ : eps1_;
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = dir_ == ContaminationDirection::lower ? (1.0 - e) * f[i] + e * h[i]
                                                  : (1.0 + e) * f[i] - e * h[i];
      if (v[i] < 0.0) {
        if (v[i] < -1e-15 * (1.0 + f[i]))
          throw ParameterError("contamination h infeasible for upper class");
        v[i] = 0.0;
      }
    }
    return GridDensity(grid(), std::move(v));
  }

 private:
  ContaminationDirection dir_;
  GridDensity f0_;
  GridDensity f1_;
  double eps0_;
  double eps1_;
  std::vector<double> bound0_;
  std::vector<double> bound1_;
  std::vector<double> ratio_;
};

struct ContaminationSolution {
  double t_l = 0.0;
  double t_u = 0.0;
  GridDensity lfd0;
  GridDensity lfd1;
  bool degenerate = false;
  std::array<double, 2> residuals{};
};

namespace detail {

// Mass of lfd0 / lfd1 as functions of their threshold, minus one.
inline double contamination_mass0(const ContaminationSpec& s, double t) {
  const auto& l = s.bound_ratio();
  const auto& b0 = s.bound0();
  const auto& b1 = s.bound1();
  double acc = 0.0;
  const bool lower = s.direction() == ContaminationDirection::lower;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double w = s.grid().weight(i);
    if (lower)
      acc += w * (l[i] <= t ? b0[i] : b1[i] / t);
    else
      acc += w * (l[i] >= t ? b0[i] : b1[i] / t);
  }
  return acc - 1.0;
}

inline double contamination_mass1(const ContaminationSpec& s, double t) {
  const auto& l = s.bound_ratio();
  const auto& b0 = s.bound0();
  const auto& b1 = s.bound1();
  double acc = 0.0;
  const bool lower = s.direction() == ContaminationDirection::lower;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double w = s.grid().weight(i);
    if (lower)
      acc += w * (l[i] >= t ? b1[i] : t * b0[i]);
    else
      acc += w * (l[i] <= t ? b1[i] : t * b0[i]);
  }
  return acc - 1.0;
}

inline double solve_monotone(const std::function<double(double)>& f, double lo,
                             double hi, const char* name) {
  constexpr double kFTol = 1e-12;
  if (std::abs(f(lo)) <= kFTol) return lo;
  if (std::abs(f(hi)) <= kFTol) return hi;
  auto r = roots::bisect(f, lo, hi, 1e-12, kFTol, 200);
  if (!r)
    throw InfeasibleClassError(std::string(name) +
                                   ": no sign change in threshold bracket",
                               "contamination radii too large");
  // Keep bisecting past the 1e-12 bracket when the residual is still large.
  if (std::abs(r->residual) > 1e-10) {
    auto fine = roots::bisect(f, lo, hi, 0.0, 1e-12, 400);
    if (fine && std::abs(fine->residual) < std::abs(r->residual)) r = fine;
  }
  if (std::abs(r->residual) > 1e-10)
    throw ConvergenceError(std::string(name) + ": residual above 1e-10",
                           {r->x});
  return r->x;
}

inline ContaminationSolution solve_contamination_impl(
    const ContaminationSpec& spec) {
  const auto& l = spec.bound_ratio();
  const auto [mn, mx] = std::minmax_element(l.begin(), l.end());
  const double lmin = std::max(*mn, kDensityFloor);
  const double lmax = *mx;
  const bool lower = spec.direction() == ContaminationDirection::lower;

  if (lower && spec.eps0() == 0.0 && spec.eps1() == 0.0)
    return {lmin, lmax, spec.f0(), spec.f1(), true, {0.0, 0.0}};

  auto m0 = [&](double t) { return contamination_mass0(spec, t); };
  auto m1 = [&](double t) { return contamination_mass1(spec, t); };
  // Lower model: lfd0's threshold is t_u, lfd1's is t_l; upper model swaps.
  const double ta = solve_monotone(m0, lmin, lmax, "contamination lfd0");
  const double tb = solve_monotone(m1, lmin, lmax, "contamination lfd1");
  const double t_l = lower ? tb : ta;
  const double t_u = lower ? ta : tb;
  if (!(t_l < t_u))
    throw ClassOverlapError("contamination: t_l >= t_u, classes overlap");

  const auto& b0 = spec.bound0();
  const auto& b1 = spec.bound1();
  std::vector<double> v0(l.size());
  std::vector<double> v1(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (lower) {
      v0[i] = l[i] <= t_u ? b0[i] : b1[i] / t_u;
      v1[i] = l[i] >= t_l ? b1[i] : t_l * b0[i];
    } else {
      v0[i] = l[i] >= t_l ? b0[i] : b1[i] / t_l;
      v1[i] = l[i] <= t_u ? b1[i] : t_u * b0[i];
    }
  }
  const Grid& g = spec.grid();
  if (std::abs(trapezoid_integral(g, v0) - 1.0) > 1e-8 ||
      std::abs(trapezoid_integral(g, v1) - 1.0) > 1e-8)
    throw ConvergenceError("contamination: LFD masses off unity", {t_l, t_u});
  const std::array<double, 2> res = lower ? std::array{m1(t_l), m0(t_u)}
                                          : std::array{m0(t_l), m1(t_u)};
  return {t_l, t_u, GridDensity(g, std::move(v0)), GridDensity(g, std::move(v1)),
          false, res};
}

}  // namespace detail

inline ContaminationSolution solve_lower_contamination(
    const ContaminationSpec& spec) {
  if (spec.direction() != ContaminationDirection::lower)
    throw ParameterError("solve_lower_contamination: spec is not lower");
  return detail::solve_contamination_impl(spec);
}

inline ContaminationSolution solve_upper_contamination(
    const ContaminationSpec& spec) {
  if (spec.direction() != ContaminationDirection::upper)
    throw ParameterError("solve_upper_contamination: spec is not upper");
  return detail::solve_contamination_impl(spec);
}

inline ContaminationSolution solve_contamination(const ContaminationSpec& spec) {
  return detail::solve_contamination_impl(spec);
}

// Robust LRF clamp(l, t_l, t_u) on the grid.
inline std::vector<double> robust_lrf(const ContaminationSolution& sol,
                                      const ContaminationSpec& spec) {
  std::vector<double> r(spec.bound_ratio().size());
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = std::clamp(spec.bound_ratio()[i], sol.t_l, sol.t_u);
  return r;
}

struct OrderingWitness {
  double g0_member = 0.0;  // G0[l^ < t]
  double g0_lfd = 0.0;     // G0^[l^ < t]
  double g1_member = 0.0;  // G1[l^ < t]
  double g1_lfd = 0.0;     // G1^[l^ < t]
};

inline OrderingWitness smr_ordering_witness(const ContaminationSolution& sol,
                                            const ContaminationSpec& spec,
                                            double t, const GridFunction& h0,
                                            const GridFunction& h1) {
  require_same_grid(h0.grid(), spec.grid(), "ordering witness: grid mismatch");
  require_same_grid(h1.grid(), spec.grid(), "ordering witness: grid mismatch");
  const auto g0 = spec.member(0, h0);
  const auto g1 = spec.member(1, h1);
  const auto lhat = robust_lrf(sol, spec);
  const Grid& grid = spec.grid();
  std::vector<double> a(lhat.size()), b(lhat.size()), c(lhat.size()),
      d(lhat.size());
  for (std::size_t i = 0; i < lhat.size(); ++i) {
    const bool in = lhat[i] < t;
    a[i] = in ? g0[i] : 0.0;
    b[i] = in ? sol.lfd0[i] : 0.0;
    c[i] = in ? g1[i] : 0.0;
    d[i] = in ? sol.lfd1[i] : 0.0;
  }
  return {trapezoid_integral(grid, a), trapezoid_integral(grid, b),
          trapezoid_integral(grid, c), trapezoid_integral(grid, d)};
}

inline OrderingWitness smr_ordering_witness(const ContaminationSolution& sol,
                                            const ContaminationSpec& spec,
                                            double t, const GridFunction& h) {
  return smr_ordering_witness(sol, spec, t, h, h);
}

// Seeded contamination density h for hypothesis j that keeps the member
// inside the class: any density for the lower model; h <= (1+eps)f/eps for
// the upper model, obtained as a spline tilt of f with ratio range bounded.
inline GridDensity random_contamination(const ContaminationSpec& spec, int j,
                                        std::uint64_t seed) {
  if (spec.direction() == ContaminationDirection::lower) {
    SplitMix64 gen(derive_seed(seed, 17));
    const auto& f = j == 0 ? spec.f1() : spec.f0();
    // Mix "anywhere" shapes with shapes that sit under the other nominal.
    if (uniform01(gen) < 0.5) return random_spline_density(spec.grid(), seed);
    return random_tilt(f, seed, 0.05, 1.0);
  }
  const double e = j == 0 ? spec.eps0() : spec.eps1();
  const double cap = (1.0 + e) / e;
  return random_tilt(j == 0 ? spec.f0() : spec.f1(), seed, 1.0,
                     std::min(cap, 50.0));
}

}  // namespace robust_lfd
