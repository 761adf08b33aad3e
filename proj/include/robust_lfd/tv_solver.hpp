#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "robust_lfd/divergence.hpp"
#include "robust_lfd/grid.hpp"
#include "robust_lfd/roots.hpp"

namespace robust_lfd {

// Quantile of the ratio values r under the weighted density f at level p.
inline double weighted_ratio_quantile(const GridFunction& f,
                                      const std::vector<double>& r, double p) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return r[a] < r[b]; });
  const double total = f.mass();
  double acc = 0.0;
  for (std::size_t i : idx) {
    acc += f.grid().weight(i) * f[i];
    if (acc >= p * total) return r[i];
  }
  return r[idx.back()];
}

// Total variation neighborhoods of radius eps_j around nominals f_j.
class TvSpec {
 public:
  TvSpec(GridDensity f0, GridDensity f1, double eps0, double eps1)
      : f0_(std::move(f0)), f1_(std::move(f1)), eps0_(eps0), eps1_(eps1) {
    require_same_grid(f0_.grid(), f1_.grid(), "TvSpec: grid mismatch");
    if (!(eps0 >= 0.0 && eps0 < 1.0) || !(eps1 >= 0.0 && eps1 < 1.0))
      throw ParameterError("TvSpec: radii must lie in [0, 1)");
    const double tv = tv_distance(f0_, f1_);
    if (!(tv > eps0 + eps1))
      throw InfeasibleClassError(
          "TvSpec: classes overlap, tv(f0, f1) = " + std::to_string(tv) +
              " <= eps0 + eps1",
          "reduce eps0 + eps1 below the nominal total variation distance");
    ratio_ = likelihood_ratio(f1_, f0_);
  }

  const GridDensity& f0() const noexcept { return f0_; }
  const GridDensity& f1() const noexcept { return f1_; }
  double eps0() const noexcept { return eps0_; }
  double eps1() const noexcept { return eps1_; }
  const Grid& grid() const noexcept { return f0_.grid(); }
  // Nominal likelihood ratio l = f1 / f0 on the grid.
  const std::vector<double>& nominal_ratio() const noexcept { return ratio_; }

 private:
  GridDensity f0_;
  GridDensity f1_;
  double eps0_;
  double eps1_;
  std::vector<double> ratio_;
};

struct TvSolution {
  double t_l = 0.0;
  double t_u = 0.0;
  double beta = 0.0;
  double sigma = 0.0;
  GridDensity lfd0;
  GridDensity lfd1;
  bool degenerate = false;
  std::array<double, 2> residuals{};
  int iterations = 0;
};

namespace detail {

// Integral over {l < t} of (t f0 - f1).
inline double tv_lower_area(const TvSpec& s, double t) {
  const auto& l = s.nominal_ratio();
  double acc = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i)
    if (l[i] < t) acc += s.grid().weight(i) * (t * s.f0()[i] - s.f1()[i]);
  return acc;
}

// Integral over {l > t} of (f1 - t f0).
inline double tv_upper_area(const TvSpec& s, double t) {
  const auto& l = s.nominal_ratio();
  double acc = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i)
    if (l[i] > t) acc += s.grid().weight(i) * (s.f1()[i] - t * s.f0()[i]);
  return acc;
}

inline double f0_mass_where(const TvSpec& s, auto pred) {
  const auto& l = s.nominal_ratio();
  double acc = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i)
    if (pred(l[i])) acc += s.grid().weight(i) * s.f0()[i];
  return acc;
}

}  // namespace detail

inline std::array<double, 2> tv_residuals(const TvSpec& spec, double t_l,
                                          double t_u) {
  if (!(t_l > 0.0) || !(t_u > 0.0) || !std::isfinite(t_l) ||
      !std::isfinite(t_u))
    throw ParameterError("tv_residuals: thresholds must be positive and finite");
  const double e0 = spec.eps0();
  const double e1 = spec.eps1();
  return {detail::tv_lower_area(spec, t_l) - e0 * t_l - e1,
          detail::tv_upper_area(spec, t_u) - e0 * t_u - e1};
}

// Clipped ratio clamp(l, t_l, t_u) on the grid points.
inline std::vector<double> clipped_ratio(const std::vector<double>& l,
                                         double t_l, double t_u) {
  std::vector<double> r(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) r[i] = std::clamp(l[i], t_l, t_u);
  return r;
}

inline TvSolution solve_tv(const TvSpec& spec) {
  const auto& l = spec.nominal_ratio();
  const auto [lmin_it, lmax_it] = std::minmax_element(l.begin(), l.end());
  const double lmin = std::max(*lmin_it, kDensityFloor);
  const double lmax = *lmax_it;
  const double e0 = spec.eps0();
  const double e1 = spec.eps1();

  if (e0 == 0.0 && e1 == 0.0) {
    return TvSolution{lmin, lmax, 0.0, 0.0, spec.f0(), spec.f1(), true,
                      {0.0, 0.0}, 0};
  }

  constexpr double kTol = 1e-12;
  auto rl = [&](double t) {
    return detail::tv_lower_area(spec, t) - e0 * t - e1;
  };
  auto drl = [&](double t) {
    return detail::f0_mass_where(spec, [t](double v) { return v < t; }) - e0;
  };
  auto ru = [&](double t) {
    return detail::tv_upper_area(spec, t) - e0 * t - e1;
  };
  auto dru = [&](double t) {
    return -detail::f0_mass_where(spec, [t](double v) { return v > t; }) - e0;
  };

  const double p = std::clamp(2.0 * e1 + e0, 0.0, 1.0);
  const double tl0 = weighted_ratio_quantile(spec.f0(), l, p);
  const double tu0 = weighted_ratio_quantile(spec.f1(), l, 1.0 - p);

  if (!(rl(1.0) > 0.0) || !(ru(1.0) > 0.0))
    throw InfeasibleClassError("solve_tv: no sign change in threshold bracket",
                               "radii too large for the nominal pair");
  auto lo = roots::damped_newton(rl, drl, tl0, lmin, 1.0, true, kTol);
  auto up = roots::damped_newton(ru, dru, tu0, 1.0, lmax, false, kTol);
  if (!lo.converged || !up.converged || std::abs(lo.residual) > 1e-10 ||
      std::abs(up.residual) > 1e-10)
    throw ConvergenceError("solve_tv: threshold system did not converge",
                           {lo.x, up.x});

  const double t_l = lo.x;
  const double t_u = up.x;
  const double a_l = detail::tv_lower_area(spec, t_l);
  const double a_u = detail::tv_upper_area(spec, t_u);
  if (a_l < 1e-12 || a_u < 1e-12)
    throw InfeasibleClassError(
        "solve_tv: clip region cannot absorb the eps0 mass",
        "increase eps1 or reduce eps0");
  const double beta = e0 / a_l;
  const double sigma = e0 / a_u;

  const Grid& g = spec.grid();
  std::vector<double> v0(g.size());
  std::vector<double> v1(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double f0 = spec.f0()[i];
    const double f1 = spec.f1()[i];
    if (l[i] < t_l) {
      v0[i] = (1.0 - beta * t_l) * f0 + beta * f1;
      v1[i] = t_l * v0[i];
    } else if (l[i] > t_u) {
      v0[i] = (1.0 - sigma * t_u) * f0 + sigma * f1;
      v1[i] = t_u * v0[i];
    } else {
      v0[i] = f0;
      v1[i] = f1;
    }
  }
  const double m0 = trapezoid_integral(g, v0);
  const double m1 = trapezoid_integral(g, v1);
  if (std::abs(m0 - 1.0) > 1e-6 || std::abs(m1 - 1.0) > 1e-6)
    throw ConvergenceError("solve_tv: LFD masses off unity", {t_l, t_u});
  TvSolution sol{t_l,
                 t_u,
                 beta,
                 sigma,
                 GridDensity(g, std::move(v0)),
                 GridDensity(g, std::move(v1)),
                 false,
                 {lo.residual, up.residual},
                 lo.iterations + up.iterations};
  if (std::abs(tv_distance(sol.lfd0, spec.f0()) - e0) > 1e-6 ||
      std::abs(tv_distance(sol.lfd1, spec.f1()) - e1) > 1e-6)
    throw ConvergenceError("solve_tv: LFDs do not saturate the radii",
                           {t_l, t_u});
  return sol;
}

inline double eval_clipped_lrf(const TvSolution& sol, const TvSpec& spec,
                               double x) {
  const Grid& g = spec.grid();
  if (!g.contains(x)) throw DomainError("eval_clipped_lrf: x outside grid");
  const GridFunction l(g, spec.nominal_ratio());
  return std::clamp(l.at(x), sol.t_l, sol.t_u);
}

}  // namespace robust_lfd
