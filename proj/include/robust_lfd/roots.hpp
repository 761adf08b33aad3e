#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>

namespace robust_lfd::roots {

struct RootResult {
  double x = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Bisection on [lo, hi] where f(lo) and f(hi) have opposite signs (or one
// is zero). Geometric midpoints while the bracket spans decades.
inline std::optional<RootResult> bisect(const std::function<double(double)>& f,
                                        double lo, double hi, double x_tol,
                                        double f_tol, int max_iter = 200) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return RootResult{lo, 0.0, 0, true};
  if (fhi == 0.0) return RootResult{hi, 0.0, 0, true};
  if (std::signbit(flo) == std::signbit(fhi)) return std::nullopt;
  RootResult best{std::abs(flo) < std::abs(fhi) ? lo : hi,
                  std::min(std::abs(flo), std::abs(fhi)), 0, false};
  for (int it = 1; it <= max_iter; ++it) {
    const double mid = (lo > 0.0 && hi > 4.0 * lo) ? std::sqrt(lo * hi)
                                                   : 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::abs(fm) <= std::abs(best.residual)) best = {mid, fm, it, false};
    best.iterations = it;
    if (fm == 0.0) return RootResult{mid, 0.0, it, true};
    if (std::signbit(fm) == std::signbit(flo)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
      fhi = fm;
    }
    if (hi - lo <= x_tol && std::abs(best.residual) <= f_tol) {
      best.converged = true;
      return best;
    }
  }
  best.converged = std::abs(best.residual) <= f_tol;
  return best;
}

// Damped scalar Newton with a sign-tracked bracket. Steps leaving the
// bracket, or failing to reduce |f| after max_halvings, fall back to
// bisection on the bracket.
inline RootResult damped_newton(const std::function<double(double)>& f,
                                const std::function<double(double)>& df,
                                double x0, double lo, double hi, bool increasing,
                                double f_tol, int max_iter = 100,
                                int max_halvings = 60) {
  double x = std::clamp(x0, lo, hi);
  double fx = f(x);
  auto shrink = [&](double at, double fat) {
    const bool root_right = increasing ? fat < 0.0 : fat > 0.0;
    if (root_right)
      lo = at;
    else
      hi = at;
  };
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fx) <= f_tol) return {x, fx, it, true};
    shrink(x, fx);
    const double d = df(x);
    bool accepted = false;
    if (std::isfinite(d) && d != 0.0) {
      double step = -fx / d;
      for (int h = 0; h <= max_halvings; ++h, step *= 0.5) {
        const double xn = x + step;
        if (!(xn > lo && xn < hi)) continue;
        const double fn = f(xn);
        if (std::abs(fn) < std::abs(fx)) {
          x = xn;
          fx = fn;
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      auto b = bisect(f, lo, hi, 0.0, f_tol, 400);
      if (!b) return {x, fx, it, false};
      b->iterations += it;
      return *b;
    }
  }
  return {x, fx, max_iter, std::abs(fx) <= f_tol};
}

struct GoldenResult {
  double x = 0.0;
  double value = 0.0;
  int evaluations = 0;
};

// Minimizes a unimodal f on [a, b] down to bracket width `width`.
template <class F>
GoldenResult golden_section_min(F&& f, double a, double b, double width) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a);
  double d = a + r * (b - a);
  double fc = f(c);
  double fd = f(d);
  int evals = 2;
  while (b - a > width) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
    ++evals;
  }
  return fc <= fd ? GoldenResult{c, fc, evals} : GoldenResult{d, fd, evals};
}

// Damped Newton for F: R^2 -> R^2 with user Jacobian. Stops unconverged when
// the Jacobian is singular or the line search stalls.
struct Newton2Result {
  std::array<double, 2> x{};
  std::array<double, 2> residual{};
  int iterations = 0;
  bool converged = false;
};

inline Newton2Result damped_newton_2d(
    const std::function<std::array<double, 2>(const std::array<double, 2>&)>& F,
    const std::function<std::array<double, 4>(const std::array<double, 2>&)>& J,
    std::array<double, 2> x, double f_tol, int max_iter = 100,
    int max_halvings = 60) {
  auto norm = [](const std::array<double, 2>& v) {
    return std::max(std::abs(v[0]), std::abs(v[1]));
  };
  auto fx = F(x);
  for (int it = 0; it < max_iter; ++it) {
    if (norm(fx) <= f_tol) return {x, fx, it, true};
    const auto j = J(x);  // row-major [a b; c d]
    const double det = j[0] * j[3] - j[1] * j[2];
    if (!std::isfinite(det) || std::abs(det) < 1e-300) return {x, fx, it, false};
    std::array<double, 2> step{-(j[3] * fx[0] - j[1] * fx[1]) / det,
                               -(-j[2] * fx[0] + j[0] * fx[1]) / det};
    bool accepted = false;
    for (int h = 0; h <= max_halvings; ++h) {
      const std::array<double, 2> xn{x[0] + step[0], x[1] + step[1]};
      const auto fn = F(xn);
      if (norm(fn) < norm(fx)) {
        x = xn;
        fx = fn;
        accepted = true;
        break;
      }
      step[0] *= 0.5;
      step[1] *= 0.5;
    }
    if (!accepted) return {x, fx, it, false};
  }
  return {x, fx, max_iter, norm(fx) <= f_tol};
}

}  // namespace robust_lfd::roots
