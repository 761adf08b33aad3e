#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "robust_lfd/grid.hpp"

namespace robust_lfd {

// Exponent u of the u-affinity, restricted to the open unit interval.
class UAffinityParam {
 public:
  UAffinityParam(double u) : u_(u) {  // NOLINT: implicit from double by design
    if (!(u > 0.0 && u < 1.0))
      throw ParameterError("u must lie in (0, 1), got " + std::to_string(u));
  }
  double value() const noexcept { return u_; }
  operator double() const noexcept { return u_; }  // NOLINT

 private:
  double u_;
};

enum class FDivergenceKind { kl, reverse_kl, squared_hellinger };

inline constexpr FDivergenceKind kAllFDivergences[] = {
    FDivergenceKind::kl, FDivergenceKind::reverse_kl,
    FDivergenceKind::squared_hellinger};

inline std::string_view to_string(FDivergenceKind k) {
  switch (k) {
    case FDivergenceKind::kl: return "kl";
    case FDivergenceKind::reverse_kl: return "reverse_kl";
    case FDivergenceKind::squared_hellinger: return "squared_hellinger";
  }
  return "?";
}

// Integrand g1^u g0^(1-u) at one point, floored.
inline double affinity_term(double g0, double g1, double u) {
  if (g0 <= 0.0 || g1 <= 0.0) {
    // 0^a with a in (0,1) is 0; keep the floor semantics explicit.
    return std::pow(floored(g1), u) * std::pow(floored(g0), 1.0 - u);
  }
  return std::exp(u * std::log(g1) + (1.0 - u) * std::log(g0));
}

inline double u_affinity(const GridFunction& g0, const GridFunction& g1,
                         UAffinityParam u) {
  require_same_grid(g0.grid(), g1.grid(), "u_affinity: grid mismatch");
  std::vector<double> v(g0.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = affinity_term(g0[i], g1[i], u);
  return trapezoid_integral(g0.grid(), v);
}

inline double tv_distance(const GridFunction& g, const GridFunction& f) {
  require_same_grid(g.grid(), f.grid(), "tv_distance: grid mismatch");
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(g[i] - f[i]);
  return 0.5 * trapezoid_integral(g.grid(), v);
}

// D_f(G0, G1) = integral of f(g0/g1) g1.
//   kl:                f(t) = t log t    -> KL(G0 || G1)
//   reverse_kl:        f(t) = -log t     -> KL(G1 || G0)
//   squared_hellinger: f(t) = (sqrt t - 1)^2
inline double f_divergence(const GridFunction& g0, const GridFunction& g1,
                           FDivergenceKind kind) {
  require_same_grid(g0.grid(), g1.grid(), "f_divergence: grid mismatch");
  std::vector<double> v(g0.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = g0[i];
    const double b = g1[i];
    switch (kind) {
      case FDivergenceKind::kl:
        v[i] = a > 0.0 ? a * std::log(a / floored(b)) : 0.0;
        break;
      case FDivergenceKind::reverse_kl:
        v[i] = b > 0.0 ? b * std::log(b / floored(a)) : 0.0;
        break;
      case FDivergenceKind::squared_hellinger: {
        const double d = std::sqrt(a) - std::sqrt(b);
        v[i] = d * d;
        break;
      }
    }
  }
  return trapezoid_integral(g0.grid(), v);
}

inline std::vector<double> likelihood_ratio(const GridFunction& g1,
                                            const GridFunction& g0) {
  require_same_grid(g0.grid(), g1.grid(), "likelihood_ratio: grid mismatch");
  std::vector<double> r(g0.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = g1[i] / floored(g0[i]);
  return r;
}

}  // namespace robust_lfd
