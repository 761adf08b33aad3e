#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robust_lfd/convex_solver.hpp"
#include "robust_lfd/divergence.hpp"
#include "robust_lfd/grid.hpp"
#include "robust_lfd/roots.hpp"

namespace robust_lfd {

// Band model g_j^L <= g_j <= g_j^U. Bounds are nonnegative grid functions,
// not unit mass.
class BandSpec {
 public:
  BandSpec(GridFunction g0_lower, GridFunction g0_upper, GridFunction g1_lower,
           GridFunction g1_upper)
      : l0_(std::move(g0_lower)),
        u0_(std::move(g0_upper)),
        l1_(std::move(g1_lower)),
        u1_(std::move(g1_upper)) {
    const Grid& g = l0_.grid();
    require_same_grid(g, u0_.grid(), "BandSpec: grid mismatch");
    require_same_grid(g, l1_.grid(), "BandSpec: grid mismatch");
    require_same_grid(g, u1_.grid(), "BandSpec: grid mismatch");
    for (std::size_t i = 0; i < g.size(); ++i)
      if (l0_[i] > u0_[i] || l1_[i] > u1_[i])
        throw ParameterError("BandSpec: lower bound exceeds upper bound at x = " +
                             std::to_string(g.point(i)));
    for (int j = 0; j < 2; ++j) {
      const double ml = lower(j).mass();
      const double mu = upper(j).mass();
      if (ml > 1.0 + 1e-12 || mu < 1.0 - 1e-12)
        throw InfeasibleClassError(
            "BandSpec: bounds of hypothesis " + std::to_string(j) +
                " do not sandwich unit mass",
            "need integral(lower) <= 1 <= integral(upper)");
    }
  }

  // Gaussian band (1 - eps_lower) N(mean_j, var) <= g_j <= (1 + eps_upper)
  // N(mean_j, var_upper_j).
  static BandSpec gaussian(const Grid& grid, double eps_lower, double eps_upper,
                           double mean0 = -1.0, double mean1 = 1.0,
                           double var = 4.0, double var_upper0 = 4.0,
                           double var_upper1 = 4.0) {
    auto scaled = [&](double mean, double v, double factor) {
      auto d = gaussian_density(grid, mean, v);
      std::vector<double> out = d.values();
      for (double& x : out) x *= factor;
      return GridFunction(grid, std::move(out));
    };
    return BandSpec(scaled(mean0, var, 1.0 - eps_lower),
                    scaled(mean0, var_upper0, 1.0 + eps_upper),
                    scaled(mean1, var, 1.0 - eps_lower),
                    scaled(mean1, var_upper1, 1.0 + eps_upper));
  }

  const Grid& grid() const noexcept { return l0_.grid(); }
  const GridFunction& lower(int j) const { return j == 0 ? l0_ : l1_; }
  const GridFunction& upper(int j) const { return j == 0 ? u0_ : u1_; }

  // g1^a / g0^b for a, b in {L, U}.
  double ratio(bool upper1, bool upper0, std::size_t i) const {
    const double num = upper1 ? u1_[i] : l1_[i];
    const double den = upper0 ? u0_[i] : l0_[i];
    return num / floored(den);
  }

 private:
  GridFunction l0_, u0_, l1_, u1_;
};

enum class BandType { A, B, C, clipped_limit };

inline std::string_view to_string(BandType t) {
  switch (t) {
    case BandType::A: return "A";
    case BandType::B: return "B";
    case BandType::C: return "C";
    case BandType::clipped_limit: return "clipped_limit";
  }
  return "?";
}

enum class RegionRule {
  ratio_u1_l0,
  const_k2,
  ratio_u1_u0,
  const_k1,
  ratio_l1_u0,
  ratio_l1_l0,
  interior_numeric
};

inline std::string_view to_string(RegionRule r) {
  switch (r) {
    case RegionRule::ratio_u1_l0: return "g1U/g0L";
    case RegionRule::const_k2: return "k2";
    case RegionRule::ratio_u1_u0: return "g1U/g0U";
    case RegionRule::const_k1: return "k1";
    case RegionRule::ratio_l1_u0: return "g1L/g0U";
    case RegionRule::ratio_l1_l0: return "g1L/g0L";
    case RegionRule::interior_numeric: return "interior";
  }
  return "?";
}

// Grid indices [begin, end) and the x-interval they cover.
struct Region {
  std::size_t begin = 0;
  std::size_t end = 0;
  double x_lo = 0.0;
  double x_hi = 0.0;
  RegionRule rule = RegionRule::const_k1;
};

struct BandSolution {
  BandType band_type = BandType::A;
  double k1 = 1.0;
  double k2 = 1.0;
  GridDensity lfd0;
  GridDensity lfd1;
  std::vector<Region> lrf_regions;
};

inline std::vector<Region> compress_regions(const Grid& grid,
                                            const std::vector<RegionRule>& r) {
  std::vector<Region> out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (out.empty() || out.back().rule != r[i]) {
      out.push_back({i, i + 1, grid.point(i), grid.point(i), r[i]});
    } else {
      out.back().end = i + 1;
      out.back().x_hi = grid.point(i);
    }
  }
  return out;
}

// Per-point rule of the Type template implied by the order of (k1, k2):
// k2 < k1 Type-A, k2 > k1 Type-C, k1 == k2 Type-B.
inline std::vector<RegionRule> point_rules(const BandSpec& s, double k1,
                                           double k2) {
  if (!(k1 > 0.0) || !(k2 > 0.0))
    throw ParameterError("classify_regions: k1, k2 must be positive");
  std::vector<RegionRule> r(s.grid().size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ul = s.ratio(true, false, i);
    const double uu = s.ratio(true, true, i);
    const double lu = s.ratio(false, true, i);
    const double ll = s.ratio(false, false, i);
    if (k2 < k1) {
      if (ul <= k2) r[i] = RegionRule::ratio_u1_l0;
      else if (lu >= k1) r[i] = RegionRule::ratio_l1_u0;
      else if (uu < k2) r[i] = RegionRule::const_k2;
      else if (uu > k1) r[i] = RegionRule::const_k1;
      else r[i] = RegionRule::ratio_u1_u0;
    } else if (k2 > k1) {
      if (ul <= k1) r[i] = RegionRule::ratio_u1_l0;
      else if (lu >= k2) r[i] = RegionRule::ratio_l1_u0;
      else if (ll < k1) r[i] = RegionRule::const_k1;
      else if (ll > k2) r[i] = RegionRule::const_k2;
      else r[i] = RegionRule::ratio_l1_l0;
    } else {
      if (ul <= k1) r[i] = RegionRule::ratio_u1_l0;
      else if (lu >= k1) r[i] = RegionRule::ratio_l1_u0;
      else r[i] = RegionRule::const_k1;
    }
  }
  return r;
}

inline std::vector<Region> classify_regions(const BandSpec& spec, double k1,
                                            double k2) {
  return compress_regions(spec.grid(), point_rules(spec, k1, k2));
}

// Grid measure of the points where |lfd1 / lfd0 - 1| < 1e-6, counted over
// consecutive pairs of such points.
inline double band_overlap_diagnostic(const BandSolution& sol) {
  const Grid& g = sol.lfd0.grid();
  auto flat = [&](std::size_t i) {
    return std::abs(sol.lfd1[i] / floored(sol.lfd0[i]) - 1.0) < 1e-6 &&
           sol.lfd0[i] > 0.0;
  };
  double m = 0.0;
  for (std::size_t i = 0; i + 1 < g.size(); ++i)
    if (flat(i) && flat(i + 1)) m += g.dx();
  return m;
}

namespace detail {

// Pointwise optimality: g0 at its lower bound needs r <= k2, at its upper
// bound r >= k2, strictly inside r = k2; g1 mirrors this with k1 and the
// inequalities reversed.
inline bool band_kkt_consistent(const BandSpec& s, const std::vector<double>& g0,
                                const std::vector<double>& g1, double k1,
                                double k2, double slack = 1e-9) {
  for (std::size_t i = 0; i < g0.size(); ++i) {
    const double l0 = s.lower(0)[i], u0 = s.upper(0)[i];
    const double l1 = s.lower(1)[i], u1 = s.upper(1)[i];
    if (g0[i] <= 0.0 && g1[i] <= 0.0) continue;
    const double r = g1[i] / floored(g0[i]);
    const bool lo0 = g0[i] <= l0, hi0 = g0[i] >= u0;
    const bool lo1 = g1[i] <= l1, hi1 = g1[i] >= u1;
    const double s2 = slack * std::max(1.0, k2);
    const double s1 = slack * std::max(1.0, k1);
    if (!(lo0 && hi0)) {
      if (lo0 && r > k2 + s2) return false;
      if (hi0 && r < k2 - s2) return false;
      if (!lo0 && !hi0 && std::abs(r - k2) > s2) return false;
    }
    if (!(lo1 && hi1)) {
      if (lo1 && r < k1 - s1) return false;
      if (hi1 && r > k1 + s1) return false;
      if (!lo1 && !hi1 && std::abs(r - k1) > s1) return false;
    }
  }
  return true;
}

// Template LFDs: g0 = clamp(a / k2, L0, U0), g1 = clamp(k1 b, L1, U1) with
// (a, b) = (U1, U0) for Type-A and (L1, L0) for Type-C.
struct TemplateFit {
  double k1 = 0.0, k2 = 0.0;
  std::vector<double> g0, g1;
  bool ok = false;
};

inline TemplateFit fit_template(const BandSpec& s, bool type_a) {
  const Grid& grid = s.grid();
  const std::size_t n = grid.size();
  const GridFunction& a = type_a ? s.upper(1) : s.lower(1);
  const GridFunction& b = type_a ? s.upper(0) : s.lower(0);
  auto g0_at = [&](double k2, std::size_t i) {
    return std::clamp(a[i] / k2, s.lower(0)[i], s.upper(0)[i]);
  };
  auto g1_at = [&](double k1, std::size_t i) {
    return std::clamp(k1 * b[i], s.lower(1)[i], s.upper(1)[i]);
  };
  // Unit-mass equations in (log k1, log k2); the Jacobian is diagonal.
  auto F = [&](const std::array<double, 2>& z) {
    const double k1 = std::exp(z[0]), k2 = std::exp(z[1]);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m0 += grid.weight(i) * g0_at(k2, i);
      m1 += grid.weight(i) * g1_at(k1, i);
    }
    return std::array<double, 2>{m1 - 1.0, m0 - 1.0};
  };
  auto J = [&](const std::array<double, 2>& z) {
    const double k1 = std::exp(z[0]), k2 = std::exp(z[1]);
    double d1 = 0.0, d0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v0 = a[i] / k2, v1 = k1 * b[i];
      if (v0 > s.lower(0)[i] && v0 < s.upper(0)[i]) d0 -= grid.weight(i) * v0;
      if (v1 > s.lower(1)[i] && v1 < s.upper(1)[i]) d1 += grid.weight(i) * v1;
    }
    return std::array<double, 4>{d1, 0.0, 0.0, d0};
  };
  TemplateFit fit;
  auto nr = roots::damped_newton_2d(F, J, {0.0, 0.0}, 1e-12);
  std::array<double, 2> z = nr.x;
  if (!nr.converged) {
    // Flat Jacobian where a clamp saturates: fall back to bisection per
    // coordinate on a wide log bracket.
    for (int c = 0; c < 2; ++c) {
      auto f = [&](double t) {
        std::array<double, 2> zz = z;
        zz[static_cast<std::size_t>(c)] = t;
        return F(zz)[static_cast<std::size_t>(c)];
      };
      auto r = roots::bisect(f, -60.0, 60.0, 1e-15, 1e-12, 400);
      if (!r || !r->converged) return fit;
      z[static_cast<std::size_t>(c)] = r->x;
    }
  }
  fit.k1 = std::exp(z[0]);
  fit.k2 = std::exp(z[1]);
  fit.g0.resize(n);
  fit.g1.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.g0[i] = g0_at(fit.k2, i);
    fit.g1[i] = g1_at(fit.k1, i);
  }
  const auto res = F(z);
  fit.ok = std::abs(res[0]) <= 1e-10 && std::abs(res[1]) <= 1e-10 &&
           (type_a ? fit.k2 <= fit.k1 : fit.k1 <= fit.k2) &&
           band_kkt_consistent(s, fit.g0, fit.g1, fit.k1, fit.k2);
  return fit;
}

// Type-B outer regions: R1 = {U1/L0 <= k} pinned to (L0, U1), R3 =
// {L1/U0 >= k} pinned to (U0, L1). The middle carries g1 = k g0, so k is
// the root of k * mass0(middle) - mass1(middle).
inline double type_b_balance(const BandSpec& s, double k) {
  const Grid& g = s.grid();
  double rest0 = 1.0, rest1 = 1.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w = g.weight(i);
    if (s.ratio(true, false, i) <= k) {
      rest0 -= w * s.lower(0)[i];
      rest1 -= w * s.upper(1)[i];
    } else if (s.ratio(false, true, i) >= k) {
      rest0 -= w * s.upper(0)[i];
      rest1 -= w * s.lower(1)[i];
    }
  }
  return k * rest0 - rest1;
}

inline BandType label_with_limit(const std::vector<RegionRule>& rules,
                                 BandType t) {
  const bool first = std::find(rules.begin(), rules.end(),
                               RegionRule::ratio_u1_l0) != rules.end();
  const bool last = std::find(rules.begin(), rules.end(),
                              RegionRule::ratio_l1_u0) != rules.end();
  return (!first && !last) ? BandType::clipped_limit : t;
}

}  // namespace detail

// Full-grid convex program over the band at a given u; no template used.
inline InnerSolution solve_band_numeric(const BandSpec& spec, UAffinityParam u,
                                        const SolverOptions& opt = {}) {
  ConvexProblem p(spec.grid());
  for (int j = 0; j < 2; ++j) {
    p.lower[static_cast<std::size_t>(j)] = spec.lower(j).values();
    p.upper[static_cast<std::size_t>(j)] = spec.upper(j).values();
  }
  return maximize_affinity_at_u(p, u, opt);
}

inline BandSolution solve_band(const BandSpec& spec) {
  const Grid& grid = spec.grid();
  auto finish = [&](BandType t, double k1, double k2, std::vector<double> g0,
                    std::vector<double> g1,
                    const std::vector<RegionRule>& rules) {
    BandSolution sol{t, k1, k2, GridDensity(grid, std::move(g0)),
                     GridDensity(grid, std::move(g1)),
                     compress_regions(grid, rules)};
    const auto r = likelihood_ratio(sol.lfd1, sol.lfd0);
    if (std::all_of(r.begin(), r.end(),
                    [](double v) { return std::abs(v - 1.0) < 1e-9; }))
      throw ClassOverlapError("solve_band: robust likelihood ratio is 1");
    return sol;
  };

  for (bool type_a : {true, false}) {
    auto fit = detail::fit_template(spec, type_a);
    if (!fit.ok) continue;
    const auto rules = point_rules(spec, fit.k1, fit.k2);
    const BandType t = detail::label_with_limit(
        rules, type_a ? BandType::A : BandType::C);
    return finish(t, fit.k1, fit.k2, std::move(fit.g0), std::move(fit.g1),
                  rules);
  }

  // Type-B: k from the outer-region balance, then the middle by convex
  // optimization with the outer regions pinned.
  auto root = roots::bisect(
      [&](double t) { return detail::type_b_balance(spec, std::exp(t)); }, -60.0,
      60.0, 1e-14, 1e-13, 400);
  if (!root)
    throw InfeasibleClassError("solve_band: no Type-A, -B or -C solution",
                               "check that the bands leave room for unit mass");
  const double k = std::exp(root->x);
  ConvexProblem p(grid);
  for (int j = 0; j < 2; ++j) {
    p.lower[static_cast<std::size_t>(j)] = spec.lower(j).values();
    p.upper[static_cast<std::size_t>(j)] = spec.upper(j).values();
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (spec.ratio(true, false, i) <= k) {
      p.upper[0][i] = spec.lower(0)[i];
      p.lower[1][i] = spec.upper(1)[i];
    } else if (spec.ratio(false, true, i) >= k) {
      p.lower[0][i] = spec.upper(0)[i];
      p.upper[1][i] = spec.lower(1)[i];
    }
  }
  InnerSolution inner = [&] {
    try {
      return maximize_affinity_at_u(p, 0.5);
    } catch (const InfeasibleClassError& e) {
      throw InfeasibleClassError(
          std::string("solve_band: Type-B middle infeasible: ") + e.what(),
          e.hint());
    }
  }();
  // Project the middle onto {g1 = k g0} inside the box; the interior point
  // iterate is only stationary to barrier accuracy.
  std::vector<RegionRule> rules(grid.size(), RegionRule::interior_numeric);
  std::vector<double> g0 = inner.lfd0.values();
  std::vector<double> g1 = inner.lfd1.values();
  std::vector<double> lo(grid.size()), hi(grid.size());
  double need = 1.0, have = 0.0, up = 0.0, down = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = grid.weight(i);
    if (spec.ratio(true, false, i) <= k) {
      rules[i] = RegionRule::ratio_u1_l0;
      need -= w * g0[i];
      continue;
    }
    if (spec.ratio(false, true, i) >= k) {
      rules[i] = RegionRule::ratio_l1_u0;
      need -= w * g0[i];
      continue;
    }
    lo[i] = std::max(spec.lower(0)[i], spec.lower(1)[i] / k);
    hi[i] = std::min(spec.upper(0)[i], spec.upper(1)[i] / k);
    g0[i] = std::clamp(g0[i], lo[i], hi[i]);
    have += w * g0[i];
    up += w * (hi[i] - g0[i]);
    down += w * (g0[i] - lo[i]);
  }
  const double gap = need - have;
  const double theta = gap >= 0.0 ? (up > 0.0 ? gap / up : 0.0)
                                  : (down > 0.0 ? gap / down : 0.0);
  if (std::abs(theta) > 1.0 + 1e-9)
    throw InfeasibleClassError("solve_band: Type-B middle cannot carry the mass",
                               "bands too narrow around the balance ratio");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (rules[i] != RegionRule::interior_numeric) continue;
    g0[i] += theta * (gap >= 0.0 ? hi[i] - g0[i] : g0[i] - lo[i]);
    g1[i] = k * g0[i];
  }
  const double k1 = k;
  return finish(BandType::B, k1, k1, std::move(g0), std::move(g1), rules);
}

}  // namespace robust_lfd
