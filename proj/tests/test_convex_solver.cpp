#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "robust_lfd/convex_solver.hpp"
#include "robust_lfd/tv_solver.hpp"

using namespace robust_lfd;

namespace {

constexpr auto H0 = Hypothesis::h0;
constexpr auto H1 = Hypothesis::h1;

ConvexProblem moment_problem(const Grid& g) {
  ConvexProblem p(g);
  p.constraints = {moment_constraint(g, 1, -2.0, -0.5, H0), moment_constraint(g, 2, 0.0, 2.0, H0),
                   moment_constraint(g, 1, 0.5, 2.0, H1), moment_constraint(g, 2, 2.0, 4.0, H1)};
  return p;
}

ConvexProblem ppoint_problem(const Grid& g) {
  ConvexProblem p(g);
  p.constraints = {ppoint_constraint(g, -5.0, 3.0, 0.0, 0.3, H0),
                   ppoint_constraint(g, 0.0, 3.0, 0.8, 1.0, H1)};
  return p;
}

const InnerSolution& moment_at(double u) {
  static std::map<double, InnerSolution> cache;
  auto it = cache.find(u);
  if (it == cache.end())
    it = cache.emplace(u, maximize_affinity_at_u(moment_problem(Grid::desk()), u)).first;
  return it->second;
}

// Weak-duality upper bound. For multipliers gamma on the moment rows the
// pointwise sup of w [g1^u g0^(1-u) - a0 g0 - a1 g1] over g >= 0 is zero iff
// (a0 / (1-u))^(1-u) (a1 / u)^u >= 1, so any gamma and mass multipliers
// (nu0, nu1) meeting that on every node bound the primal optimum from above.
class DualBound {
 public:
  struct Row {
    int j;
    std::vector<double> h;
    double lo, hi;
  };
  DualBound(std::vector<Row> rows, double u) : rows_(std::move(rows)), u_(u) {}

  double operator()(const std::vector<double>& gamma) const {
    const std::size_t n = rows_.front().h.size();
    std::vector<double> s0(n, 0.0), s1(n, 0.0);
    double cost = 0;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      auto& s = rows_[k].j == 0 ? s0 : s1;
      for (std::size_t i = 0; i < n; ++i) s[i] += gamma[k] * rows_[k].h[i];
      cost -= gamma[k] * (gamma[k] >= 0 ? rows_[k].lo : rows_[k].hi);
    }
    const double u = u_;
    // Smallest nu1 for a given nu0; convex in nu0.
    auto nu1_of = [&](double nu0) {
      double m = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        const double a0 = nu0 - s0[i];
        m = std::max(m, s1[i] + u * std::pow((1 - u) / a0, (1 - u) / u));
      }
      return m;
    };
    const double base = *std::max_element(s0.begin(), s0.end());
    double lo = base + 1e-12, hi = base + 100.0;
    const double phi = 0.5 * (std::sqrt(5.0) - 1);
    double c = hi - phi * (hi - lo), e = lo + phi * (hi - lo);
    double fc = c + nu1_of(c), fe = e + nu1_of(e);
    for (int it = 0; it < 90; ++it) {
      if (fc < fe) hi = e, e = c, fe = fc, c = hi - phi * (hi - lo), fc = c + nu1_of(c);
      else lo = c, c = e, fc = fe, e = lo + phi * (hi - lo), fe = e + nu1_of(e);
    }
    return cost + std::min(fc, fe);
  }

  // Nelder-Mead over gamma with restarts; every evaluated point is a valid bound.
  double minimize(std::size_t restarts = 8) const {
    const std::size_t d = rows_.size();
    std::vector<double> x0(d, 0.0);
    double step = 1.0, best = (*this)(x0);
    for (std::size_t r = 0; r < restarts; ++r, step *= 0.5) {
      std::vector<std::vector<double>> sim(d + 1, x0);
      for (std::size_t k = 0; k < d; ++k) sim[k + 1][k] += step;
      std::vector<double> f(d + 1);
      for (std::size_t k = 0; k <= d; ++k) f[k] = (*this)(sim[k]);
      for (int it = 0; it < 500; ++it) {
        std::vector<std::size_t> ord(d + 1);
        for (std::size_t k = 0; k <= d; ++k) ord[k] = k;
        std::sort(ord.begin(), ord.end(), [&](auto a, auto b) { return f[a] < f[b]; });
        const auto worst = ord[d];
        std::vector<double> cen(d, 0.0);
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t q = 0; q < d; ++q) cen[q] += sim[ord[k]][q] / d;
        auto along = [&](double t) {
          std::vector<double> y(d);
          for (std::size_t q = 0; q < d; ++q) y[q] = cen[q] + t * (sim[worst][q] - cen[q]);
          return y;
        };
        auto xr = along(-1);
        const double fr = (*this)(xr);
        if (fr < f[ord[0]]) {
          auto xe = along(-2);
          const double fe = (*this)(xe);
          if (fe < fr) sim[worst] = xe, f[worst] = fe;
          else sim[worst] = xr, f[worst] = fr;
        } else if (fr < f[ord[d - 1]]) {
          sim[worst] = xr, f[worst] = fr;
        } else {
          auto xc = along(0.5);
          const double fcn = (*this)(xc);
          if (fcn < f[worst]) {
            sim[worst] = xc, f[worst] = fcn;
          } else {
            for (std::size_t k = 1; k <= d; ++k) {
              for (std::size_t q = 0; q < d; ++q)
                sim[ord[k]][q] = 0.5 * (sim[ord[k]][q] + sim[ord[0]][q]);
              f[ord[k]] = (*this)(sim[ord[k]]);
            }
          }
        }
      }
      const auto k = std::min_element(f.begin(), f.end()) - f.begin();
      x0 = sim[k];
      best = std::min(best, f[k]);
    }
    return best;
  }

 private:
  std::vector<Row> rows_;
  double u_;
};

}  // namespace

TEST(Constraints, MomentAndIntervalWeights) {
  const Grid g(0.0, 4.0, 5);
  const auto m = moment_constraint(g, 2, 0.0, 1.0, H1);
  EXPECT_EQ(m.weights, (std::vector<double>{0, 1, 4, 9, 16}));
  EXPECT_EQ(m.target, H1);
  // Half-open [1, 3): includes x = 1, excludes x = 3.
  const auto p = ppoint_constraint(g, 1.0, 3.0, 0.0, 0.5, H0);
  EXPECT_EQ(p.weights, (std::vector<double>{0, 1, 1, 0, 0}));
}

TEST(MaximizeAffinity, NoConstraintsIsOverlap) {
  EXPECT_THROW(maximize_affinity_at_u(ConvexProblem(Grid::desk()), 0.5), ClassOverlapError);
}

TEST(MaximizeAffinity, MirrorSymmetricProgram) {
  const Grid g = Grid::desk();
  const auto s = maximize_affinity_at_u({moment_constraint(g, 1, -1, -1, H0)},
                                        {moment_constraint(g, 1, 1, 1, H1)}, g, 0.5);
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(s.lfd0[i], s.lfd1[g.size() - 1 - i], 1e-5);
}

TEST(MaximizeAffinity, ToyGridMatchesDualBound) {
  const Grid g(-6.0, 6.0, 41);
  const auto p = moment_problem(g);
  for (double u : {0.3, 0.5, 0.7}) {
    const auto s = maximize_affinity_at_u(p, u);
    EXPECT_LE(s.kkt_residual, 1e-6);
    EXPECT_LE(s.max_violation, 1e-7);
    std::vector<DualBound::Row> rows;
    for (const auto& c : p.constraints) {
      std::vector<double> h(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) h[i] = c.weights[i];
      rows.push_back({static_cast<int>(c.target), h, c.lower, c.upper});
    }
    const double bound = DualBound(rows, u).minimize();
    EXPECT_LE(s.objective, bound + 1e-9) << "u " << u;
    EXPECT_NEAR(s.objective, bound, 1e-6) << "u " << u;
  }
}

TEST(MaximizeAffinity, CertificatesOnDeskPresets) {
  for (const auto& p : {moment_problem(Grid::desk()), ppoint_problem(Grid::desk())}) {
    const auto s = maximize_affinity_at_u(p, 0.5);
    EXPECT_LE(s.kkt_residual, 1e-6);
    EXPECT_LE(s.max_violation, 1e-7);
    EXPECT_NEAR(s.lfd0.mass(), 1.0, 1e-8);
    EXPECT_NEAR(s.lfd1.mass(), 1.0, 1e-8);
    for (std::size_t i = 0; i < s.lfd0.size(); ++i) {
      EXPECT_GE(s.lfd0[i], 0.0);
      EXPECT_GE(s.lfd1[i], 0.0);
    }
    EXPECT_FALSE(s.active_constraints.empty());
  }
}

TEST(MaximizeAffinity, TwoStartsAgree) {
  for (const auto& p : {moment_problem(Grid::desk()), ppoint_problem(Grid::desk())}) {
    SolverOptions other;
    other.start_seed = 7;
    const auto a = maximize_affinity_at_u(p, 0.5);
    const auto b = maximize_affinity_at_u(p, 0.5, other);
    EXPECT_LE(sup_distance(a.lfd0, b.lfd0), 1e-5);
    EXPECT_LE(sup_distance(a.lfd1, b.lfd1), 1e-5);
  }
}

TEST(MaximizeAffinity, PpointObjectiveMatchesCellMassClosedForm) {
  // Optimal cell masses: P0[0,3) = 0.3, P1[0,3) = 0.8, nothing on [-5,0),
  // the rest outside [-5,3); within a cell the densities are proportional.
  const auto p = ppoint_problem(Grid::desk());
  for (double u : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double closed = std::pow(0.3, 1 - u) * std::pow(0.8, u) +
                          std::pow(0.7, 1 - u) * std::pow(0.2, u);
    EXPECT_NEAR(maximize_affinity_at_u(p, u).objective, closed, 1e-7) << "u " << u;
  }
}

TEST(MaximizeAffinity, InfeasibleReportsIrreducibleSubset) {
  const Grid g = Grid::desk();
  ConvexProblem p(g);
  p.constraints = {moment_constraint(g, 1, 1.0, kInf, H0), moment_constraint(g, 2, -kInf, 0.5, H0),
                   moment_constraint(g, 1, 0.5, kInf, H1)};
  try {
    maximize_affinity_at_u(p, 0.5);
    FAIL() << "expected InfeasibleClassError";
  } catch (const InfeasibleClassError& e) {
    const std::string hint = e.hint();
    EXPECT_NE(hint.find("E0[Y^1]"), std::string::npos) << hint;
    EXPECT_NE(hint.find("E0[Y^2]"), std::string::npos) << hint;
    EXPECT_EQ(hint.find("E1[Y^1]"), std::string::npos) << hint;
  }
}

TEST(MaximizeAffinity, SingleConstraintOutOfRange) {
  const Grid g = Grid::desk();
  EXPECT_THROW(maximize_affinity_at_u({moment_constraint(g, 1, 7.0, kInf, H0)}, {}, g, 0.5),
               InfeasibleClassError);
}

TEST(MaximizeAffinity, ObjectiveIsConcaveAlongSegments) {
  const Grid g = Grid::desk();
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto rnd = [&] {
    std::vector<double> v(g.size());
    for (double& x : v) x = U(gen);
    return normalize(GridFunction(g, v));
  };
  for (int rep = 0; rep < 10; ++rep) {
    const auto p0 = rnd(), p1 = rnd(), q0 = rnd(), q1 = rnd();
    for (double u : {0.3, 0.7})
      for (double t : {0.25, 0.5, 0.75}) {
        std::vector<double> m0(g.size()), m1(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          m0[i] = t * p0[i] + (1 - t) * q0[i];
          m1[i] = t * p1[i] + (1 - t) * q1[i];
        }
        const double mid = u_affinity(GridFunction(g, m0), GridFunction(g, m1), u);
        EXPECT_GE(mid, t * u_affinity(p0, p1, u) + (1 - t) * u_affinity(q0, q1, u) - 1e-9);
      }
  }
}

TEST(MinimizeOverU, MirrorProblemGivesHalf) {
  const Grid g = Grid::desk();
  ConvexProblem p(g);
  p.constraints = {moment_constraint(g, 1, -2.0, -0.5, H0), moment_constraint(g, 2, 0.0, 2.0, H0),
                   moment_constraint(g, 1, 0.5, 2.0, H1), moment_constraint(g, 2, 0.0, 2.0, H1)};
  EXPECT_NEAR(minimize_over_u(p).u_star, 0.5, 1e-3);
}

TEST(MinimizeOverU, MomentPresetInteriorMinimizerMatchesDenseScan) {
  const auto p = moment_problem(Grid::desk());
  const auto r = minimize_over_u(p);
  EXPECT_GT(r.u_star, 0.05);
  EXPECT_LT(r.u_star, 0.95);
  double best_u = 0, best = INFINITY;
  for (int k = 1; k <= 201; ++k) {
    const double u = k / 202.0;
    const double v = maximize_affinity_at_u(p, u).objective;
    if (v < best) best = v, best_u = u;
  }
  EXPECT_NEAR(r.u_star, best_u, 1.0 / 202.0);
  EXPECT_LE(r.objective, best + 1e-9);
  EXPECT_LE(r.kkt_residual, 1e-6);
}

TEST(MinimizeOverU, ProfileIsContinuous) {
  const auto r = minimize_over_u(moment_problem(Grid::desk()));
  std::vector<ProfilePoint> grid_pts;
  for (double u : default_u_grid())
    for (const auto& q : r.profile)
      if (q.u == u) grid_pts.push_back(q);
  ASSERT_EQ(grid_pts.size(), 21u);
  for (std::size_t k = 1; k + 1 < grid_pts.size(); ++k) {
    const double slope = std::abs(grid_pts[k + 1].objective - grid_pts[k - 1].objective) /
                         (grid_pts[k + 1].u - grid_pts[k - 1].u);
    const double next = k + 2 < grid_pts.size()
                            ? std::abs(grid_pts[k + 2].objective - grid_pts[k].objective) /
                                  (grid_pts[k + 2].u - grid_pts[k].u)
                            : slope;
    const double gap = std::abs(grid_pts[k + 1].objective - grid_pts[k].objective);
    EXPECT_LE(gap, 10 * std::max(slope, next) * (grid_pts[k + 1].u - grid_pts[k].u) + 1e-9);
  }
}

TEST(MinimizeOverU, RejectsShortGrid) {
  EXPECT_THROW(minimize_over_u(moment_problem(Grid::desk()), {0.3, 0.6}), ParameterError);
}

TEST(UDependence, TvBallMaximizersDoNotMove) {
  const Grid g = Grid::desk();
  const auto f0 = gaussian_density(g, -1, 1), f1 = gaussian_density(g, 1, 1);
  const auto tv = solve_tv(TvSpec(f0, f1, 0.1, 0.1));
  ConvexProblem p(g);
  p.tv_ball[0] = TvBall{f0.values(), 0.1};
  p.tv_ball[1] = TvBall{f1.values(), 0.1};
  EXPECT_LE(u_dependence_metric(p, {0.1, 0.3, 0.5, 0.7, 0.9}), 1e-4);
  // Objective at every u equals the affinity of the fixed analytic pair.
  for (double u : {0.2, 0.5, 0.8})
    EXPECT_NEAR(maximize_affinity_at_u(p, u).objective, u_affinity(tv.lfd0, tv.lfd1, u), 1e-6);
}

TEST(UDependence, PinnedDensitiesGiveZero) {
  const Grid g = Grid::desk();
  const auto tv = solve_tv(TvSpec(gaussian_density(g, -1, 1), gaussian_density(g, 1, 1), 0.1, 0.1));
  ConvexProblem p(g);
  p.lower = {tv.lfd0.values(), tv.lfd1.values()};
  p.upper = p.lower;
  EXPECT_EQ(u_dependence_metric(p, {0.25, 0.5, 0.75}), 0.0);
}

TEST(UDependence, MomentClassVariesWithU) {
  const double m = std::max({sup_distance(moment_at(0.1).lfd0, moment_at(0.9).lfd0),
                             sup_distance(moment_at(0.1).lfd1, moment_at(0.9).lfd1)});
  EXPECT_GT(m, 1e-2);
  EXPECT_GT(u_dependence_metric(moment_problem(Grid::desk()), {0.1, 0.3, 0.5, 0.7, 0.9}), 1e-2);
  EXPECT_THROW(u_dependence_metric(moment_problem(Grid::desk()), {0.5}), ParameterError);
}
