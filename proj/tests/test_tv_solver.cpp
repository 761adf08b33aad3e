#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "robust_lfd/contamination.hpp"
#include "robust_lfd/tv_solver.hpp"
#include "robust_lfd/verify.hpp"
#include "oracles.hpp"

using namespace robust_lfd;

namespace {

const Grid& grid() {
  static const Grid g = Grid::standard();
  return g;
}

TvSpec shift_spec(double e0, double e1) {
  return TvSpec(gaussian_density(grid(), -1, 1), gaussian_density(grid(), 1, 1), e0, e1);
}

}  // namespace

TEST(TvSpec, RejectsBadRadiiAndOverlap) {
  const auto f0 = gaussian_density(grid(), -1, 1), f1 = gaussian_density(grid(), 1, 1);
  EXPECT_THROW(TvSpec(f0, f1, -0.1, 0.1), ParameterError);
  EXPECT_THROW(TvSpec(f0, f1, 0.1, 1.0), ParameterError);
  EXPECT_THROW(TvSpec(f0, f1, 0.4, 0.4), InfeasibleClassError);
}

TEST(TvResiduals, EmptyLowerRegionWithZeroRadii) {
  const auto s = shift_spec(0.0, 0.0);
  EXPECT_EQ(tv_residuals(s, 1e-30, 2.0)[0], 0.0);
  EXPECT_THROW(tv_residuals(s, 0.0, 2.0), ParameterError);
}

TEST(TvResiduals, VanishAtSolution) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  const auto r = tv_residuals(s, sol.t_l, sol.t_u);
  EXPECT_NEAR(r[0], 0.0, 1e-10);
  EXPECT_NEAR(r[1], 0.0, 1e-10);
}

TEST(TvResiduals, LowerResidualIncreasingInThreshold) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  for (double t : {0.5 * sol.t_l, 0.8 * sol.t_l, sol.t_l, 1.5 * sol.t_l, 0.9}) {
    const double h = 1e-4 * t;
    EXPECT_GT(tv_residuals(s, t + h, 2.0)[0] - tv_residuals(s, t - h, 2.0)[0], 0.0) << t;
  }
}

TEST(SolveTv, SymmetricRadiiGiveReciprocalThresholds) {
  for (double e : {0.05, 0.1, 0.2}) {
    const auto sol = solve_tv(shift_spec(e, e));
    EXPECT_NEAR(sol.t_l * sol.t_u, 1.0, 1e-6) << "eps " << e;
    EXPECT_LT(sol.t_l, 1.0);
    EXPECT_GT(sol.t_u, 1.0);
    EXPECT_GE(sol.beta, 0.0);
    EXPECT_GE(sol.sigma, 0.0);
  }
}

TEST(SolveTv, MatchesContaminationThresholds) {
  const auto tv = solve_tv(shift_spec(0.08875, 0.08875));
  const auto c = solve_contamination(
      ContaminationSpec(ContaminationDirection::lower, gaussian_density(grid(), -1, 1),
                        gaussian_density(grid(), 1, 1), 0.1, 0.1));
  EXPECT_NEAR(tv.t_l, c.t_l, 1e-2);
  EXPECT_NEAR(tv.t_u, c.t_u, 1e-2);
}

TEST(SolveTv, AsymmetricRadiiMatchExhaustiveScan) {
  const auto s = shift_spec(0.05, 0.15);
  const auto sol = solve_tv(s);
  const auto o = oracle::tv_scan(s);
  EXPECT_LE(std::abs(std::log(sol.t_l / o.t_l)), o.log_step);
  EXPECT_LE(std::abs(std::log(sol.t_u / o.t_u)), o.log_step);
}

TEST(SolveTv, ConstraintsActiveIncludingAsymmetric) {
  for (auto [e0, e1] : {std::pair{0.1, 0.1}, std::pair{0.05, 0.15}, std::pair{0.15, 0.05}}) {
    const auto s = shift_spec(e0, e1);
    const auto sol = solve_tv(s);
    EXPECT_NEAR(sol.lfd0.mass(), 1.0, 1e-6);
    EXPECT_NEAR(sol.lfd1.mass(), 1.0, 1e-6);
    EXPECT_NEAR(tv_distance(sol.lfd0, s.f0()), e0, 1e-6);
    EXPECT_NEAR(tv_distance(sol.lfd1, s.f1()), e1, 1e-6);
  }
}

TEST(SolveTv, LfdRatioIsClippedNominalRatio) {
  const auto s = shift_spec(0.05, 0.15);
  const auto sol = solve_tv(s);
  const auto r = likelihood_ratio(sol.lfd1, sol.lfd0);
  const auto c = clipped_ratio(s.nominal_ratio(), sol.t_l, sol.t_u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], c[i], 1e-9 * c[i]);
}

TEST(SolveTv, TiltingMassBalance) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  const auto& l = s.nominal_ratio();
  std::vector<double> lo(l.size(), 0.0), hi(l.size(), 0.0);
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double d = sol.lfd0[i] - s.f0()[i];
    if (l[i] < sol.t_l) lo[i] = d;
    if (l[i] > sol.t_u) hi[i] = d;
  }
  EXPECT_NEAR(trapezoid_integral(grid(), lo), -0.1, 1e-6);
  EXPECT_NEAR(trapezoid_integral(grid(), hi), 0.1, 1e-6);
}

TEST(SolveTv, NoJumpsAtRegionBoundaries) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  const auto& l = s.nominal_ratio();
  auto region = [&](std::size_t i) { return l[i] < sol.t_l ? 0 : (l[i] > sol.t_u ? 2 : 1); };
  int boundaries = 0;
  for (std::size_t i = 1; i + 1 < l.size(); ++i) {
    if (region(i) == region(i + 1)) continue;
    ++boundaries;
    const double var = std::max(std::abs(s.f0()[i] - s.f0()[i - 1]),
                                std::abs(s.f0()[i + 2] - s.f0()[i + 1]));
    EXPECT_LE(std::abs(sol.lfd0[i + 1] - sol.lfd0[i]), 10 * var);
    EXPECT_LE(std::abs(sol.lfd1[i + 1] - sol.lfd1[i]), 10 * var);
  }
  EXPECT_EQ(boundaries, 2);
}

TEST(SolveTv, SwapSymmetry) {
  const auto s = shift_spec(0.05, 0.15);
  const auto a = solve_tv(s);
  const auto b = solve_tv(TvSpec(s.f1(), s.f0(), 0.15, 0.05));
  EXPECT_NEAR(b.t_l, 1.0 / a.t_u, 1e-6);
  EXPECT_NEAR(b.t_u, 1.0 / a.t_l, 1e-6);
}

TEST(SolveTv, ZeroRadiiAreDegenerate) {
  const auto s = shift_spec(0.0, 0.0);
  const auto sol = solve_tv(s);
  EXPECT_TRUE(sol.degenerate);
  EXPECT_EQ(sol.lfd0.values(), s.f0().values());
  EXPECT_EQ(sol.lfd1.values(), s.f1().values());
}

TEST(SolveTv, LfdsMaximizeAffinityForEveryU) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  const auto sampler = anchored_sampler(tv_class_sampler(s), sol.lfd0, sol.lfd1);
  for (double u : {0.25, 0.5, 0.75}) {
    const double best = u_affinity(sol.lfd0, sol.lfd1, u);
    for (std::uint64_t k = 0; k < 100; ++k) {
      const auto [g0, g1] = sampler(k);
      ASSERT_LE(tv_distance(g0, s.f0()), 0.1 + 1e-9);
      EXPECT_LE(u_affinity(g0, g1, u), best + 1e-8) << "u " << u << " member " << k;
    }
  }
}

TEST(EvalClippedLrf, ClampsInterpolatedRatio) {
  const auto s = shift_spec(0.1, 0.1);
  const auto sol = solve_tv(s);
  // log l = 2x for these nominals.
  EXPECT_NEAR(eval_clipped_lrf(sol, s, 0.1), std::exp(0.2), 1e-3);
  EXPECT_DOUBLE_EQ(eval_clipped_lrf(sol, s, 12.0), sol.t_u);
  EXPECT_DOUBLE_EQ(eval_clipped_lrf(sol, s, -12.0), sol.t_l);
  double prev = 0.0;
  for (double x = -12; x <= 12; x += 0.013) {
    const double v = eval_clipped_lrf(sol, s, x);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_THROW(eval_clipped_lrf(sol, s, 12.5), DomainError);
}
