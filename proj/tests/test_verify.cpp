#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "robust_lfd/verify.hpp"

using namespace robust_lfd;

namespace {

const Grid& desk() {
  static const Grid g = Grid::desk();
  return g;
}

GridDensity nominal(int j) { return gaussian_density(desk(), j == 0 ? -1.0 : 1.0, 1.0); }

// Unclipped log-likelihood ratio of N(1,1) over N(-1,1).
LogLrf nominal_log_lr() {
  std::vector<double> v(desk().size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * desk().point(i);
  return LogLrf(desk(), v);
}

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

const TvSpec& tv_spec() {
  static const TvSpec s(nominal(0), nominal(1), 0.1, 0.1);
  return s;
}
const TvSolution& tv_sol() {
  static const TvSolution s = solve_tv(tv_spec());
  return s;
}

}  // namespace

TEST(Separation, IdenticalDensitiesNeverSeparate) {
  const auto x = nominal_log_lr();
  for (double t : {-1.0, 0.0, 1.0})
    EXPECT_FALSE(threshold_separation(nominal(0), nominal(0), x, t).holds);
}

TEST(Separation, TvLfdsAtZero) {
  const auto x = LogLrf::from_lfds(tv_sol().lfd0, tv_sol().lfd1);
  const auto s = threshold_separation(tv_sol().lfd0, tv_sol().lfd1, x, 0.0);
  EXPECT_TRUE(s.holds);
  EXPECT_LT(s.mean0, 0.0);
  EXPECT_GT(s.mean1, 0.0);
  EXPECT_NEAR(s.mean0, -s.mean1, 1e-9);
}

TEST(Separation, NominalGaussianMeans) {
  // E_{f1}[2Y] = 2, E_{f0}[2Y] = -2, up to trapezoid error O(dx^2).
  const auto s = threshold_separation(nominal(0), nominal(1), nominal_log_lr(), 0.0);
  const double tol = desk().dx() * desk().dx();
  EXPECT_NEAR(s.mean0, -2.0, tol);
  EXPECT_NEAR(s.mean1, 2.0, tol);
  EXPECT_TRUE(s.holds);
}

TEST(CramerRate, VanishesAtTheMean) {
  const auto x = LogLrf::from_lfds(tv_sol().lfd0, tv_sol().lfd1);
  const double m = expected_log_lrf(tv_sol().lfd0, x);
  EXPECT_NEAR(cramer_rate(tv_sol().lfd0, x, m, Tail::upper_tail).rate, 0.0, 1e-8);
  EXPECT_NEAR(cramer_rate(tv_sol().lfd0, x, m, Tail::lower_tail).rate, 0.0, 1e-8);
}

TEST(CramerRate, GaussianClosedForm) {
  // X = 2Y under N(-1,1): mean -2, variance 4, rate (t + 2)^2 / 8.
  const auto x = nominal_log_lr();
  for (double t : {-1.0, 0.0, 1.0}) {
    const auto r = cramer_rate(nominal(0), x, t, Tail::upper_tail);
    EXPECT_NEAR(r.rate, (t + 2) * (t + 2) / 8, 1e-3) << "t " << t;
    EXPECT_NEAR(r.s_star, (t + 2) / 4, 1e-3);
    EXPECT_FALSE(r.at_boundary);
  }
  EXPECT_NEAR(cramer_rate(nominal(1), x, 0.0, Tail::lower_tail).rate, 0.5, 1e-3);
}

TEST(CramerRate, FlagsUnboundedTilt) {
  // Beyond the largest value of X the rate is infinite on the grid.
  const auto r = cramer_rate(nominal(0), nominal_log_lr(), 30.0, Tail::upper_tail);
  EXPECT_TRUE(r.at_boundary);
}

TEST(CramerRate, AmrInequalityOverTvMembers) {
  const auto x = LogLrf::from_lfds(tv_sol().lfd0, tv_sol().lfd1);
  const auto sampler = anchored_sampler(tv_class_sampler(tv_spec()), tv_sol().lfd0, tv_sol().lfd1);
  EXPECT_GE(exponent_margin(tv_sol().lfd0, tv_sol().lfd1, x, sampler, 0.0, 50, 11), -1e-6);
}

TEST(MonteCarlo, ThresholdBelowEverythingAlwaysDecidesH1) {
  TestConfig c;
  c.threshold = -1e9;
  c.trials = 1000;
  const auto r = monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c);
  EXPECT_EQ(r.p_false_alarm, 1.0);
  EXPECT_EQ(r.p_miss, 0.0);
  EXPECT_EQ(r.p_error, 0.5);
}

TEST(MonteCarlo, SingleSampleGaussianErrors) {
  TestConfig c;
  c.trials = 100000;
  c.seed = 5;
  const auto r = monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c);
  const double p = phi_cdf(-1.0);
  const double sigma = std::sqrt(p * (1 - p) / c.trials);
  EXPECT_NEAR(r.p_false_alarm, p, 3 * sigma);
  EXPECT_NEAR(r.p_miss, p, 3 * sigma);
  EXPECT_NEAR(r.p_error, 0.5 * (r.p_false_alarm + r.p_miss), 1e-15);
}

TEST(MonteCarlo, RobustTestNoWorseUnderTvAdversary) {
  TestConfig c;
  c.sample_size = 5;
  c.trials = 100000;
  c.seed = 9;
  const auto robust = monte_carlo_test(tv_sol().lfd0, tv_sol().lfd1,
                                       LogLrf::from_lfds(tv_sol().lfd0, tv_sol().lfd1), c);
  const auto plain = monte_carlo_test(tv_sol().lfd0, tv_sol().lfd1, nominal_log_lr(), c);
  EXPECT_LE(robust.p_error, plain.p_error + 2 * std::hypot(robust.se_error, plain.se_error));
}

TEST(MonteCarlo, StandardErrorFollowsBinomialScaling) {
  TestConfig c;
  c.threshold = 0.5;
  c.seed = 3;
  auto se = [&](std::size_t trials) {
    c.trials = trials;
    return monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c).se_false_alarm;
  };
  const double s1 = se(20000), s2 = se(40000), s4 = se(80000);
  EXPECT_NEAR(s1 / s2, std::numbers::sqrt2, 0.2 * std::numbers::sqrt2);
  EXPECT_NEAR(s1 / s4, 2.0, 0.4);
}

TEST(MonteCarlo, ThreadCountDoesNotChangeResults) {
  TestConfig c;
  c.sample_size = 3;
  c.trials = 20001;
  c.seed = 17;
  const auto x = LogLrf::from_lfds(tv_sol().lfd0, tv_sol().lfd1);
  const auto a = monte_carlo_test(tv_sol().lfd0, tv_sol().lfd1, x, c);
  c.threads = 7;
  const auto b = monte_carlo_test(tv_sol().lfd0, tv_sol().lfd1, x, c);
  EXPECT_EQ(a.p_false_alarm, b.p_false_alarm);
  EXPECT_EQ(a.p_miss, b.p_miss);
  c.seed = 18;
  const auto d = monte_carlo_test(tv_sol().lfd0, tv_sol().lfd1, x, c);
  EXPECT_NE(a.p_false_alarm, d.p_false_alarm);
}

TEST(MonteCarlo, RejectsBadConfig) {
  TestConfig c;
  c.prior0 = 1.0;
  EXPECT_THROW(monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c), ParameterError);
  c = {};
  c.threshold = NAN;
  EXPECT_THROW(monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c), ParameterError);
  c = {};
  c.trials = 0;
  EXPECT_THROW(monte_carlo_test(nominal(0), nominal(1), nominal_log_lr(), c), ParameterError);
}

// The miss probability at n = 200 obeys the Chernoff bound P <= exp(-n I)
// and, with the Bahadur-Rao prefactor 1 / (|s*| sigma_s sqrt(2 pi n)),
// matches exp(-n I) to within 15% in the exponent.
TEST(MonteCarlo, MissExponentMatchesCramerRate) {
  const auto& g1 = tv_sol().lfd1;
  const auto x = LogLrf::from_lfds(tv_sol().lfd0, g1);
  const std::size_t n = 200;
  const double t = 0.35;
  const auto cr = cramer_rate(g1, x, t, Tail::lower_tail);
  ASSERT_GT(cr.rate, 0.0);
  double z = 0, m1 = 0, m2 = 0;
  for (std::size_t i = 0; i < desk().size(); ++i) {
    const double w = desk().weight(i) * g1[i] * std::exp(cr.s_star * x[i]);
    z += w, m1 += w * x[i], m2 += w * x[i] * x[i];
  }
  const double tilted_mean = m1 / z, tilted_var = m2 / z - tilted_mean * tilted_mean;
  EXPECT_NEAR(tilted_mean, t, 1e-4);  // the optimal tilt centres X at t
  const double corrected =
      cr.rate + std::log(std::abs(cr.s_star) * std::sqrt(2 * std::numbers::pi * n * tilted_var)) / n;

  TestConfig c;
  c.threshold = t;
  c.sample_size = n;
  c.trials = 100000;
  c.seed = 1;
  const auto r = monte_carlo_test(tv_sol().lfd0, g1, x, c);
  ASSERT_GT(r.p_miss, 0.0);
  const double empirical = -std::log(r.p_miss) / n;
  EXPECT_GE(empirical, cr.rate);
  EXPECT_NEAR(empirical, corrected, 0.15 * corrected);
}

TEST(FdivMinimality, TvLfdsAttainSampledMinimum) {
  const auto sampler = anchored_sampler(tv_class_sampler(tv_spec()), tv_sol().lfd0, tv_sol().lfd1);
  const auto rows = fdiv_minimality_check(tv_sol().lfd0, tv_sol().lfd1, sampler);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_GE(r.margin, -1e-8) << to_string(r.kind);
    EXPECT_EQ(r.margin, r.sampled_min - r.at_lfd);
  }
}

TEST(FdivMinimality, ContaminationLfdsAttainSampledMinimum) {
  for (auto dir : {ContaminationDirection::lower, ContaminationDirection::upper}) {
    const ContaminationSpec spec(dir, nominal(0), nominal(1), 0.1, 0.1);
    const auto sol = solve_contamination(spec);
    const auto sampler = anchored_sampler(contamination_class_sampler(spec), sol.lfd0, sol.lfd1);
    for (const auto& r : fdiv_minimality_check(sol.lfd0, sol.lfd1, sampler, {FDivergenceKind::kl,
                                               FDivergenceKind::reverse_kl,
                                               FDivergenceKind::squared_hellinger}, 200, 4))
      EXPECT_GE(r.margin, -1e-8) << to_string(r.kind);
  }
}

TEST(FdivMinimality, ZeroRadiusClassIsTheNominalPair) {
  const TvSpec spec(nominal(0), nominal(1), 0.0, 0.0);
  const auto sol = solve_tv(spec);
  for (const auto& r : fdiv_minimality_check(sol.lfd0, sol.lfd1, tv_class_sampler(spec), {FDivergenceKind::kl}, 20))
    EXPECT_NEAR(r.margin, 0.0, 1e-12);
}

// Single-sample robustness (ordering) comes with the exponent and
// f-divergence inequalities on the same sampled members.
TEST(RobustnessChain, OrderingImpliesExponentAndDivergenceInequalities) {
  VerifyOptions opt;
  opt.mc.trials = 2000;
  opt.seed = 21;
  const auto tv = verify_tv(tv_spec(), tv_sol(), opt);
  ASSERT_TRUE(tv.ordering_checked);
  ASSERT_TRUE(tv.ordering_pass);
  EXPECT_GE(tv.exponent_margin, -1e-6);
  for (const auto& r : tv.fdiv_table) EXPECT_GE(r.margin, -1e-8);

  const ContaminationSpec spec(ContaminationDirection::upper, nominal(0), nominal(1), 0.2, 0.2);
  const auto sol = solve_contamination(spec);
  const auto ct = verify_contamination(spec, sol, opt);
  ASSERT_TRUE(ct.ordering_pass);
  EXPECT_GE(ct.exponent_margin, -1e-6);
  for (const auto& r : ct.fdiv_table) EXPECT_GE(r.margin, -1e-8);
}

TEST(VerifyReport, BandReportIsWellFormed) {
  const Grid g(-6.0, 6.0, 1201);
  const auto spec = BandSpec::gaussian(g, 0.2, 0.5);
  VerifyOptions opt;
  opt.mc.trials = 2000;
  opt.members = 10;
  opt.fdiv_members = 20;
  const auto rep = verify_band(spec, solve_band(spec), opt);
  EXPECT_FALSE(rep.ordering_checked);
  EXPECT_TRUE(rep.exponents_checked);
  EXPECT_GE(rep.rate0, 0.0);
  EXPECT_GE(rep.rate1, 0.0);
  for (double p : {rep.mc.p_false_alarm, rep.mc.p_miss, rep.mc.p_error}) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_EQ(rep.fdiv_table.size(), 3u);
}
