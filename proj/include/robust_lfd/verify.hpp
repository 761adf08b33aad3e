#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <thread>
#include <utility>
#include <vector>

#include "robust_lfd/band_general.hpp"
#include "robust_lfd/contamination.hpp"
#include "robust_lfd/divergence.hpp"
#include "robust_lfd/grid.hpp"
#include "robust_lfd/rng.hpp"
#include "robust_lfd/roots.hpp"
#include "robust_lfd/samplers.hpp"
#include "robust_lfd/tv_solver.hpp"

namespace robust_lfd {

// X = log l^(Y) tabulated on the grid, linearly interpolated between points.
class LogLrf {
 public:
  LogLrf(Grid grid, std::vector<double> log_values)
      : grid_(grid), v_(std::move(log_values)) {
    if (v_.size() != grid_.size())
      throw DimensionError("LogLrf: length does not match grid");
    for (double x : v_)
      if (!std::isfinite(x)) throw ParameterError("LogLrf: non-finite value");
  }

  // From ratio values l^ > 0 (floored before the log).
  static LogLrf from_ratio(const Grid& grid, const std::vector<double>& lr) {
    std::vector<double> v(lr.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(floored(lr[i]));
    return LogLrf(grid, std::move(v));
  }

  static LogLrf from_lfds(const GridFunction& lfd0, const GridFunction& lfd1) {
    return from_ratio(lfd0.grid(), likelihood_ratio(lfd1, lfd0));
  }

  const Grid& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return v_; }
  double operator[](std::size_t i) const noexcept { return v_[i]; }

  double at(double x) const {
    if (!grid_.contains(x)) throw DomainError("LogLrf: x outside grid");
    const double s = (x - grid_.x_min()) / grid_.dx();
    auto k = static_cast<std::size_t>(s);
    if (k + 1 >= v_.size()) return v_.back();
    const double a = s - static_cast<double>(k);
    return (1.0 - a) * v_[k] + a * v_[k + 1];
  }

 private:
  Grid grid_;
  std::vector<double> v_;
};

struct Separation {
  double mean0 = 0.0;
  double threshold = 0.0;
  double mean1 = 0.0;
  bool holds = false;
};

inline double expected_log_lrf(const GridFunction& g, const LogLrf& x) {
  require_same_grid(g.grid(), x.grid(), "expected_log_lrf: grid mismatch");
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] * x[i];
  return trapezoid_integral(g.grid(), v);
}

inline Separation threshold_separation(const GridFunction& g0,
                                       const GridFunction& g1, const LogLrf& x,
                                       double t) {
  const double m0 = expected_log_lrf(g0, x);
  const double m1 = expected_log_lrf(g1, x);
  return {m0, t, m1, m0 < t && t < m1};
}

enum class Tail { upper_tail, lower_tail };

struct CramerResult {
  double rate = 0.0;
  double s_star = 0.0;
  bool at_boundary = false;  // s hit +-50: the rate is unbounded on the grid
};

// log E_g[exp(s X)] by trapezoid weights, shifted for stability.
inline double log_mgf(const GridFunction& g, const LogLrf& x, double s) {
  const Grid& grid = g.grid();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i] > 0.0) mx = std::max(mx, s * x[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i] > 0.0) acc += grid.weight(i) * g[i] * std::exp(s * x[i] - mx);
  return mx + std::log(acc / g.mass());
}

// sup over the tail's sign half-line of s t - log E_g[exp(s X)].
inline CramerResult cramer_rate(const GridFunction& g, const LogLrf& x,
                                double t, Tail side) {
  require_same_grid(g.grid(), x.grid(), "cramer_rate: grid mismatch");
  constexpr double kSMax = 50.0;
  const double mean = expected_log_lrf(g, x) / g.mass();
  if (side == Tail::upper_tail ? t <= mean : t >= mean) return {};
  const double lo = side == Tail::upper_tail ? 0.0 : -kSMax;
  const double hi = side == Tail::upper_tail ? kSMax : 0.0;
  auto neg = [&](double s) { return -(s * t - log_mgf(g, x, s)); };
  const auto r = roots::golden_section_min(neg, lo, hi, 1e-10);
  CramerResult out{std::max(0.0, -r.value), r.x, false};
  out.at_boundary = std::abs(r.x) > kSMax - 1e-6;
  return out;
}

struct TestConfig {
  double threshold = 0.0;
  double prior0 = 0.5;
  std::size_t sample_size = 1;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // results do not depend on this

  void validate() const {
    if (!std::isfinite(threshold))
      throw ParameterError("TestConfig: threshold must be finite");
    if (!(prior0 > 0.0 && prior0 < 1.0))
      throw ParameterError("TestConfig: prior0 must lie in (0, 1)");
    if (sample_size < 1 || trials < 1)
      throw ParameterError("TestConfig: sample_size and trials must be >= 1");
  }
};

struct MonteCarloResult {
  double p_false_alarm = 0.0;
  double p_miss = 0.0;
  double p_error = 0.0;
  double se_false_alarm = 0.0;
  double se_miss = 0.0;
  double se_error = 0.0;
};

// Decide H1 when S_n = mean of X_k >= t. Trial k under hypothesis j draws
// from its own derived seed, so any thread split gives the same counts.
inline MonteCarloResult monte_carlo_test(const GridFunction& g0_true,
                                         const GridFunction& g1_true,
                                         const LogLrf& x,
                                         const TestConfig& cfg) {
  cfg.validate();
  require_same_grid(g0_true.grid(), x.grid(), "monte_carlo_test: grid mismatch");
  require_same_grid(g1_true.grid(), x.grid(), "monte_carlo_test: grid mismatch");
  const InverseCdfSampler s0(g0_true), s1(g1_true);
  const std::size_t n = cfg.sample_size;
  const double t = cfg.threshold;
  auto run = [&](int hyp, std::size_t begin, std::size_t end) {
    const InverseCdfSampler& s = hyp == 0 ? s0 : s1;
    std::size_t count = 0;
    for (std::size_t k = begin; k < end; ++k) {
      SplitMix64 gen(derive_seed(cfg.seed, 2 * k + static_cast<std::uint64_t>(hyp)));
      double sum = 0.0;
      for (std::size_t m = 0; m < n; ++m) sum += x.at(s(gen));
      const bool decide1 = sum / static_cast<double>(n) >= t;
      count += hyp == 0 ? decide1 : !decide1;
    }
    return count;
  };
  const unsigned nt = std::max(1u, std::min<unsigned>(cfg.threads, 64));
  std::size_t errors[2] = {0, 0};
  for (int hyp = 0; hyp < 2; ++hyp) {
    if (nt == 1) {
      errors[hyp] = run(hyp, 0, cfg.trials);
      continue;
    }
    std::vector<std::size_t> part(nt, 0);
    std::vector<std::thread> pool;
    const std::size_t chunk = (cfg.trials + nt - 1) / nt;
    for (unsigned w = 0; w < nt; ++w) {
      const std::size_t b = std::min(cfg.trials, w * chunk);
      const std::size_t e = std::min(cfg.trials, b + chunk);
      pool.emplace_back([&, w, b, e] { part[w] = run(hyp, b, e); });
    }
    for (auto& th : pool) th.join();
    for (auto c : part) errors[hyp] += c;
  }
  const double trials = static_cast<double>(cfg.trials);
  MonteCarloResult r;
  r.p_false_alarm = static_cast<double>(errors[0]) / trials;
  r.p_miss = static_cast<double>(errors[1]) / trials;
  const double pi0 = cfg.prior0, pi1 = 1.0 - cfg.prior0;
  r.p_error = pi0 * r.p_false_alarm + pi1 * r.p_miss;
  r.se_false_alarm = std::sqrt(r.p_false_alarm * (1.0 - r.p_false_alarm) / trials);
  r.se_miss = std::sqrt(r.p_miss * (1.0 - r.p_miss) / trials);
  r.se_error = std::sqrt(pi0 * pi0 * r.se_false_alarm * r.se_false_alarm +
                         pi1 * pi1 * r.se_miss * r.se_miss);
  return r;
}

// ---- class samplers: seeded, feasible by construction ----

using MemberPair = std::pair<GridDensity, GridDensity>;
using ClassSampler = std::function<MemberPair(std::uint64_t seed)>;

// Moves mass m <= eps from a random cell set A of f to a random density on
// the complement, so tv(g, f) = m exactly.
inline GridDensity random_tv_member(const GridDensity& f, double eps,
                                    std::uint64_t seed) {
  const Grid& grid = f.grid();
  SplitMix64 gen(derive_seed(seed, 0x7f));
  const auto shape = random_spline_shape(grid, derive_seed(seed, 1));
  const double cut = uniform(gen, 0.2, 0.8);
  std::vector<char> in_a(grid.size());
  for (std::size_t i = 0; i < in_a.size(); ++i) in_a[i] = shape[i] > cut;
  auto dest = random_spline_shape(grid, derive_seed(seed, 2));
  double fa = 0.0, dmass = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (in_a[i]) {
      fa += grid.weight(i) * f[i];
      dest[i] = 0.0;
    } else {
      dest[i] = (dest[i] + 1e-3) * (uniform01(gen) < 0.5 ? 1.0 : f[i] + 1e-3);
      dmass += grid.weight(i) * dest[i];
    }
  }
  if (!(fa > 0.0) || !(dmass > 0.0)) return f;
  const double m = std::min(eps * uniform(gen, 0.0, 1.0), fa);
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = in_a[i] ? f[i] * (1.0 - m / fa) : f[i] + m * dest[i] / dmass;
  return normalize(GridFunction(grid, std::move(v)));
}

inline ClassSampler tv_class_sampler(const TvSpec& spec) {
  return [spec](std::uint64_t seed) {
    return MemberPair{random_tv_member(spec.f0(), spec.eps0(), derive_seed(seed, 0)),
                      random_tv_member(spec.f1(), spec.eps1(), derive_seed(seed, 1))};
  };
}

inline ClassSampler contamination_class_sampler(const ContaminationSpec& spec) {
  return [spec](std::uint64_t seed) {
    return MemberPair{
        spec.member(0, random_contamination(spec, 0, derive_seed(seed, 0))),
        spec.member(1, random_contamination(spec, 1, derive_seed(seed, 1)))};
  };
}

// g = L + c s (U - L) for a random shape s in [0, 1], or the mirrored form
// U - c (1 - s)(U - L), whichever keeps c <= 1 at unit mass.
inline GridDensity random_band_member(const BandSpec& spec, int j,
                                      std::uint64_t seed) {
  const Grid& grid = spec.grid();
  const auto s = random_spline_shape(grid, seed);
  const auto& lo = spec.lower(j);
  const auto& hi = spec.upper(j);
  double ml = 0.0, mu = 0.0, up = 0.0, down = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = grid.weight(i), gap = hi[i] - lo[i];
    ml += w * lo[i];
    mu += w * hi[i];
    up += w * s[i] * gap;
    down += w * (1.0 - s[i]) * gap;
  }
  std::vector<double> v(grid.size());
  const double c = up > 0.0 ? (1.0 - ml) / up : 2.0;
  if (c <= 1.0) {
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = lo[i] + c * s[i] * (hi[i] - lo[i]);
  } else {
    const double d = down > 0.0 ? (mu - 1.0) / down : 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = hi[i] - d * (1.0 - s[i]) * (hi[i] - lo[i]);
  }
  return GridDensity(grid, std::move(v));
}

inline ClassSampler band_class_sampler(const BandSpec& spec) {
  return [spec](std::uint64_t seed) {
    return MemberPair{random_band_member(spec, 0, derive_seed(seed, 0)),
                      random_band_member(spec, 1, derive_seed(seed, 1))};
  };
}

// Half of the draws become (1 - lam) lfd + lam member with lam in
// [0.01, 1]; classes are convex, so these stay feasible and probe the
// neighbourhood of the LFD pair.
inline ClassSampler anchored_sampler(ClassSampler base, GridDensity lfd0,
                                     GridDensity lfd1) {
  return [base = std::move(base), lfd0 = std::move(lfd0),
          lfd1 = std::move(lfd1)](std::uint64_t seed) {
    auto pair = base(seed);
    SplitMix64 gen(derive_seed(seed, 0xa11));
    if (uniform01(gen) < 0.5) return pair;
    const double lam = std::exp(uniform(gen, std::log(0.01), 0.0));
    return MemberPair{mix(lfd0, pair.first, lam), mix(lfd1, pair.second, lam)};
  };
}

struct FdivRow {
  FDivergenceKind kind = FDivergenceKind::kl;
  double at_lfd = 0.0;
  double sampled_min = 0.0;
  double margin = 0.0;  // sampled_min - at_lfd
};

inline std::vector<FdivRow> fdiv_minimality_check(
    const GridFunction& lfd0, const GridFunction& lfd1,
    const ClassSampler& sampler,
    const std::vector<FDivergenceKind>& kinds = {std::begin(kAllFDivergences),
                                                 std::end(kAllFDivergences)},
    std::size_t members = 200, std::uint64_t seed = 0) {
  std::vector<FdivRow> rows;
  for (auto k : kinds)
    rows.push_back({k, f_divergence(lfd0, lfd1, k),
                    std::numeric_limits<double>::infinity(), 0.0});
  for (std::size_t m = 0; m < members; ++m) {
    const auto [g0, g1] = sampler(derive_seed(seed, m));
    for (auto& r : rows)
      r.sampled_min = std::min(r.sampled_min, f_divergence(g0, g1, r.kind));
  }
  for (auto& r : rows) r.margin = r.sampled_min - r.at_lfd;
  return rows;
}

// ---- aggregated report ----

struct VerifyOptions {
  double threshold = 0.0;
  std::size_t members = 50;
  std::size_t fdiv_members = 200;
  std::size_t ordering_thresholds = 20;
  TestConfig mc{};
  std::uint64_t seed = 0;
};

struct VerifyReport {
  bool ordering_checked = false;
  bool ordering_pass = true;
  double ordering_margin = std::numeric_limits<double>::infinity();
  Separation separation;
  double rate0 = 0.0;  // upper tail under the H0 LFD
  double rate1 = 0.0;  // lower tail under the H1 LFD
  bool exponents_checked = false;
  double exponent_margin = std::numeric_limits<double>::infinity();
  MonteCarloResult mc;
  std::vector<FdivRow> fdiv_table;
};

// Ordering G0[l^ < t] >= G0^[l^ < t] and G1[l^ < t] <= G1^[l^ < t] for
// sampled members over thresholds spread between the clipping levels.
inline double ordering_margin(const GridFunction& lfd0, const GridFunction& lfd1,
                              const std::vector<double>& lhat,
                              const ClassSampler& sampler, double t_l,
                              double t_u, std::size_t members,
                              std::size_t thresholds, std::uint64_t seed) {
  const Grid& grid = lfd0.grid();
  auto below = [&](const GridFunction& g, double t) {
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = lhat[i] < t ? g[i] : 0.0;
    return trapezoid_integral(grid, v);
  };
  std::vector<double> ts(thresholds);
  const double a = std::log(t_l), b = std::log(t_u);
  for (std::size_t k = 0; k < thresholds; ++k)
    ts[k] = std::exp(a + (b - a) * (static_cast<double>(k) + 0.5) /
                             static_cast<double>(thresholds));
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < members; ++m) {
    const auto [g0, g1] = sampler(derive_seed(seed, m));
    for (double t : ts) {
      worst = std::min(worst, below(g0, t) - below(lfd0, t));
      worst = std::min(worst, below(lfd1, t) - below(g1, t));
    }
  }
  return worst;
}

// Exponent inequality: members cannot have smaller Cramer rates than the
// LFDs at threshold t. Returns the worst margin.
inline double exponent_margin(const GridFunction& lfd0, const GridFunction& lfd1,
                              const LogLrf& x, const ClassSampler& sampler,
                              double t, std::size_t members, std::uint64_t seed) {
  const double r0 = cramer_rate(lfd0, x, t, Tail::upper_tail).rate;
  const double r1 = cramer_rate(lfd1, x, t, Tail::lower_tail).rate;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < members; ++m) {
    const auto [g0, g1] = sampler(derive_seed(seed, m));
    worst = std::min(worst, cramer_rate(g0, x, t, Tail::upper_tail).rate - r0);
    worst = std::min(worst, cramer_rate(g1, x, t, Tail::lower_tail).rate - r1);
  }
  return worst;
}

inline VerifyReport verify_pair(const GridFunction& lfd0, const GridFunction& lfd1,
                                const VerifyOptions& opt,
                                const ClassSampler* sampler = nullptr) {
  VerifyReport rep;
  const auto lhat = likelihood_ratio(lfd1, lfd0);
  const LogLrf x = LogLrf::from_ratio(lfd0.grid(), lhat);
  rep.separation = threshold_separation(lfd0, lfd1, x, opt.threshold);
  rep.rate0 = cramer_rate(lfd0, x, opt.threshold, Tail::upper_tail).rate;
  rep.rate1 = cramer_rate(lfd1, x, opt.threshold, Tail::lower_tail).rate;
  TestConfig mc = opt.mc;
  mc.threshold = opt.threshold;
  mc.seed = derive_seed(opt.seed, 0xc0ffee);
  rep.mc = monte_carlo_test(lfd0, lfd1, x, mc);
  if (sampler) {
    rep.exponents_checked = true;
    rep.exponent_margin = exponent_margin(lfd0, lfd1, x, *sampler, opt.threshold,
                                          opt.members, derive_seed(opt.seed, 1));
    rep.fdiv_table = fdiv_minimality_check(
        lfd0, lfd1, *sampler,
        {std::begin(kAllFDivergences), std::end(kAllFDivergences)},
        opt.fdiv_members, derive_seed(opt.seed, 2));
  }
  return rep;
}

inline VerifyReport verify_tv(const TvSpec& spec, const TvSolution& sol,
                              const VerifyOptions& opt) {
  const auto sampler = anchored_sampler(tv_class_sampler(spec), sol.lfd0, sol.lfd1);
  VerifyReport rep = verify_pair(sol.lfd0, sol.lfd1, opt, &sampler);
  if (!sol.degenerate) {
    rep.ordering_checked = true;
    rep.ordering_margin = ordering_margin(
        sol.lfd0, sol.lfd1, likelihood_ratio(sol.lfd1, sol.lfd0), sampler,
        sol.t_l, sol.t_u, opt.members, opt.ordering_thresholds,
        derive_seed(opt.seed, 3));
    rep.ordering_pass = rep.ordering_margin >= -1e-10;
  }
  return rep;
}

inline VerifyReport verify_contamination(const ContaminationSpec& spec,
                                         const ContaminationSolution& sol,
                                         const VerifyOptions& opt) {
  const auto sampler = anchored_sampler(contamination_class_sampler(spec), sol.lfd0, sol.lfd1);
  VerifyReport rep = verify_pair(sol.lfd0, sol.lfd1, opt, &sampler);
  if (!sol.degenerate) {
    rep.ordering_checked = true;
    rep.ordering_margin = ordering_margin(
        sol.lfd0, sol.lfd1, robust_lrf(sol, spec), sampler, sol.t_l, sol.t_u,
        opt.members, opt.ordering_thresholds, derive_seed(opt.seed, 3));
    rep.ordering_pass = rep.ordering_margin >= -1e-10;
  }
  return rep;
}

inline VerifyReport verify_band(const BandSpec& spec, const BandSolution& sol,
                                const VerifyOptions& opt) {
  const auto sampler = anchored_sampler(band_class_sampler(spec), sol.lfd0, sol.lfd1);
  return verify_pair(sol.lfd0, sol.lfd1, opt, &sampler);
}

}  // namespace robust_lfd
