#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robust_lfd/divergence.hpp"
#include "robust_lfd/grid.hpp"
#include "robust_lfd/rng.hpp"
#include "robust_lfd/roots.hpp"

namespace robust_lfd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Hypothesis { h0 = 0, h1 = 1 };

// lower <= sum_i w_i weights[i] g_{target,i} <= upper, w_i trapezoid weights.
struct LinearConstraint {
  std::vector<double> weights;
  double lower = -kInf;
  double upper = kInf;
  Hypothesis target = Hypothesis::h0;
  std::string label;
};

inline LinearConstraint moment_constraint(const Grid& grid, int power,
                                          double lower, double upper,
                                          Hypothesis target) {
  std::vector<double> h(grid.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = std::pow(grid.point(i), power);
  return {std::move(h), lower, upper, target,
          "E" + std::to_string(static_cast<int>(target)) + "[Y^" +
              std::to_string(power) + "]"};
}

// Indicator of the half-open interval [a, b) on the grid points.
inline std::vector<double> interval_indicator(const Grid& grid, double a,
                                              double b) {
  const double slack = 1e-9 * grid.dx();
  std::vector<double> h(grid.size(), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = grid.point(i);
    if (x >= a - slack && x < b - slack) h[i] = 1.0;
  }
  return h;
}

inline LinearConstraint ppoint_constraint(const Grid& grid, double a, double b,
                                          double lower, double upper,
                                          Hypothesis target) {
  return {interval_indicator(grid, a, b), lower, upper, target,
          "P" + std::to_string(static_cast<int>(target)) + "[" +
              std::to_string(a) + "," + std::to_string(b) + ")"};
}

// Total variation ball {g : tv(g, center) <= radius}.
struct TvBall {
  std::vector<double> center;
  double radius = 0.0;
};

// Feasible set for the pair (g0, g1): unit mass, nonnegativity, optional
// pointwise box, optional TV ball, and any number of linear constraints.
struct ConvexProblem {
  Grid grid;
  std::vector<LinearConstraint> constraints;
  std::array<std::vector<double>, 2> lower{};  // empty: 0
  std::array<std::vector<double>, 2> upper{};  // empty: +inf
  std::array<std::optional<TvBall>, 2> tv_ball{};

  explicit ConvexProblem(Grid g) : grid(g) {}
  ConvexProblem(Grid g, std::vector<LinearConstraint> c)
      : grid(g), constraints(std::move(c)) {}
};

struct SolverOptions {
  int max_iter = 600;
  // 0 selects the deterministic default start; other values perturb it.
  std::uint64_t start_seed = 0;
  double mu_start = 0.1;
  double mu_final = 1e-9;
  double mu_factor = 0.1;
};

struct InnerSolution {
  GridDensity lfd0;
  GridDensity lfd1;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  std::vector<std::size_t> active_constraints;
  int iterations = 0;
};

namespace detail {

struct IpmBlock {
  std::array<int, 4> var{-1, -1, -1, -1};  // g0, g1, v0, v1 -> global index
  std::array<double, 4> fixed{};           // values of inactive slots
  int point = -1;                          // grid index, -1 for slack blocks
  double scale = 1.0;                      // quadrature weight for scaling
  std::vector<int> ineqs;
};

struct IpmIneq {
  int block = 0;
  std::array<double, 4> a{};
  double c = 0.0;
};

struct IpmState {
  Eigen::VectorXd x, y, lambda;
};

// Log-barrier Newton method (infeasible start) for
//   min  -sum_i w_i g1_i^u g0_i^(1-u)   (or 0 in feasibility mode)
//   s.t. A x = b,  a_k . x_block >= c_k.
// The Hessian is block diagonal per grid point; the few global rows are
// handled through an m x m Schur complement.
class AffinityIpm {
 public:
  AffinityIpm(const ConvexProblem& p, double u, bool feasibility_only)
      : p_(p), u_(u), feasibility_(feasibility_only) {
    build();
  }

  std::size_t num_vars() const { return nvar_; }

  struct Result {
    bool converged = false;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double complementarity = 0.0;
    std::array<std::vector<double>, 2> g;
  };

  Result solve(const SolverOptions& opt) {
    IpmState st = initial_state(opt.start_seed);
    Result res;
    double mu = opt.mu_start;
    int total = 0;
    for (;;) {
      const bool final_stage = mu <= opt.mu_final * (1.0 + 1e-9);
      const double tol = final_stage ? 1e-10 : std::max(1e-9, mu);
      bool stage_ok = false;
      int no_progress = 0;
      int stagnant = 0;
      double best_rd = kInf;
      while (total < opt.max_iter) {
        const Eigen::VectorXd s = slacks(st.x);
        Eigen::VectorXd grad;
        std::vector<Eigen::Matrix2d> hess;
        objective_derivatives(st.x, grad, hess);
        const Eigen::VectorXd gb = grad - barrier_gradient(s, mu);
        const Eigen::VectorXd rd = residual_d(gb, st.y);
        const Eigen::VectorXd rp = A_ * st.x - b_;
        const double rpn = rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0;
        const double rdn = scaled_norm(rd);
        res.primal_residual = rpn;
        res.dual_residual = rdn;
        res.complementarity = mu;
        // Stationarity is limited by cancellation in the scaled gradient.
        const double gscale = std::max(1.0, scaled_norm(grad));
        if (rdn <= tol * gscale && rpn <= 1e-9) {
          stage_ok = true;
          break;
        }
        if (rdn < 0.9 * best_rd) {
          best_rd = rdn;
          stagnant = 0;
        } else {
          ++stagnant;
        }
        const bool near = rdn <= 1e-6 * gscale && rpn <= 1e-9;
        if (no_progress >= 3 || (stagnant >= 5 && near)) {
          // Slack rounding bounds the attainable stationarity near the
          // boundary; accept anything inside the certificate tolerance.
          stage_ok = near;
          break;
        }
        factorize(s, hess, mu);
        Eigen::VectorXd dx, ynew;
        newton_step(gb, rp, dx, ynew);
        const Eigen::VectorXd dy = ynew - st.y;
        const Eigen::VectorXd ds = slack_change(dx);
        double alpha = std::min(1.0, 0.99 * max_step(s, ds));
        const bool feasible = rpn <= 1e-9;
        const double f0 = feasible ? barrier_value(st.x, s, mu) : 0.0;
        const double slope = feasible ? gb.dot(dx) : 0.0;
        const double m0 = std::sqrt(scaled_sq(rd) + rp.squaredNorm());
        bool accepted = false;
        for (int h = 0; h < 60 && alpha > 0.0; ++h, alpha *= 0.5) {
          const Eigen::VectorXd xt = st.x + alpha * dx;
          const Eigen::VectorXd stt = slacks(xt);
          if (stt.size() && stt.minCoeff() <= 0.0) continue;
          if (feasible && slope < 0.0 &&
              barrier_value(xt, stt, mu) <= f0 + 1e-4 * alpha * slope) {
            accepted = true;
          } else {
            // Residual merit; also covers Armijo failing on rounding.

            Eigen::VectorXd gt;
            std::vector<Eigen::Matrix2d> ht;
            objective_derivatives(xt, gt, ht);
            const Eigen::VectorXd yt = st.y + alpha * dy;
            const Eigen::VectorXd rdt =
                residual_d(gt - barrier_gradient(stt, mu), yt);
            const Eigen::VectorXd rpt = A_ * xt - b_;
            const double mt = std::sqrt(scaled_sq(rdt) + rpt.squaredNorm());
            accepted = mt <= (1.0 - 0.01 * alpha) * m0;
          }
          if (accepted) {
            const double step = alpha * dx.lpNorm<Eigen::Infinity>();
            if (step <= 1e-14 * std::max(1.0, st.x.lpNorm<Eigen::Infinity>()))
              ++no_progress;
            else
              no_progress = 0;
            st.x = xt;
            st.y += alpha * dy;
            break;
          }
        }
        ++total;
        if (!accepted) {
          // Line search stalled at rounding level.
          stage_ok = rdn <= 1e-6 * gscale && rpn <= 1e-9;
          break;
        }
      }
      res.iterations = total;
      if (final_stage) {
        res.converged = stage_ok;
        break;
      }
      if (total >= opt.max_iter || !stage_ok) break;
      mu = std::max(mu * opt.mu_factor, opt.mu_final);
    }
    res.g = densities(st.x);
    const Eigen::VectorXd s = slacks(st.x);
    st.lambda.resize(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k)
      st.lambda[k] = mu * scale_of(k) / s[k];
    last_state_ = st;
    return res;
  }

  const IpmState& last_state() const { return last_state_; }

 private:
  const ConvexProblem& p_;
  double u_;
  bool feasibility_;
  std::size_t nvar_ = 0;
  std::vector<IpmBlock> blocks_;
  std::vector<IpmIneq> ineq_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  struct SlackRow {
    int var;
    Eigen::Index row;
    double lower, upper;
  };
  std::vector<SlackRow> slack_rows_;
  std::vector<Eigen::Matrix4d> kinv_;
  std::vector<Eigen::Matrix4d> kmat_;
  Eigen::LDLT<Eigen::MatrixXd> schur_;
  IpmState last_state_;

  double w(std::size_t i) const { return p_.grid.weight(i); }

  double lo(int j, std::size_t i) const {
    return p_.lower[j].empty() ? 0.0 : p_.lower[j][i];
  }
  double hi(int j, std::size_t i) const {
    return p_.upper[j].empty() ? kInf : p_.upper[j][i];
  }

  void build() {
    const std::size_t n = p_.grid.size();
    for (int j = 0; j < 2; ++j) {
      if (!p_.lower[j].empty() && p_.lower[j].size() != n)
        throw DimensionError("convex problem: lower bound length");
      if (!p_.upper[j].empty() && p_.upper[j].size() != n)
        throw DimensionError("convex problem: upper bound length");
      if (p_.tv_ball[j] && p_.tv_ball[j]->center.size() != n)
        throw DimensionError("convex problem: tv center length");
    }
    for (const auto& c : p_.constraints) {
      if (c.weights.size() != n)
        throw DimensionError("linear constraint weights length");
      if (!(c.lower <= c.upper))
        throw ParameterError("linear constraint with lower > upper");
    }

    // Point blocks.
    int next = 0;
    blocks_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      IpmBlock& bl = blocks_[i];
      bl.point = static_cast<int>(i);
      bl.scale = w(i);
      for (int j = 0; j < 2; ++j) {
        const double l = lo(j, i), h = hi(j, i);
        if (l < 0.0) throw ParameterError("lower bound below zero");
        if (h < l - 1e-15 * std::max(1.0, std::abs(l)))
          throw InfeasibleClassError("pointwise lower bound exceeds upper bound",
                                     "box bounds at grid point " +
                                         std::to_string(i));
        if (std::isfinite(h) && h - l <= 1e-14 * std::max(1.0, std::abs(h)))
          bl.fixed[j] = 0.5 * (l + h);
        else
          bl.var[j] = next++;
        if (p_.tv_ball[j]) bl.var[2 + j] = next++;
      }
    }
    // Rows: masses, linear constraints, TV sums.
    struct RowSpec {
      std::vector<std::pair<int, std::pair<int, double>>> coeffs;  // point, slot, value
      double lower, upper;
    };
    std::vector<RowSpec> rows;
    for (int j = 0; j < 2; ++j) {
      RowSpec r{{}, 1.0, 1.0};
      for (std::size_t i = 0; i < n; ++i) r.coeffs.push_back({int(i), {j, w(i)}});
      rows.push_back(std::move(r));
    }
    for (const auto& c : p_.constraints) {
      RowSpec r{{}, c.lower, c.upper};
      const int j = static_cast<int>(c.target);
      for (std::size_t i = 0; i < n; ++i)
        if (c.weights[i] != 0.0)
          r.coeffs.push_back({int(i), {j, w(i) * c.weights[i]}});
      rows.push_back(std::move(r));
    }
    for (int j = 0; j < 2; ++j) {
      if (!p_.tv_ball[j]) continue;
      RowSpec r{{}, -kInf, 1.0 + p_.tv_ball[j]->radius};
      for (std::size_t i = 0; i < n; ++i) r.coeffs.push_back({int(i), {2 + j, w(i)}});
      rows.push_back(std::move(r));
    }

    // Slack variables for range rows.
    std::vector<int> slack_var(rows.size(), -1);
    std::vector<std::size_t> slack_block(rows.size(), 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].lower == rows[r].upper) continue;
      IpmBlock bl;
      bl.var[0] = next;
      slack_var[r] = next++;
      slack_block[r] = blocks_.size();
      blocks_.push_back(bl);
    }
    nvar_ = static_cast<std::size_t>(next);

    // Assemble A and b, moving fixed contributions into b; drop empty rows.
    std::vector<Eigen::VectorXd> arows;
    std::vector<double> bvals;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvar_));
      double fixed_part = 0.0;
      bool any = false;
      for (const auto& [pt, sv] : rows[r].coeffs) {
        const auto& bl = blocks_[static_cast<std::size_t>(pt)];
        const int v = bl.var[sv.first];
        if (v >= 0) {
          a[v] += sv.second;
          any = true;
        } else {
          fixed_part += sv.second * bl.fixed[sv.first];
        }
      }
      if (slack_var[r] >= 0) {
        if (!any) {
          // Row fully determined by fixed values.
          if (fixed_part < rows[r].lower - 1e-9 || fixed_part > rows[r].upper + 1e-9)
            throw InfeasibleClassError("fixed densities violate a constraint",
                                       "row " + std::to_string(r));
          // Slack block stays but with a trivial row tying it to the value.
        }
        a[slack_var[r]] = -1.0;
        slack_rows_.push_back({slack_var[r], static_cast<Eigen::Index>(arows.size()),
                               rows[r].lower, rows[r].upper});
        arows.push_back(a);
        bvals.push_back(-fixed_part);
        const std::size_t sb = slack_block[r];
        IpmBlock& bl = blocks_[sb];
        bl.scale = 1.0;
        if (std::isfinite(rows[r].lower))
          add_ineq(static_cast<int>(sb), 0, 1.0, rows[r].lower);
        if (std::isfinite(rows[r].upper))
          add_ineq(static_cast<int>(sb), 0, -1.0, -rows[r].upper);
      } else {
        if (!any) {
          if (std::abs(fixed_part - rows[r].lower) > 1e-9)
            throw InfeasibleClassError("fixed densities violate an equality",
                                       "row " + std::to_string(r));
          continue;
        }
        arows.push_back(a);
        bvals.push_back(rows[r].lower - fixed_part);
      }
    }
    A_.resize(static_cast<Eigen::Index>(arows.size()),
              static_cast<Eigen::Index>(nvar_));
    b_.resize(static_cast<Eigen::Index>(bvals.size()));
    for (std::size_t r = 0; r < arows.size(); ++r) {
      A_.row(static_cast<Eigen::Index>(r)) = arows[r].transpose();
      b_[static_cast<Eigen::Index>(r)] = bvals[r];
    }

    // Local inequalities on point blocks.
    for (std::size_t i = 0; i < n; ++i) {
      const int b = static_cast<int>(i);
      const auto& bl = blocks_[i];
      for (int j = 0; j < 2; ++j) {
        if (bl.var[j] >= 0) {
          add_ineq(b, j, 1.0, lo(j, i));
          if (std::isfinite(hi(j, i))) add_ineq(b, j, -1.0, -hi(j, i));
        }
        if (p_.tv_ball[j]) {
          add_ineq(b, 2 + j, 1.0, p_.tv_ball[j]->center[i]);
          if (bl.var[j] >= 0) {
            IpmIneq q;
            q.block = b;
            q.a[2 + j] = 1.0;
            q.a[j] = -1.0;
            q.c = 0.0;
            blocks_[i].ineqs.push_back(static_cast<int>(ineq_.size()));
            ineq_.push_back(q);
          } else {
            add_ineq(b, 2 + j, 1.0, bl.fixed[j]);
          }
        }
      }
    }
  }

  void add_ineq(int block, int slot, double coef, double c) {
    IpmIneq q;
    q.block = block;
    q.a[slot] = coef;
    q.c = c;
    blocks_[static_cast<std::size_t>(block)].ineqs.push_back(
        static_cast<int>(ineq_.size()));
    ineq_.push_back(q);
  }

  std::array<double, 4> local(const Eigen::VectorXd& x, const IpmBlock& bl) const {
    std::array<double, 4> v{};
    for (int s = 0; s < 4; ++s) v[s] = bl.var[s] >= 0 ? x[bl.var[s]] : bl.fixed[s];
    return v;
  }

  Eigen::VectorXd slacks(const Eigen::VectorXd& x) const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(ineq_.size()));
    for (std::size_t k = 0; k < ineq_.size(); ++k) {
      const auto& q = ineq_[k];
      const auto v = local(x, blocks_[static_cast<std::size_t>(q.block)]);
      double acc = -q.c;
      for (int t = 0; t < 4; ++t) acc += q.a[t] * v[t];
      s[static_cast<Eigen::Index>(k)] = acc;
    }
    return s;
  }

  IpmState initial_state(std::uint64_t seed) const {
    SplitMix64 gen(derive_seed(seed, 0x1a7));
    auto jitter = [&](double lo_, double hi_) {
      return seed == 0 ? 0.5 * (lo_ + hi_) : uniform(gen, lo_, hi_);
    };
    const double len = p_.grid.x_max() - p_.grid.x_min();
    IpmState st;
    st.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvar_));
    for (const auto& bl : blocks_) {
      if (bl.point < 0) continue;
      const auto i = static_cast<std::size_t>(bl.point);
      std::array<double, 2> g{};
      for (int j = 0; j < 2; ++j) {
        const double l = lo(j, i), h = hi(j, i);
        if (bl.var[j] < 0) {
          g[j] = bl.fixed[j];
        } else if (std::isfinite(h)) {
          g[j] = l + (h - l) * jitter(0.2, 0.8);
        } else {
          g[j] = l + jitter(0.5, 1.5) / len;
        }
        if (bl.var[j] >= 0) st.x[bl.var[j]] = g[j];
        if (p_.tv_ball[j])
          st.x[bl.var[2 + j]] =
              std::max(g[j], p_.tv_ball[j]->center[i]) + jitter(0.25, 0.75) / len;
      }
    }
    // Slack start: current row value pushed into the interior.
    for (const auto& sr : slack_rows_) {
      const int v = sr.var;
      const Eigen::Index r = sr.row;
      // Full row value a.x + fixed part, with the slack itself excluded.
      double val = A_.row(r).dot(st.x) + st.x[v] - b_[r];
      const double l = sr.lower, h = sr.upper;
      if (std::isfinite(l) && std::isfinite(h)) {
        const double d = 0.1 * (h - l);
        val = std::clamp(val, l + d, h - d);
      } else if (std::isfinite(l)) {
        val = std::max(val, l + std::max(0.1, 0.1 * std::abs(l)));
      } else {
        val = std::min(val, h - std::max(0.1, 0.1 * std::abs(h)));
      }
      st.x[v] = val;
    }
    st.y = Eigen::VectorXd::Zero(b_.size());
    return st;
  }

  void objective_derivatives(const Eigen::VectorXd& x, Eigen::VectorXd& grad,
                             std::vector<Eigen::Matrix2d>& hess) const {
    grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvar_));
    hess.assign(blocks_.size(), Eigen::Matrix2d::Zero());
    if (feasibility_) return;
    const double u = u_;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& bl = blocks_[b];
      if (bl.point < 0) continue;
      const double a = floored(bl.var[0] >= 0 ? x[bl.var[0]] : bl.fixed[0]);
      const double c = floored(bl.var[1] >= 0 ? x[bl.var[1]] : bl.fixed[1]);
      const double r = c / a;
      const double ru = std::pow(r, u);
      const double wi = bl.scale;
      // phi = a^(1-u) c^u, minimized as -w phi.
      if (bl.var[0] >= 0) grad[bl.var[0]] = -wi * (1.0 - u) * ru;
      if (bl.var[1] >= 0) grad[bl.var[1]] = -wi * u * ru / r;
      const double k = u * (1.0 - u) * ru / a;
      Eigen::Matrix2d h;
      h << k, -k / r, -k / r, k / (r * r);
      hess[b] = wi * h;
    }
  }

  double scale_of(Eigen::Index k) const {
    return blocks_[static_cast<std::size_t>(ineq_[static_cast<std::size_t>(k)].block)]
        .scale;
  }

  // Gradient of mu * sum_k scale_k log s_k with respect to x.
  Eigen::VectorXd barrier_gradient(const Eigen::VectorXd& s, double mu) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvar_));
    for (std::size_t k = 0; k < ineq_.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      const auto& q = ineq_[k];
      const auto& bl = blocks_[static_cast<std::size_t>(q.block)];
      const double c = mu * bl.scale / s[e];
      for (int t = 0; t < 4; ++t)
        if (q.a[t] != 0.0 && bl.var[t] >= 0) g[bl.var[t]] += c * q.a[t];
    }
    return g;
  }

  double barrier_value(const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                       double mu) const {
    double f = 0.0;
    if (!feasibility_) {
      for (const auto& bl : blocks_) {
        if (bl.point < 0) continue;
        const double a = bl.var[0] >= 0 ? x[bl.var[0]] : bl.fixed[0];
        const double c = bl.var[1] >= 0 ? x[bl.var[1]] : bl.fixed[1];
        f -= bl.scale * affinity_term(a, c, u_);
      }
    }
    for (Eigen::Index k = 0; k < s.size(); ++k)
      f -= mu * scale_of(k) * std::log(s[k]);
    return f;
  }

  Eigen::VectorXd residual_d(const Eigen::VectorXd& gb,
                             const Eigen::VectorXd& y) const {
    Eigen::VectorXd rd = gb;
    if (A_.rows() > 0) rd += A_.transpose() * y;
    return rd;
  }

  double scaled_sq(const Eigen::VectorXd& rd) const {
    double m = 0.0;
    for (const auto& bl : blocks_)
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) {
          const double v = rd[bl.var[t]] / bl.scale;
          m += v * v;
        }
    return m;
  }

  Eigen::VectorXd slack_change(const Eigen::VectorXd& dx) const {
    Eigen::VectorXd ds(static_cast<Eigen::Index>(ineq_.size()));
    for (std::size_t k = 0; k < ineq_.size(); ++k) {
      const auto& q = ineq_[k];
      const auto& bl = blocks_[static_cast<std::size_t>(q.block)];
      double d = 0.0;
      for (int t = 0; t < 4; ++t)
        if (q.a[t] != 0.0 && bl.var[t] >= 0) d += q.a[t] * dx[bl.var[t]];
      ds[static_cast<Eigen::Index>(k)] = d;
    }
    return ds;
  }

  double scaled_norm(const Eigen::VectorXd& rd) const {
    double m = 0.0;
    for (const auto& bl : blocks_)
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) m = std::max(m, std::abs(rd[bl.var[t]]) / bl.scale);
    return m;
  }

  void factorize(const Eigen::VectorXd& s,
                 const std::vector<Eigen::Matrix2d>& hess, double mu) {
    const Eigen::Index m = A_.rows();
    kinv_.resize(blocks_.size());
    kmat_.resize(blocks_.size());
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, m);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& bl = blocks_[b];
      Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
      K.topLeftCorner<2, 2>() = hess[b];
      for (int k : bl.ineqs) {
        const auto& q = ineq_[static_cast<std::size_t>(k)];
        const double d = mu * bl.scale / (s[k] * s[k]);
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) K(r, c) += d * q.a[r] * q.a[c];
      }
      for (int t = 0; t < 4; ++t) {
        if (bl.var[t] < 0) {
          K.row(t).setZero();
          K.col(t).setZero();
          K(t, t) = 1.0;
        }
      }
      const double reg = 1e-14 * std::max(1.0, K.diagonal().maxCoeff());
      K.diagonal().array() += reg;
      kmat_[b] = K;
      kinv_[b] = K.inverse();
      if (m == 0) continue;
      Eigen::Matrix<double, Eigen::Dynamic, 4> Ab =
          Eigen::Matrix<double, Eigen::Dynamic, 4>::Zero(m, 4);
      bool any = false;
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) {
          Ab.col(t) = A_.col(bl.var[t]);
          any = any || Ab.col(t).squaredNorm() > 0.0;
        }
      if (any) S.noalias() += Ab * kinv_[b] * Ab.transpose();
    }
    if (m > 0) schur_.compute(S);
  }

  Eigen::VectorXd apply_kinv(const Eigen::VectorXd& r) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(r.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& bl = blocks_[b];
      Eigen::Vector4d v = Eigen::Vector4d::Zero();
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) v[t] = r[bl.var[t]];
      const Eigen::Vector4d z = kinv_[b] * v;
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) out[bl.var[t]] = z[t];
    }
    return out;
  }

  Eigen::VectorXd apply_k(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& bl = blocks_[b];
      Eigen::Vector4d z = Eigen::Vector4d::Zero();
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) z[t] = v[bl.var[t]];
      z = kmat_[b] * z;
      for (int t = 0; t < 4; ++t)
        if (bl.var[t] >= 0) out[bl.var[t]] = z[t];
    }
    return out;
  }

  // Solves [K A^T; A 0] [dx; y] = [r1; r2] via the Schur complement.
  void kkt_solve(const Eigen::VectorXd& r1, const Eigen::VectorXd& r2,
                 Eigen::VectorXd& dx, Eigen::VectorXd& y) const {
    const Eigen::VectorXd kr = apply_kinv(r1);
    if (A_.rows() > 0) {
      y = schur_.solve(A_ * kr - r2);
      dx = apply_kinv(r1 - A_.transpose() * y);
    } else {
      y.resize(0);
      dx = kr;
    }
  }

  // Newton system for the barrier problem with two rounds of iterative
  // refinement; the Schur complement is badly scaled near the boundary.
  void newton_step(const Eigen::VectorXd& gb, const Eigen::VectorXd& rp,
                   Eigen::VectorXd& dx, Eigen::VectorXd& y) const {
    const Eigen::VectorXd r1 = -gb;
    const Eigen::VectorXd r2 = -rp;
    kkt_solve(r1, r2, dx, y);
    if (A_.rows() == 0) return;
    for (int round = 0; round < 2; ++round) {
      const Eigen::VectorXd e1 = r1 - apply_k(dx) - A_.transpose() * y;
      const Eigen::VectorXd e2 = r2 - A_ * dx;
      Eigen::VectorXd cx, cy;
      kkt_solve(e1, e2, cx, cy);
      dx += cx;
      y += cy;
    }
  }

  static double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
    double a = kInf;
    for (Eigen::Index k = 0; k < v.size(); ++k)
      if (dv[k] < 0.0) a = std::min(a, -v[k] / dv[k]);
    return a;
  }

  std::array<std::vector<double>, 2> densities(const Eigen::VectorXd& x) const {
    const std::size_t n = p_.grid.size();
    std::array<std::vector<double>, 2> g{std::vector<double>(n),
                                         std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      const auto& bl = blocks_[i];
      for (int j = 0; j < 2; ++j) {
        const double v = bl.var[j] >= 0 ? x[bl.var[j]] : bl.fixed[j];
        g[j][i] = std::clamp(v, lo(j, i), hi(j, i));
      }
    }
    return g;
  }
};

inline double constraint_value(const Grid& grid, const LinearConstraint& c,
                               const std::vector<double>& g) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    acc += grid.weight(i) * c.weights[i] * g[i];
  return acc;
}

// Range of one linear functional over {box, unit mass} by greedy filling.
inline std::pair<double, double> functional_range(const ConvexProblem& p, int j,
                                                  const std::vector<double>& h) {
  const std::size_t n = p.grid.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return h[a] < h[b]; });
  auto lo = [&](std::size_t i) { return p.lower[j].empty() ? 0.0 : p.lower[j][i]; };
  auto hi = [&](std::size_t i) { return p.upper[j].empty() ? kInf : p.upper[j][i]; };
  double base_mass = 0.0, base_val = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    base_mass += p.grid.weight(i) * lo(i);
    base_val += p.grid.weight(i) * lo(i) * h[i];
  }
  auto fill = [&](auto begin, auto end) {
    double rem = 1.0 - base_mass;
    double val = base_val;
    for (auto it = begin; it != end && rem > 0.0; ++it) {
      const std::size_t i = *it;
      const double cap = p.grid.weight(i) * (hi(i) - lo(i));
      const double take = std::min(rem, cap);
      val += take * h[i];
      rem -= take;
    }
    return val;
  };
  return {fill(idx.begin(), idx.end()), fill(idx.rbegin(), idx.rend())};
}

inline void check_simple_feasibility(const ConvexProblem& p) {
  const std::size_t n = p.grid.size();
  for (int j = 0; j < 2; ++j) {
    double mlo = 0.0, mhi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mlo += p.grid.weight(i) * (p.lower[j].empty() ? 0.0 : p.lower[j][i]);
      mhi += p.grid.weight(i) * (p.upper[j].empty() ? kInf : p.upper[j][i]);
    }
    if (mlo > 1.0 + 1e-12 || mhi < 1.0 - 1e-12)
      throw InfeasibleClassError(
          "box bounds exclude unit mass",
          "hypothesis " + std::to_string(j) + ": {mass, box}");
  }
  for (std::size_t k = 0; k < p.constraints.size(); ++k) {
    const auto& c = p.constraints[k];
    const int j = static_cast<int>(c.target);
    const auto [mn, mx] = functional_range(p, j, c.weights);
    if (mn > c.upper + 1e-12 || mx < c.lower - 1e-12)
      throw InfeasibleClassError(
          "constraint '" + c.label + "' cannot hold for any density",
          "irreducible subset: {mass, box, constraint " + std::to_string(k) +
              "}");
  }
}

// Deletion filter over the linear constraints of hypothesis j using the
// feasibility-only IPM; returns the indices of an irreducible infeasible set.
inline std::vector<std::size_t> infeasible_subset(const ConvexProblem& p,
                                                  int j) {
  auto feasible = [&](const std::vector<std::size_t>& keep) {
    ConvexProblem q(p.grid);
    q.lower = p.lower;
    q.upper = p.upper;
    q.tv_ball = p.tv_ball;
    for (std::size_t k : keep) q.constraints.push_back(p.constraints[k]);
    AffinityIpm ipm(q, 0.5, true);
    SolverOptions o;
    o.max_iter = 150;
    o.mu_final = 1e-9;
    return ipm.solve(o).primal_residual <= 1e-8;
  };
  std::vector<std::size_t> set;
  for (std::size_t k = 0; k < p.constraints.size(); ++k)
    if (static_cast<int>(p.constraints[k].target) == j) set.push_back(k);
  if (feasible(set)) return {};
  for (std::size_t pos = 0; pos < set.size();) {
    auto trial = set;
    trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(pos));
    if (!feasible(trial))
      set = std::move(trial);
    else
      ++pos;
  }
  return set;
}

}  // namespace detail

inline InnerSolution maximize_affinity_at_u(const ConvexProblem& problem,
                                            UAffinityParam u,
                                            const SolverOptions& opt = {}) {
  detail::check_simple_feasibility(problem);
  const Grid& grid = problem.grid;
  detail::AffinityIpm ipm(problem, u, false);
  auto res = ipm.solve(opt);
  if (!res.converged) {
    if (res.primal_residual > 1e-6) {
      std::string hint = "irreducible subset:";
      for (int j = 0; j < 2; ++j) {
        const auto set = detail::infeasible_subset(problem, j);
        if (set.empty()) continue;
        hint += " hypothesis " + std::to_string(j) + " {mass, box";
        for (std::size_t k : set) hint += ", " + problem.constraints[k].label;
        hint += "}";
      }
      throw InfeasibleClassError("convex program is infeasible", hint);
    }
    std::vector<double> last = res.g[0];
    last.insert(last.end(), res.g[1].begin(), res.g[1].end());
    throw ConvergenceError("interior point method did not converge in " +
                               std::to_string(res.iterations) + " iterations",
                           std::move(last));
  }
  // Clamping to the box can shift mass; reject if it drifts.
  for (int j = 0; j < 2; ++j) {
    const double m = trapezoid_integral(grid, res.g[j]);
    if (std::abs(m - 1.0) > 1e-8)
      throw ConvergenceError("inner solution mass off unity");
  }
  InnerSolution out{GridDensity(grid, res.g[0]), GridDensity(grid, res.g[1])};
  out.objective = u_affinity(out.lfd0, out.lfd1, u);
  out.iterations = res.iterations;
  double viol = 0.0;
  for (std::size_t k = 0; k < problem.constraints.size(); ++k) {
    const auto& c = problem.constraints[k];
    const double v = detail::constraint_value(
        grid, c, c.target == Hypothesis::h0 ? res.g[0] : res.g[1]);
    viol = std::max({viol, c.lower - v, v - c.upper});
    const double tol_l = 1e-7 * std::max(1.0, std::abs(c.lower));
    const double tol_u = 1e-7 * std::max(1.0, std::abs(c.upper));
    if (std::abs(v - c.lower) <= tol_l || std::abs(v - c.upper) <= tol_u)
      out.active_constraints.push_back(k);
  }
  for (int j = 0; j < 2; ++j)
    if (problem.tv_ball[j]) {
      const GridFunction center(grid, problem.tv_ball[j]->center);
      const double tv = tv_distance(j == 0 ? out.lfd0 : out.lfd1, center);
      viol = std::max(viol, tv - problem.tv_ball[j]->radius);
    }
  out.max_violation = std::max(viol, 0.0);
  out.kkt_residual = std::max(
      {res.dual_residual, res.complementarity, res.primal_residual});
  if (out.objective > 1.0 - 1e-8)
    throw ClassOverlapError(
        "u-affinity reaches 1: the two classes share a density");
  return out;
}

// Spec-shaped entry point: per-hypothesis constraint lists on a grid.
inline InnerSolution maximize_affinity_at_u(
    const std::vector<LinearConstraint>& constraints0,
    const std::vector<LinearConstraint>& constraints1, const Grid& grid,
    UAffinityParam u, const SolverOptions& opt = {}) {
  ConvexProblem p(grid);
  for (auto c : constraints0) {
    c.target = Hypothesis::h0;
    p.constraints.push_back(std::move(c));
  }
  for (auto c : constraints1) {
    c.target = Hypothesis::h1;
    p.constraints.push_back(std::move(c));
  }
  return maximize_affinity_at_u(p, u, opt);
}

struct ProfilePoint {
  double u = 0.0;
  double objective = 0.0;
};

struct ConvexLFDResult {
  double u_star = 0.5;
  GridDensity lfd0;
  GridDensity lfd1;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  std::vector<std::size_t> active_constraints;
  std::vector<ProfilePoint> profile;
};

// Default outer grid: 21 equispaced interior points (k + 1) / 22.
inline std::vector<double> default_u_grid() {
  std::vector<double> g(21);
  for (int k = 0; k < 21; ++k) g[static_cast<std::size_t>(k)] = (k + 1) / 22.0;
  return g;
}

inline ConvexLFDResult minimize_over_u(const ConvexProblem& problem,
                                       std::vector<double> u_grid = default_u_grid(),
                                       double width = 1e-4,
                                       const SolverOptions& opt = {}) {
  if (u_grid.size() < 3) throw ParameterError("u grid needs at least 3 points");
  std::sort(u_grid.begin(), u_grid.end());
  for (double u : u_grid)
    if (!(u > 0.0 && u < 1.0)) throw ParameterError("u grid outside (0, 1)");
  std::vector<ProfilePoint> profile;
  std::optional<InnerSolution> best;
  double best_u = 0.0;
  auto eval = [&](double u) {
    auto s = maximize_affinity_at_u(problem, u, opt);
    profile.push_back({u, s.objective});
    if (!best || s.objective < best->objective) {
      best_u = u;
      best = std::move(s);
    }
    return profile.back().objective;
  };
  std::size_t kmin = 0;
  double vmin = kInf;
  for (std::size_t k = 0; k < u_grid.size(); ++k) {
    const double v = eval(u_grid[k]);
    if (v < vmin) {
      vmin = v;
      kmin = k;
    }
  }
  const double a = kmin == 0 ? 0.5 * u_grid[0] : u_grid[kmin - 1];
  const double b = kmin + 1 == u_grid.size() ? 0.5 * (1.0 + u_grid.back())
                                             : u_grid[kmin + 1];
  roots::golden_section_min(eval, a, b, width);
  std::sort(profile.begin(), profile.end(),
            [](const ProfilePoint& x, const ProfilePoint& y) { return x.u < y.u; });
  ConvexLFDResult r{best_u, best->lfd0, best->lfd1, best->objective,
                    best->kkt_residual, best->max_violation,
                    best->active_constraints, std::move(profile)};
  return r;
}

inline double sup_distance(const GridFunction& a, const GridFunction& b) {
  require_same_grid(a.grid(), b.grid());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Largest sup-distance between inner LFD pairs over all pairs of u values.
inline double u_dependence_metric(const ConvexProblem& problem,
                                  const std::vector<double>& u_list,
                                  const SolverOptions& opt = {}) {
  if (u_list.size() < 2) throw ParameterError("u_list needs at least 2 values");
  std::vector<InnerSolution> sols;
  for (double u : u_list) sols.push_back(maximize_affinity_at_u(problem, u, opt));
  double m = 0.0;
  for (std::size_t a = 0; a < sols.size(); ++a)
    for (std::size_t b = a + 1; b < sols.size(); ++b)
      m = std::max({m, sup_distance(sols[a].lfd0, sols[b].lfd0),
                    sup_distance(sols[a].lfd1, sols[b].lfd1)});
  return m;
}

}  // namespace robust_lfd
