#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "weaknesslab/errors.hpp"

// Dense revised-simplex solver for the bounded max-margin problem
//
//     maximise eps  subject to  A x >= eps * 1,  ||x||_inf <= 1,
//
// with x free and A an m x n constraint matrix. The optimum eps* is always
// >= 0 (x = 0 gives margin 0), and by homogeneity the strict system
// { A x >= eps 1 } with unbounded x is feasible for some (equivalently all)
// eps > 0 exactly when eps* > 0.
//
// The LP is solved through its dual,
//
//     minimise 1'u + 1'v  subject to  A'y = u - v,  1'y = 1,  y, u, v >= 0,
//
// which has only n+1 rows however many constraint rows the primal carries.
// The basis { y_0 } union { u_i or v_i } is feasible outright, so no
// artificial variables or phase-1 pass are needed. Only the basis
// factorization is maintained (LU plus eta updates, refreshed on a fixed
// interval); pricing computes exact reduced costs through the simplex
// multipliers each iteration, with the y block priced by one m x n
// matrix-vector product.
//
// ReLU features make these systems massively degenerate, so the rhs carries
// a deterministic Charnes-style perturbation that resolves every tie; since
// reduced costs do not depend on the rhs, the optimal basis certificate
// transfers to the exact problem, where the objective is then evaluated.
// Pricing is Dantzig with Bland's rule as the anti-cycling fallback after a
// stall, and ratio-test ties prefer large pivot elements. The pivot sequence
// is deterministic and capped at 50*(m+n) iterations; exceeding the cap
// raises SolverError, which is distinct from an infeasibility verdict.
//
// The optimal primal pair is read off the multipliers: x = -pi_head,
// eps = pi_tail, re-certified by direct substitution of x.

namespace weaknesslab {

struct MaxMarginResult {
  // Certified margin: the minimum slack of the returned witness, computed by
  // direct substitution, so feasible verdicts never rest on solver trust.
  double eps_star = 0.0;
  // Objective of the final basis against the exact rhs (diagnostic; equals
  // eps_star up to factorization rounding, and upper-bounds the optimum when
  // the solve stopped at an early-exit certificate).
  double eps_tableau = 0.0;
  Eigen::VectorXd x;  // witness, ||x||_inf <= 1
  long iterations = 0;
};

// Verdict-driven stopping: a feasibility check at threshold theta does not
// need the exact optimum. The solve may stop once the running witness
// certifies margin >= feasible_at (a true lower bound by substitution) or the
// dual objective, a true upper bound on eps*, drops below infeasible_below.
struct EarlyExit {
  double feasible_at = std::numeric_limits<double>::infinity();
  double infeasible_below = -std::numeric_limits<double>::infinity();
};

namespace detail {

class MarginSimplex {
 public:
  explicit MarginSimplex(const Eigen::MatrixXd& a, long iteration_cap)
      : a_(a),
        m_(a.rows()),
        n_(a.cols()),
        n_cols_(m_ + 2 * n_),
        cap_(iteration_cap > 0 ? iteration_cap : 50 * static_cast<long>(m_ + n_)) {}

  // An optimal basis of a problem with fewer rows stays feasible when rows
  // are appended (rows enter the dual as columns), so pools of closely
  // related systems can restart from a shared base basis.
  void warm_start(const std::vector<Eigen::Index>& basis) { warm_basis_ = basis; }

  void early_exit(const EarlyExit& early) { early_ = early; }

  const std::vector<Eigen::Index>& final_basis() const { return basis_; }

  MaxMarginResult solve() {
    if (!warm_basis_.empty()) {
      basis_ = warm_basis_;
    } else {
      build_initial_basis();
    }
    in_basis_.assign(static_cast<std::size_t>(n_cols_), 0);
    for (Eigen::Index b : basis_) in_basis_[static_cast<std::size_t>(b)] = 1;
    refresh_factorization();
    run();

    MaxMarginResult result;
    result.iterations = iterations_;
    Eigen::VectorXd pi = multipliers();
    result.x.resize(n_);
    for (Eigen::Index i = 0; i < n_; ++i)
      result.x[i] = std::clamp(-pi[i], -1.0, 1.0);
    result.eps_star = (a_ * result.x).minCoeff();
    // Objective of the final basis against the exact (unperturbed) rhs.
    Eigen::VectorXd beta_exact = ftran(exact_rhs());
    double value = 0.0;
    for (Eigen::Index i = 0; i <= n_; ++i)
      value += cost_of(basis_[static_cast<std::size_t>(i)]) * beta_exact[i];
    result.eps_tableau = value;
    return result;
  }

 private:
  static constexpr double kCostTol = 1e-9;
  static constexpr double kPivotTol = 1e-7;
  static constexpr double kPerturb = 1e-9;
  static constexpr int kStallLimit = 64;
  static constexpr long kRefreshInterval = 64;

  // Deterministic rhs tilt (golden-ratio spaced) that breaks every
  // degenerate tie; its effect on the optimum is bounded by n * 2e-9 and the
  // final certificate is re-evaluated against the exact rhs.
  double rhs_delta(Eigen::Index i) const {
    double frac = std::fmod(0.6180339887498949 * static_cast<double>(i + 1), 1.0);
    return kPerturb * (1.0 + frac);
  }

  Eigen::VectorXd perturbed_rhs() const {
    Eigen::VectorXd h(n_ + 1);
    for (Eigen::Index i = 0; i < n_; ++i) h[i] = rhs_delta(i);
    h[n_] = 1.0;
    return h;
  }

  Eigen::VectorXd exact_rhs() const {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(n_ + 1);
    h[n_] = 1.0;
    return h;
  }

  // Original column j of the dual constraint matrix [A' -I I; 1' 0 0].
  Eigen::VectorXd original_column(Eigen::Index j) const {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(n_ + 1);
    if (j < m_) {
      col.head(n_) = a_.row(j).transpose();
      col[n_] = 1.0;
    } else if (j < m_ + n_) {
      col[j - m_] = -1.0;
    } else {
      col[j - m_ - n_] = 1.0;
    }
    return col;
  }

  double cost_of(Eigen::Index j) const { return j < m_ ? 0.0 : 1.0; }

  void build_initial_basis() {
    basis_.assign(static_cast<std::size_t>(n_ + 1), 0);
    basis_[static_cast<std::size_t>(n_)] = 0;  // y_0 covers the convexity row
    // With y_0 = 1 basic, row i reads a_0i - u_i + v_i = delta_i, so u_i is
    // feasible when a_0i >= delta_i and v_i otherwise.
    for (Eigen::Index i = 0; i < n_; ++i)
      basis_[static_cast<std::size_t>(i)] =
          a_(0, i) >= rhs_delta(i) ? (m_ + i) : (m_ + n_ + i);
  }

  void refresh_factorization() {
    Eigen::MatrixXd b(n_ + 1, n_ + 1);
    for (Eigen::Index i = 0; i <= n_; ++i)
      b.col(i) = original_column(basis_[static_cast<std::size_t>(i)]);
    lu_.compute(b);
    etas_.clear();
    beta_ = ftran(perturbed_rhs());
    if (!beta_.allFinite())
      throw SolverError("solve_max_margin: singular basis at refactorization");
  }

  struct Eta {
    Eigen::VectorXd d;  // B^-1 * entering column at the time of the pivot
    Eigen::Index row;
  };

  // B^-1 v through the LU factors and the eta stack.
  Eigen::VectorXd ftran(const Eigen::VectorXd& v) const {
    Eigen::VectorXd x = lu_.solve(v);
    for (const Eta& e : etas_) {
      double xr = x[e.row] / e.d[e.row];
      x -= xr * e.d;
      x[e.row] = xr;
    }
    return x;
  }

  // B^-T w: eta transposes in reverse order, then the LU transpose solve.
  Eigen::VectorXd btran(const Eigen::VectorXd& w) const {
    Eigen::VectorXd x = w;
    for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
      const Eta& e = *it;
      double acc = x[e.row];
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (i != e.row) acc -= e.d[i] * x[i];
      x[e.row] = acc / e.d[e.row];
    }
    return lu_.transpose().solve(x);
  }

  Eigen::VectorXd multipliers() const {
    Eigen::VectorXd cb(n_ + 1);
    for (Eigen::Index i = 0; i <= n_; ++i)
      cb[i] = cost_of(basis_[static_cast<std::size_t>(i)]);
    return btran(cb);
  }

  // Reduced costs: y_r -> -(a_r . pi_head + pi_tail), u_i -> 1 + pi_i,
  // v_i -> 1 - pi_i.
  Eigen::Index price(const Eigen::VectorXd& pi, const Eigen::VectorXd& rc_y,
                     bool bland) const {
    Eigen::Index enter = -1;
    double best_cost = -kCostTol;
    auto consider = [&](Eigen::Index j, double rc) {
      if (in_basis_[static_cast<std::size_t>(j)]) return false;
      if (bland) {
        if (rc < -kCostTol) {
          enter = j;
          return true;  // lowest index wins; stop scanning
        }
        return false;
      }
      if (rc < best_cost) {
        best_cost = rc;
        enter = j;
      }
      return false;
    };
    for (Eigen::Index r = 0; r < m_; ++r)
      if (consider(r, rc_y[r])) return enter;
    for (Eigen::Index i = 0; i < n_; ++i)
      if (consider(m_ + i, 1.0 + pi[i])) return enter;
    for (Eigen::Index i = 0; i < n_; ++i)
      if (consider(m_ + n_ + i, 1.0 - pi[i])) return enter;
    return enter;
  }

  // Ratio test over direction d. Basic values are clamped at zero so
  // rounding noise cannot produce negative ratios; ties prefer the largest
  // pivot element for stability, or the lowest basis index under Bland.
  Eigen::Index ratio_test(const Eigen::VectorXd& d, bool bland) const {
    Eigen::Index leave = -1;
    double best_ratio = 0.0, best_coef = 0.0;
    for (Eigen::Index i = 0; i <= n_; ++i) {
      double coef = d[i];
      if (coef <= kPivotTol) continue;
      double ratio = std::max(beta_[i], 0.0) / coef;
      bool take = false;
      if (leave < 0 || ratio < best_ratio) {
        take = true;
      } else if (ratio == best_ratio) {
        take = bland ? basis_[static_cast<std::size_t>(i)] <
                           basis_[static_cast<std::size_t>(leave)]
                     : coef > best_coef;
      }
      if (take) {
        leave = i;
        best_ratio = ratio;
        best_coef = coef;
      }
    }
    return leave;
  }

  double objective() const {
    double value = 0.0;
    for (Eigen::Index i = 0; i <= n_; ++i)
      value += cost_of(basis_[static_cast<std::size_t>(i)]) * beta_[i];
    return value;
  }

  // Margin certified by the witness the multipliers imply. Reuses the
  // pricing product A*pi_head; only coordinates clamped by the box need a
  // correction pass, and they are usually absent.
  double certified_margin(const Eigen::VectorXd& pi,
                          const Eigen::VectorXd& a_pi) const {
    bool clamped = false;
    for (Eigen::Index i = 0; i < n_ && !clamped; ++i)
      if (std::fabs(pi[i]) > 1.0) clamped = true;
    if (!clamped) return -a_pi.maxCoeff();
    Eigen::VectorXd x(n_);
    for (Eigen::Index i = 0; i < n_; ++i) x[i] = std::clamp(-pi[i], -1.0, 1.0);
    return (a_ * x).minCoeff();
  }

  void run() {
    int stall = 0;  // consecutive pivots without objective progress
    double last_objective = std::numeric_limits<double>::infinity();
    while (true) {
      const bool bland = stall >= kStallLimit;
      Eigen::VectorXd pi = multipliers();
      Eigen::VectorXd a_pi = a_ * pi.head(n_);
      if (objective() < early_.infeasible_below) return;
      if (certified_margin(pi, a_pi) >= early_.feasible_at) return;
      Eigen::VectorXd rc_y = -a_pi.array() - pi[n_];
      Eigen::Index enter = price(pi, rc_y, bland);
      if (enter < 0) {
        if (etas_.empty()) return;  // certificate against a fresh factorization
        refresh_factorization();
        continue;
      }
      Eigen::VectorXd d = ftran(original_column(enter));
      Eigen::Index leave = ratio_test(d, bland);
      if (leave < 0) {
        // The dual is bounded by construction; a column with no pivotable
        // entry can only be factorization noise unless it survives a fresh
        // factorization.
        if (etas_.empty())
          throw SolverError("solve_max_margin: unbounded pivot column");
        refresh_factorization();
        continue;
      }
      if (++iterations_ > cap_)
        throw SolverError("solve_max_margin: iteration cap " +
                          std::to_string(cap_) + " exceeded");

      double theta = std::max(beta_[leave], 0.0) / d[leave];
      beta_ -= theta * d;
      beta_[leave] = theta;
      in_basis_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(leave)])] = 0;
      in_basis_[static_cast<std::size_t>(enter)] = 1;
      basis_[static_cast<std::size_t>(leave)] = enter;
      etas_.push_back(Eta{std::move(d), leave});
      if (static_cast<long>(etas_.size()) >= kRefreshInterval) refresh_factorization();

      double value = objective();
      if (value < last_objective) {
        stall = 0;
        last_objective = value;
      } else {
        ++stall;
      }
    }
  }

  const Eigen::MatrixXd& a_;
  const Eigen::Index m_, n_, n_cols_;
  const long cap_;
  EarlyExit early_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  std::vector<Eta> etas_;
  Eigen::VectorXd beta_;  // current basic values against the perturbed rhs
  std::vector<Eigen::Index> basis_;
  std::vector<Eigen::Index> warm_basis_;
  std::vector<char> in_basis_;
  long iterations_ = 0;
};

}  // namespace detail

inline MaxMarginResult solve_max_margin(const Eigen::MatrixXd& a,
                                        long iteration_cap = 0) {
  if (a.rows() == 0) throw ArgumentError("solve_max_margin: no constraint rows");
  if (!a.allFinite()) throw NumericError("solve_max_margin: non-finite constraints");
  detail::MarginSimplex solver(a, iteration_cap);
  return solver.solve();
}

// Solves one base system cold, then many extended systems (base rows plus a
// few extra rows each) warm from the base-optimal basis.
class WarmMarginSolver {
 public:
  explicit WarmMarginSolver(Eigen::MatrixXd base, long iteration_cap = 0)
      : base_(std::move(base)), cap_(iteration_cap) {
    if (base_.rows() == 0) throw ArgumentError("WarmMarginSolver: no base rows");
    if (!base_.allFinite())
      throw NumericError("WarmMarginSolver: non-finite constraints");
    detail::MarginSimplex solver(base_, cap_);
    base_result_ = solver.solve();
    base_basis_ = solver.final_basis();
  }

  const MaxMarginResult& base() const { return base_result_; }

  MaxMarginResult solve_with_extra(const Eigen::MatrixXd& extra,
                                   const EarlyExit* early = nullptr) {
    if (extra.rows() == 0) return base_result_;
    if (extra.cols() != base_.cols())
      throw ArgumentError("WarmMarginSolver: extra row width mismatch");
    if (!extra.allFinite())
      throw NumericError("WarmMarginSolver: non-finite constraints");
    const Eigen::Index m0 = base_.rows();
    Eigen::MatrixXd full(m0 + extra.rows(), base_.cols());
    full.topRows(m0) = base_;
    full.bottomRows(extra.rows()) = extra;
    detail::MarginSimplex solver(full, cap_);
    // Base u/v column ids shift by the number of appended rows.
    std::vector<Eigen::Index> warm = base_basis_;
    for (Eigen::Index& b : warm)
      if (b >= m0) b += extra.rows();
    solver.warm_start(warm);
    if (early) solver.early_exit(*early);
    return solver.solve();
  }

 private:
  Eigen::MatrixXd base_;
  long cap_;
  MaxMarginResult base_result_;
  std::vector<Eigen::Index> base_basis_;
};

}  // namespace weaknesslab
