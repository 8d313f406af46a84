#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "weaknesslab/errors.hpp"
#include "weaknesslab/simplex.hpp"

// Feature-classifier vocabulary engine. Programs are "input x wins class c
// under final-layer weights (W, b)" over the shared parameter space
// R^{K d + K}; a set of such programs is consistent exactly when the strict
// linear system
//
//    (W_{winner} - W_{loser}) . phi(x) + (b_{winner} - b_{loser}) >= eps
//
// has a solution. Feasibility checks run through the bounded max-margin LP
// in simplex.hpp; the pair proxy sums, over probe inputs, the number of
// classes that stay jointly feasible with all training constraints.

namespace weaknesslab {

struct FeatureMatrix {
  Eigen::MatrixXd train_features;  // n x d
  std::vector<int> train_labels;   // < n_classes
  Eigen::MatrixXd probe_features;  // m x d
  int n_classes = 10;

  Eigen::Index d() const { return train_features.cols(); }
  Eigen::Index n_train() const { return train_features.rows(); }
  Eigen::Index n_probe() const { return probe_features.rows(); }

  void validate() const {
    if (static_cast<std::size_t>(train_features.rows()) != train_labels.size())
      throw ArgumentError("FeatureMatrix: feature/label count mismatch");
    if (!train_features.allFinite() || !probe_features.allFinite())
      throw NumericError("FeatureMatrix: non-finite features");
    if (probe_features.rows() > 0 && probe_features.cols() != train_features.cols())
      throw ArgumentError("FeatureMatrix: probe feature width mismatch");
    for (int l : train_labels)
      if (l < 0 || l >= n_classes)
        throw ArgumentError("FeatureMatrix: label out of class range");
  }
};

struct FeasRow {
  Eigen::VectorXd feature;
  int winner = 0;
  int loser = 0;
};

struct FeasibilityProblem {
  std::vector<FeasRow> rows;
  double margin = 1e-3;
  int n_classes = 10;
  Eigen::Index feature_dim = 0;
  // Witnesses are sought inside ||(W, b)||_inf <= box_bound. Any fixed box
  // works by homogeneity; 1.0 is the recorded choice.
  double box_bound = 1.0;

  Eigen::Index var_dim() const {
    return static_cast<Eigen::Index>(n_classes) * feature_dim + n_classes;
  }
};

struct Witness {
  Eigen::MatrixXd w;  // K x d
  Eigen::VectorXd b;  // K
};

enum class Verdict { feasible, infeasible };

struct FeasibilityResult {
  Verdict verdict = Verdict::infeasible;
  std::optional<Witness> witness;
  long iterations = 0;
  // Best margin achievable inside the box (+inf for an empty problem).
  double eps_star = 0.0;
};

// Slack comparisons throughout use this absolute tolerance on 64-bit reals.
constexpr double kSlackTol = 1e-9;

namespace detail {

inline std::string row_key(const FeasRow& row) {
  std::string key(sizeof(double) * static_cast<std::size_t>(row.feature.size()) + 8, '\0');
  std::memcpy(key.data(), row.feature.data(),
              sizeof(double) * static_cast<std::size_t>(row.feature.size()));
  std::int32_t wl[2] = {row.winner, row.loser};
  std::memcpy(key.data() + key.size() - 8, wl, 8);
  return key;
}

inline void append_rows(std::vector<FeasRow>& rows, std::unordered_set<std::string>& seen,
                        const Eigen::VectorXd& feature, int winner, int n_classes) {
  for (int loser = 0; loser < n_classes; ++loser) {
    if (loser == winner) continue;
    FeasRow row{feature, winner, loser};
    if (seen.insert(row_key(row)).second) rows.push_back(std::move(row));
  }
}

}  // namespace detail

// Builds the strict-inequality system: (K-1) rows per training point with
// the label as winner, plus (K-1) rows per extra (probe_index, class) pair.
// Rows identical down to the feature bits are deduplicated.
inline FeasibilityProblem build_problem(
    const FeatureMatrix& f, const std::vector<std::pair<int, int>>& extras,
    double margin) {
  if (!(margin > 0.0)) throw ArgumentError("build_problem: margin must be > 0");
  f.validate();
  FeasibilityProblem p;
  p.margin = margin;
  p.n_classes = f.n_classes;
  p.feature_dim = f.d();
  std::unordered_set<std::string> seen;
  for (Eigen::Index i = 0; i < f.n_train(); ++i)
    detail::append_rows(p.rows, seen, f.train_features.row(i).transpose(),
                        f.train_labels[static_cast<std::size_t>(i)], f.n_classes);
  for (const auto& [probe_index, cls] : extras) {
    if (probe_index < 0 || probe_index >= f.n_probe())
      throw ArgumentError("build_problem: probe index out of range");
    if (cls < 0 || cls >= f.n_classes)
      throw ArgumentError("build_problem: extra class out of range");
    detail::append_rows(p.rows, seen, f.probe_features.row(probe_index).transpose(),
                        cls, f.n_classes);
  }
  return p;
}

// One LP constraint row over the stacked variable (W_0..W_{K-1}, b).
inline void fill_constraint_row(
    Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out, const FeasRow& row,
    int n_classes, Eigen::Index d) {
  out.setZero();
  out.segment(static_cast<Eigen::Index>(row.winner) * d, d) = row.feature.transpose();
  out.segment(static_cast<Eigen::Index>(row.loser) * d, d) -= row.feature.transpose();
  out[static_cast<Eigen::Index>(n_classes) * d + row.winner] = 1.0;
  out[static_cast<Eigen::Index>(n_classes) * d + row.loser] = -1.0;
}

inline Eigen::MatrixXd constraint_matrix(const FeasibilityProblem& p) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(p.rows.size()), p.var_dim());
  for (std::size_t r = 0; r < p.rows.size(); ++r)
    fill_constraint_row(a.row(static_cast<Eigen::Index>(r)), p.rows[r], p.n_classes,
                        p.feature_dim);
  return a;
}

inline Witness unpack_witness(const Eigen::VectorXd& x, int n_classes,
                              Eigen::Index d) {
  Witness w;
  w.w.resize(n_classes, d);
  for (int c = 0; c < n_classes; ++c) w.w.row(c) = x.segment(c * d, d).transpose();
  w.b = x.segment(static_cast<Eigen::Index>(n_classes) * d, n_classes);
  return w;
}

// Minimum slack of a candidate witness over every row, by direct
// substitution; the independent check feasible verdicts must pass.
inline double min_slack(const FeasibilityProblem& p, const Witness& wit) {
  double worst = std::numeric_limits<double>::infinity();
  for (const FeasRow& row : p.rows) {
    double slack = (wit.w.row(row.winner) - wit.w.row(row.loser)).dot(row.feature) +
                   wit.b[row.winner] - wit.b[row.loser];
    worst = std::min(worst, slack);
  }
  return worst;
}

// Exact verdict for { row slack >= margin, ||(W,b)||_inf <= box_bound }.
// Solved via the unit-box max-margin LP and scaled by homogeneity: the best
// margin inside box_bound is box_bound * eps*(unit box).
inline FeasibilityResult lp_feasible(const FeasibilityProblem& p) {
  FeasibilityResult res;
  if (p.rows.empty()) {  // vacuously feasible
    res.verdict = Verdict::feasible;
    res.eps_star = std::numeric_limits<double>::infinity();
    res.witness = unpack_witness(Eigen::VectorXd::Zero(p.var_dim()), p.n_classes,
                                 p.feature_dim);
    return res;
  }
  MaxMarginResult lp = solve_max_margin(constraint_matrix(p));
  res.iterations = lp.iterations;
  res.eps_star = p.box_bound * lp.eps_star;
  if (res.eps_star >= p.margin - kSlackTol) {
    res.verdict = Verdict::feasible;
    res.witness = unpack_witness((p.box_bound * lp.x).eval(), p.n_classes, p.feature_dim);
    if (min_slack(p, *res.witness) < p.margin - kSlackTol)
      throw SolverError("lp_feasible: witness failed slack substitution");
  }
  return res;
}

// Maximum feasible margin of the training policy inside the unit box.
inline double max_margin(const FeatureMatrix& f) {
  f.validate();
  if (f.n_train() == 0) throw ArgumentError("max_margin: no training rows");
  FeasibilityProblem p = build_problem(f, {}, 1.0);
  MaxMarginResult lp = solve_max_margin(constraint_matrix(p));
  if (!(lp.eps_star > kSlackTol))
    throw DegeneratePolicyError("max_margin: training policy has no positive margin");
  return lp.eps_star;
}

struct LpStats {
  long long n_lps = 0;
  long long iterations = 0;
  double seconds = 0.0;
};

// ext(x_j): classes c for which the training policy plus p_{x_j, c} stays
// feasible at the given margin.
inline std::set<int> pointwise_extension(const FeatureMatrix& f, int probe_index,
                                         double margin, LpStats* stats = nullptr) {
  std::set<int> classes;
  for (int c = 0; c < f.n_classes; ++c) {
    FeasibilityProblem p = build_problem(f, {{probe_index, c}}, margin);
    auto t0 = std::chrono::steady_clock::now();
    FeasibilityResult r = lp_feasible(p);
    if (stats) {
      stats->n_lps++;
      stats->iterations += r.iterations;
      stats->seconds += std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    }
    if (r.verdict == Verdict::feasible) classes.insert(c);
  }
  return classes;
}

struct PairProxyResult {
  long long total = 0;
  std::vector<std::set<int>> per_probe;
  LpStats lp;
};

namespace detail {

// Constraint rows of one probe/class pair, deduplicated against the training
// block.
inline Eigen::MatrixXd probe_rows(const std::unordered_set<std::string>& base_keys,
                                  const Eigen::VectorXd& phi, int winner,
                                  int n_classes, Eigen::Index d) {
  std::vector<FeasRow> rows;
  for (int loser = 0; loser < n_classes; ++loser) {
    if (loser == winner) continue;
    FeasRow row{phi, winner, loser};
    if (!base_keys.count(row_key(row))) rows.push_back(std::move(row));
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(n_classes) * d + n_classes);
  for (std::size_t r = 0; r < rows.size(); ++r)
    fill_constraint_row(a.row(static_cast<Eigen::Index>(r)), rows[r], n_classes, d);
  return a;
}

// Runs every (probe, class) LP warm from the training system's optimal
// basis. After the base solve, exit_of maps the training policy's max margin
// to verdict-driven stopping bounds for the probe LPs; each LP's certified
// margin goes to the verdict callback. Returns the base margin.
template <typename ExitOf, typename Verdict>
inline double for_each_probe_class(const FeatureMatrix& f, LpStats* stats,
                                   ExitOf&& exit_of, Verdict&& verdict) {
  FeasibilityProblem base = build_problem(f, {}, 1.0);
  std::unordered_set<std::string> base_keys;
  for (const FeasRow& row : base.rows) base_keys.insert(row_key(row));

  auto t0 = std::chrono::steady_clock::now();
  WarmMarginSolver warm(constraint_matrix(base));
  if (stats) {
    stats->n_lps++;
    stats->iterations += warm.base().iterations;
  }
  EarlyExit early = exit_of(warm.base().eps_star);
  for (int j = 0; j < f.n_probe(); ++j) {
    Eigen::VectorXd phi = f.probe_features.row(j).transpose();
    for (int c = 0; c < f.n_classes; ++c) {
      Eigen::MatrixXd extra = probe_rows(base_keys, phi, c, f.n_classes, f.d());
      MaxMarginResult r = warm.solve_with_extra(extra, &early);
      if (stats) {
        stats->n_lps++;
        stats->iterations += r.iterations;
      }
      verdict(j, c, r.eps_star);
    }
  }
  if (stats)
    stats->seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return warm.base().eps_star;
}

}  // namespace detail

// Pair proxy PP = sum_j |ext(x_j)| over all probe inputs. Each margin
// reported by the solver is the witness-certified minimum slack, so feasible
// verdicts carry their own proof.
inline PairProxyResult pair_proxy(const FeatureMatrix& f, double margin,
                                  double box_bound = 1.0) {
  if (!(margin > 0.0)) throw ArgumentError("pair_proxy: margin must be > 0");
  f.validate();
  PairProxyResult out;
  out.per_probe.resize(static_cast<std::size_t>(f.n_probe()));
  if (f.n_train() == 0) {  // vacuous training block: everything extends
    for (auto& s : out.per_probe)
      for (int c = 0; c < f.n_classes; ++c) s.insert(c);
    out.total = static_cast<long long>(f.n_probe()) * f.n_classes;
    return out;
  }
  const double threshold = (margin - kSlackTol) / box_bound;
  detail::for_each_probe_class(
      f, &out.lp,
      [&](double) { return EarlyExit{threshold, threshold}; },
      [&](int j, int c, double eps_star) {
        if (eps_star >= threshold)
          out.per_probe[static_cast<std::size_t>(j)].insert(c);
      });
  for (const auto& s : out.per_probe) out.total += static_cast<long long>(s.size());
  return out;
}

// Adaptive-margin variant: finds the training policy's maximum feasible
// margin and judges every probe/class pair at half of it. Returns the margin
// used alongside the counts.
inline std::pair<PairProxyResult, double> pair_proxy_adaptive(
    const FeatureMatrix& f, double box_bound = 1.0) {
  f.validate();
  if (f.n_train() == 0)
    throw ArgumentError("pair_proxy_adaptive: no training rows");
  PairProxyResult out;
  out.per_probe.resize(static_cast<std::size_t>(f.n_probe()));
  double threshold = 0.0;
  double eps_base = detail::for_each_probe_class(
      f, &out.lp,
      [&](double base_eps) {
        if (!(base_eps > kSlackTol))
          throw DegeneratePolicyError(
              "pair_proxy_adaptive: no positive training margin");
        threshold = base_eps / 2.0 - kSlackTol / box_bound;
        return EarlyExit{threshold, threshold};
      },
      [&](int j, int c, double eps_star) {
        if (eps_star >= threshold)
          out.per_probe[static_cast<std::size_t>(j)].insert(c);
      });
  double margin = box_bound * eps_base / 2.0;
  for (const auto& s : out.per_probe) out.total += static_cast<long long>(s.size());
  return {std::move(out), margin};
}

// Per-probe extension sets under strict feasibility (some margin > 0 exists,
// box-free by homogeneity): the semantics preserved exactly by invertible
// affine reparameterisation of the feature space.
inline std::vector<std::set<int>> extension_sets_strict(const FeatureMatrix& f) {
  f.validate();
  std::vector<std::set<int>> sets(static_cast<std::size_t>(f.n_probe()));
  if (f.n_train() == 0) {
    for (auto& s : sets)
      for (int c = 0; c < f.n_classes; ++c) s.insert(c);
    return sets;
  }
  detail::for_each_probe_class(
      f, nullptr,
      // Decisive certificates either way; the ambiguous band between the
      // bounds runs to optimality.
      [](double) { return EarlyExit{10 * kSlackTol, 0.5 * kSlackTol}; },
      [&](int j, int c, double eps_star) {
        if (eps_star > kSlackTol) sets[static_cast<std::size_t>(j)].insert(c);
      });
  return sets;
}

// Theorem-level invariance check: recomputes the per-probe extension sets
// with features phi' = A phi. The witness bijection (W, b) -> (W A^{-1}, b)
// preserves every slack exactly, so the strict-feasibility extension sets
// must match for any well-conditioned invertible A.
inline bool affine_invariance_check(const FeatureMatrix& f, const Eigen::MatrixXd& a) {
  if (a.rows() != f.d() || a.cols() != f.d())
    throw ArgumentError("affine_invariance_check: A must be d x d");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  double smin = svd.singularValues().minCoeff();
  double smax = svd.singularValues().maxCoeff();
  if (!(smin > 0.0) || smax / smin >= 1e8)
    throw ArgumentError("affine_invariance_check: A is singular or ill-conditioned");

  FeatureMatrix g = f;
  g.train_features = f.train_features * a.transpose();
  g.probe_features = f.probe_features * a.transpose();
  return extension_sets_strict(f) == extension_sets_strict(g);
}

}  // namespace weaknesslab
