#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "weaknesslab/errors.hpp"
#include "weaknesslab/rng.hpp"

namespace weaknesslab {

namespace detail {

// Continued-fraction evaluation of the regularized incomplete beta function
// I_x(a, b) (modified Lentz). Absolute error is well below 1e-10 over the
// (a, b, x) ranges used by the t-distribution tails here.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                 a * std::log(x) + b * std::log1p(-x);
  double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided p-value of a Student-t statistic with df degrees of freedom,
// via p = I_{df/(df+t^2)}(df/2, 1/2).
inline double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return detail::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

// Average ranks (1-based); ties get the mean of their rank run.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

enum class PValueMethod { t_approx, permutation };

struct CorrelationResult {
  double rho = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  int n = 0;
  PValueMethod method = PValueMethod::t_approx;
  // False when the correlation is undefined (a constant input vector).
  bool defined = false;
};

namespace detail {

inline double pearson_on(std::span<const double> xs, std::span<const double> ys,
                         bool* defined) {
  std::size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    *defined = false;
    return std::numeric_limits<double>::quiet_NaN();
  }
  *defined = true;
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

inline double spearman_rho(std::span<const double> xs, std::span<const double> ys,
                           bool* defined) {
  std::vector<double> rx = average_ranks(xs);
  std::vector<double> ry = average_ranks(ys);
  return pearson_on(rx, ry, defined);
}

}  // namespace detail

// Spearman rank correlation with average ranks for ties. The t-approximation
// p-value uses t = rho * sqrt((n-2)/(1-rho^2)), two-sided; the permutation
// method shuffles ys with the given seed and reports the add-one estimator.
inline CorrelationResult spearman(std::span<const double> xs,
                                  std::span<const double> ys,
                                  PValueMethod method = PValueMethod::t_approx,
                                  std::uint64_t seed = 0,
                                  std::size_t n_permutations = 10000) {
  if (xs.size() != ys.size()) throw ArgumentError("spearman: length mismatch");
  if (xs.size() < 3) throw ArgumentError("spearman: need at least 3 pairs");
  CorrelationResult res;
  res.n = static_cast<int>(xs.size());
  res.method = method;
  bool defined = false;
  double rho = detail::spearman_rho(xs, ys, &defined);
  if (!defined) return res;
  res.defined = true;
  res.rho = rho;
  if (method == PValueMethod::t_approx) {
    double df = static_cast<double>(res.n - 2);
    if (std::fabs(rho) >= 1.0 - 1e-15) {
      res.p_value = 0.0;
    } else {
      double t = rho * std::sqrt(df / (1.0 - rho * rho));
      res.p_value = student_t_two_sided_p(t, df);
    }
  } else {
    SplitMix64 rng(seed);
    std::vector<double> perm(ys.begin(), ys.end());
    std::size_t hits = 0;
    double target = std::fabs(rho) - 1e-12;
    for (std::size_t p = 0; p < n_permutations; ++p) {
      for (std::size_t i = perm.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(perm[i], perm[j]);
      }
      bool d2 = false;
      double r2 = detail::spearman_rho(xs, perm, &d2);
      if (d2 && std::fabs(r2) >= target) ++hits;
    }
    res.p_value = static_cast<double>(hits + 1) /
                  static_cast<double>(n_permutations + 1);
  }
  return res;
}

struct WelchResult {
  double t = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  double df = std::numeric_limits<double>::quiet_NaN();
  // False when both samples have zero variance (statistic undefined).
  bool defined = false;
};

// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
// freedom, two-sided.
inline WelchResult welch(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2)
    throw ArgumentError("welch: both samples need >= 2 values");
  auto mean_var = [](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= static_cast<double>(v.size() - 1);
    return std::pair<double, double>(m, s2);
  };
  auto [m1, v1] = mean_var(xs);
  auto [m2, v2] = mean_var(ys);
  WelchResult res;
  double n1 = static_cast<double>(xs.size());
  double n2 = static_cast<double>(ys.size());
  double se2 = v1 / n1 + v2 / n2;
  if (se2 == 0.0) return res;  // degenerate variances
  res.defined = true;
  res.t = (m1 - m2) / std::sqrt(se2);
  res.df = se2 * se2 /
           (v1 * v1 / (n1 * n1 * (n1 - 1.0)) + v2 * v2 / (n2 * n2 * (n2 - 1.0)));
  res.p = student_t_two_sided_p(res.t, res.df);
  return res;
}

}  // namespace weaknesslab
