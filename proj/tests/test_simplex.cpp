#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "weaknesslab/rng.hpp"
#include "weaknesslab/simplex.hpp"

using namespace weaknesslab;

namespace {

// Brute-force lower bound on the box max-margin: best min-slack over random
// box points plus all box vertices (exact when the optimum sits on a vertex).
double search_margin(const Eigen::MatrixXd& a, int n_random, std::uint64_t seed) {
  Eigen::Index n = a.cols();
  double best = -1e300;
  SplitMix64 rng(seed);
  auto eval = [&](const Eigen::VectorXd& x) {
    best = std::max(best, (a * x).minCoeff());
  };
  if (n <= 16) {
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
      Eigen::VectorXd x(n);
      for (Eigen::Index i = 0; i < n; ++i) x[i] = (mask >> i) & 1 ? 1.0 : -1.0;
      eval(x);
    }
  }
  for (int k = 0; k < n_random; ++k) {
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.next_uniform(-1.0, 1.0);
    eval(x);
  }
  return best;
}

}  // namespace

TEST_CASE("single row: optimum is the l1 norm, attained at a vertex") {
  Eigen::MatrixXd a(1, 4);
  a << 1.0, -1.0, 1.0, -1.0;
  MaxMarginResult r = solve_max_margin(a);
  REQUIRE(std::fabs(r.eps_star - 4.0) < 1e-9);
  REQUIRE((a * r.x).minCoeff() >= 4.0 - 1e-9);
  REQUIRE(r.x.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  REQUIRE(search_margin(a, 0, 0) == 4.0);
}

TEST_CASE("contradictory rows cap the margin at zero") {
  Eigen::MatrixXd a(2, 3);
  a << 1.0, 2.0, -1.0, -1.0, -2.0, 1.0;
  MaxMarginResult r = solve_max_margin(a);
  REQUIRE(std::fabs(r.eps_star) < 1e-9);
}

TEST_CASE("two symmetric rows meet in the middle") {
  // max min(x0 + x1, x0 - x1) over the box: optimum x = (1, 0), eps = 1.
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 1.0, 1.0, -1.0;
  MaxMarginResult r = solve_max_margin(a);
  REQUIRE(std::fabs(r.eps_star - 1.0) < 1e-9);
  REQUIRE(std::fabs(r.x[0] - 1.0) < 1e-9);
  REQUIRE(std::fabs(r.x[1]) < 1e-9);
}

TEST_CASE("weighted rows move the balance point") {
  // max min(2 x0, x0 + 3 x1): x = (1, 1) gives min(2, 4) = 2.
  Eigen::MatrixXd a(2, 2);
  a << 2.0, 0.0, 1.0, 3.0;
  MaxMarginResult r = solve_max_margin(a);
  REQUIRE(std::fabs(r.eps_star - 2.0) < 1e-9);
}

TEST_CASE("matches brute-force search on random instances") {
  SplitMix64 rng(404);
  for (int trial = 0; trial < 60; ++trial) {
    int m = 1 + static_cast<int>(rng.next_below(12));
    int n = 2 + static_cast<int>(rng.next_below(5));
    Eigen::MatrixXd a(m, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.next_normal();
    MaxMarginResult r = solve_max_margin(a);
    // Witness is feasible at its claimed margin.
    REQUIRE((a * r.x).minCoeff() >= r.eps_star - 1e-9);
    REQUIRE(r.x.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    // No searched point beats the LP optimum.
    double searched = search_margin(a, 2000, 1000 + trial);
    REQUIRE(searched <= r.eps_star + 1e-7);
    // Tableau objective and certified value agree.
    REQUIRE(std::fabs(r.eps_star - r.eps_tableau) < 1e-7 * std::max(1.0, r.eps_tableau));
  }
}

TEST_CASE("solver is deterministic") {
  SplitMix64 rng(7);
  Eigen::MatrixXd a(20, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.next_normal();
  MaxMarginResult r1 = solve_max_margin(a);
  MaxMarginResult r2 = solve_max_margin(a);
  REQUIRE(r1.eps_star == r2.eps_star);
  REQUIRE(r1.x == r2.x);
  REQUIRE(r1.iterations == r2.iterations);
}

TEST_CASE("iteration cap raises a solver error distinct from infeasibility") {
  SplitMix64 rng(9);
  Eigen::MatrixXd a(30, 8);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.next_normal();
  REQUIRE_THROWS_AS(solve_max_margin(a, 1), SolverError);
}

TEST_CASE("input validation") {
  REQUIRE_THROWS_AS(solve_max_margin(Eigen::MatrixXd(0, 3)), ArgumentError);
  Eigen::MatrixXd bad(1, 2);
  bad << std::numeric_limits<double>::quiet_NaN(), 1.0;
  REQUIRE_THROWS_AS(solve_max_margin(bad), NumericError);
}
