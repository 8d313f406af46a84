#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "weaknesslab/regions.hpp"
#include "weaknesslab/stack_core.hpp"

using namespace weaknesslab;

namespace {

MlpParams random_params(const MlpDims& dims, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return init_params(dims, rng);
}

}  // namespace

TEST_CASE("dead layer yields a single all-zero pattern") {
  MlpDims dims{3, 4, 2, 3};
  MlpParams p = MlpParams::zeros(dims);
  p.b1.setConstant(-1.0);  // layer 1 never fires
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(9, 3);
  auto pats = activation_patterns(p, x, 1);
  REQUIRE(pats.size() == 1);
  REQUIRE(pats.begin()->count() == 0);
}

TEST_CASE("a single boundary unit splits inputs into two patterns") {
  MlpDims dims{1, 1, 1, 2};
  MlpParams p = MlpParams::zeros(dims);
  p.w1(0, 0) = 1.0;  // boundary at x = 0
  Eigen::MatrixXd x(2, 1);
  x << -1.0, 1.0;
  REQUIRE(pattern_count(p, x, 1) == 2);
}

TEST_CASE("zero pre-activation counts as inactive") {
  MlpDims dims{1, 1, 1, 2};
  MlpParams p = MlpParams::zeros(dims);
  p.w1(0, 0) = 1.0;
  Eigen::MatrixXd x(2, 1);
  x << 0.0, -1.0;  // both rows: pre1 <= 0
  REQUIRE(pattern_count(p, x, 1) == 1);
}

TEST_CASE("region table totals match the input sizes") {
  MlpDims dims{5, 8, 6, 10};
  MlpParams p = random_params(dims, 15);
  Eigen::MatrixXd train = Eigen::MatrixXd::Random(40, 5);
  Eigen::MatrixXd unseen = Eigen::MatrixXd::Random(23, 5);
  RegionTable t = region_table(p, train, unseen);
  std::size_t n_train = 0, n_unseen = 0;
  for (const auto& [pat, counts] : t) {
    n_train += counts.n_train;
    n_unseen += counts.n_unseen;
  }
  REQUIRE(n_train == 40);
  REQUIRE(n_unseen == 23);
}

TEST_CASE("k_free is zero when unseen equals train") {
  MlpDims dims{4, 6, 5, 10};
  MlpParams p = random_params(dims, 3);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(25, 4);
  RegionTable t = region_table(p, x, x);
  REQUIRE(k_free(t) == 0);
}

TEST_CASE("hand-built net with fresh unseen regions") {
  // Identity-ish first layer, second layer passes the sign structure
  // through; train and unseen points sit in different orthants.
  MlpDims dims{2, 2, 2, 2};
  MlpParams p = MlpParams::zeros(dims);
  p.w1 << 1, 0, 0, 1;
  p.w2 << 1, 0, 0, 1;
  Eigen::MatrixXd train(2, 2);
  train << 1, 1, -1, -1;  // patterns {11, 00}
  Eigen::MatrixXd unseen(2, 2);
  unseen << 1, -1, -1, 1;  // patterns {10, 01}, both fresh
  RegionTable t = region_table(p, train, unseen);
  REQUIRE(t.size() == 4);
  REQUIRE(k_free(t) == 2);

  // Caption-literal free parameters: every region contributes
  // max(0, D2*10 + 10 - n_train) = 30 - n_train with D2 = 2.
  REQUIRE(free_parameters(t, 2) == (30 - 1) + (30 - 1) + 30 + 30);
  REQUIRE(free_parameters_train_only(t, 2) == 29 + 29);
}

TEST_CASE("free parameter clamp and empty table") {
  RegionTable t;
  REQUIRE(free_parameters(t, 16) == 0);
  BitVec r1(4);
  r1.set(0);
  t[r1] = RegionCounts{3, 0};
  REQUIRE(free_parameters(t, 16) == 16 * 10 + 10 - 3);  // 167
  BitVec r2(4);
  r2.set(1);
  t[r2] = RegionCounts{500, 1};  // over budget: clamps to zero
  REQUIRE(free_parameters(t, 16) == 167);
}

TEST_CASE("region weakness log values") {
  REQUIRE(region_weakness_log(0) == 0.0);
  REQUIRE(std::fabs(region_weakness_log(3) - 3 * std::log(11.0)) < 1e-12);
  REQUIRE(std::fabs(std::exp(region_weakness_log(3)) - 1331.0) < 1e-9);
  // Strictly increasing in k.
  for (std::size_t k = 1; k < 30; ++k)
    REQUIRE(region_weakness_log(k) > region_weakness_log(k - 1));
}

TEST_CASE("region weakness log matches exhaustive stack-core weakness") {
  // The training-label policy in a region-class vocabulary with j regions
  // fixed has weakness (K+1)^(R-j); k_free = R - j plays the free-region
  // role. Cross-checked against full enumeration for R <= 4, K <= 3.
  for (unsigned r = 1; r <= 4; ++r)
    for (unsigned k = 2; k <= 3; ++k) {
      Vocabulary v = region_class_vocab(r, k);
      Language lang = enumerate_language(v);
      for (unsigned j = 0; j <= r; ++j) {
        std::vector<std::uint32_t> idx;
        for (unsigned fixed = 0; fixed < j; ++fixed)
          idx.push_back(fixed * k);  // region `fixed` -> class 0
        std::size_t w = weakness(Statement::of(idx), lang);
        double log_w = region_weakness_log(r - j, static_cast<int>(k));
        REQUIRE(std::fabs(std::log(static_cast<double>(w)) - log_w) < 1e-12);
      }
    }
}

TEST_CASE("pattern width guard") {
  MlpDims dims{4, 300, 4, 10};
  MlpParams p = MlpParams::zeros(dims);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 4);
  REQUIRE_THROWS_AS(activation_patterns(p, x, 1), CapacityError);
}

TEST_CASE("ensemble agreement extremes") {
  MlpDims dims{3, 4, 4, 3};
  MlpParams subject = random_params(dims, 100);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(30, 3);
  std::vector<int> wrong_everywhere(30, 0);
  std::vector<int> y = predict_batch(subject, x);
  // Labels chosen so the subject errs on every point.
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) labels[i] = (y[static_cast<std::size_t>(i)] + 1) % 3;

  // Peers identical to the subject repeat every error.
  auto ea_same = ensemble_agreement(subject, {subject, subject}, x, labels);
  REQUIRE(ea_same.has_value());
  REQUIRE(*ea_same == 0.0);

  // A perfect peer fixes every error; emulate one via label lookup.
  std::vector<std::vector<int>> peer_preds = {labels};
  auto ea_perfect = ensemble_agreement_from_preds(y, peer_preds, labels);
  REQUIRE(ea_perfect.has_value());
  REQUIRE(*ea_perfect == 1.0);

  // No unseen errors: distinguished marker.
  auto ea_none = ensemble_agreement(subject, {subject}, x, y);
  REQUIRE_FALSE(ea_none.has_value());

  REQUIRE_THROWS_AS(ensemble_agreement(subject, {}, x, labels), ArgumentError);
}
