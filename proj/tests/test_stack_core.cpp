#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "weaknesslab/stack_core.hpp"

using namespace weaknesslab;

namespace {

Program program_of(std::size_t universe, std::initializer_list<std::size_t> states) {
  BitVec b(universe);
  for (std::size_t s : states) b.set(s);
  return Program{b};
}

// Number of regions a region-class statement pins to a class.
std::size_t regions_fixed(const Statement& s, unsigned k_classes) {
  std::set<unsigned> regions;
  for (std::uint32_t idx : s.program_indices)
    regions.insert(region_of_program(idx, k_classes));
  return regions.size();
}

}  // namespace

TEST_CASE("truth set of the empty statement is the full universe") {
  Vocabulary v(StateUniverse(3), {program_of(3, {0, 1}), program_of(3, {1, 2})});
  BitVec t = truth_set(Statement{}, v);
  REQUIRE(t.count() == 3);
}

TEST_CASE("truth set intersects member programs") {
  Vocabulary v(StateUniverse(3), {program_of(3, {0, 1}), program_of(3, {1, 2})});
  BitVec t = truth_set(Statement::of({0, 1}), v);
  REQUIRE(t.count() == 1);
  REQUIRE(t.test(1));
}

TEST_CASE("same-region programs of a region-class vocabulary are exclusive") {
  Vocabulary v = region_class_vocab(2, 2);
  // p_{r0,c0} and p_{r0,c1}
  BitVec t = truth_set(Statement::of({0, 1}), v);
  REQUIRE(t.none());
  REQUIRE_FALSE(is_statement(Statement::of({0, 1}), v));
}

TEST_CASE("statement index out of range is an argument error") {
  Vocabulary v(StateUniverse(2), {program_of(2, {0})});
  REQUIRE_THROWS_AS(truth_set(Statement::of({5}), v), ArgumentError);
}

TEST_CASE("is_statement accepts consistent sets") {
  Vocabulary v(StateUniverse(2), {program_of(2, {0})});
  REQUIRE(is_statement(Statement::of({0}), v));
}

TEST_CASE("partial-function encodings are consistent statements") {
  // In a region-class vocabulary, any set assigning each region at most one
  // class must have a nonempty truth set; verified exhaustively.
  Vocabulary v = region_class_vocab(3, 2);
  Language lang = enumerate_language(v);
  for (const Statement& s : lang.statements()) {
    REQUIRE(is_statement(s, v));
    std::map<unsigned, std::set<std::uint32_t>> by_region;
    for (std::uint32_t idx : s.program_indices)
      by_region[region_of_program(idx, 2)].insert(idx);
    for (const auto& [r, programs] : by_region) REQUIRE(programs.size() == 1);
  }
}

TEST_CASE("region-class language sizes match (K+1)^R") {
  REQUIRE(enumerate_language(region_class_vocab(1, 10)).size() == 11);
  REQUIRE(enumerate_language(region_class_vocab(2, 10)).size() == 121);
  REQUIRE(enumerate_language(region_class_vocab(2, 3)).size() == 16);
  for (unsigned r = 1; r <= 4; ++r)
    for (unsigned k = 2; k <= 3; ++k) {
      std::size_t expect = 1;
      for (unsigned i = 0; i < r; ++i) expect *= (k + 1);
      REQUIRE(enumerate_language(region_class_vocab(r, k)).size() == expect);
    }
}

TEST_CASE("vocabulary of one empty program induces only the empty statement") {
  Vocabulary v(StateUniverse(2), {program_of(2, {})});
  Language lang = enumerate_language(v);
  REQUIRE(lang.size() == 1);
  REQUIRE(lang.statements()[0].empty());
}

TEST_CASE("enumeration guard trips on oversized vocabularies") {
  std::vector<Program> programs;
  for (std::size_t i = 0; i < 33; ++i) {
    BitVec b(40);
    b.set(i);
    b.set(39);  // shared state keeps everything consistent
    programs.push_back(Program{b});
  }
  Vocabulary v(StateUniverse(40), std::move(programs));
  REQUIRE_THROWS_AS(enumerate_language(v), CapacityError);
}

TEST_CASE("weakness of the empty statement is the language size") {
  Vocabulary v = region_class_vocab(2, 3);
  Language lang = enumerate_language(v);
  REQUIRE(weakness(Statement{}, lang) == lang.size());
}

TEST_CASE("weakness of a one-region statement in R=3 K=10 is 121") {
  // |v| = 30 here; the pruned enumeration stays output-sensitive.
  Vocabulary v = region_class_vocab(3, 10);
  Language lang = enumerate_language(v);
  REQUIRE(lang.size() == 11 * 11 * 11);
  Statement fix_one = Statement::of({0});  // region 0 -> class 0
  REQUIRE(weakness(fix_one, lang) == 121);
}

TEST_CASE("weakness of a maximal statement is 1") {
  Vocabulary v = region_class_vocab(3, 3);
  Language lang = enumerate_language(v);
  Statement maximal = Statement::of({0, 3, 6});  // every region fixed to class 0
  REQUIRE(weakness(maximal, lang) == 1);
}

TEST_CASE("extension requires membership in the language") {
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  REQUIRE_THROWS_AS(extension(Statement::of({0, 1}), lang), ArgumentError);
}

TEST_CASE("weakness pattern (K+1)^(R-j) for statements fixing j regions") {
  for (unsigned r = 1; r <= 4; ++r)
    for (unsigned k = 2; k <= 3; ++k) {
      Vocabulary v = region_class_vocab(r, k);
      Language lang = enumerate_language(v);
      for (const Statement& s : lang.statements()) {
        std::size_t j = regions_fixed(s, k);
        std::size_t expect = 1;
        for (unsigned i = 0; i < r - j; ++i) expect *= (k + 1);
        REQUIRE(weakness(s, lang) == expect);
      }
    }
}

TEST_CASE("weakness is monotone under statement inclusion") {
  // |v| = 8 <= 12: all pairs checked.
  Vocabulary v = region_class_vocab(2, 4);
  Language lang = enumerate_language(v);
  std::vector<std::size_t> w(lang.size());
  for (std::size_t i = 0; i < lang.size(); ++i)
    w[i] = weakness(lang.statements()[i], lang);
  for (std::size_t i = 0; i < lang.size(); ++i)
    for (std::size_t j = 0; j < lang.size(); ++j)
      if (lang.statements()[i].subset_of(lang.statements()[j]))
        REQUIRE(w[i] >= w[j]);
}

TEST_CASE("task with O = Ext(I) admits the empty policy") {
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  std::vector<Statement> inputs = {Statement::of({0})};
  std::vector<Statement> outputs = extension(Statement::of({0}), lang);
  Task t = make_task(inputs, outputs, lang);
  std::vector<Statement> policies = correct_policies(t, lang);
  bool has_empty = false;
  for (const Statement& p : policies)
    if (p.empty()) has_empty = true;
  REQUIRE(has_empty);
}

TEST_CASE("training-label policy is correct for a tiny region-class task") {
  // Two regions, region 0 "labelled" with class 1; inputs say nothing more.
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  Statement train_label = Statement::of({1});  // region 0 -> class 1
  std::vector<Statement> inputs = {train_label};
  std::vector<Statement> outputs = extension(train_label, lang);
  Task t = make_task(inputs, outputs, lang);
  std::vector<Statement> policies = correct_policies(t, lang);
  REQUIRE(std::find(policies.begin(), policies.end(), train_label) != policies.end());
  // Exhaustive cross-check of the correctness identity.
  for (const Statement& pi : lang.statements()) {
    std::set<Statement> ext_i(outputs.begin(), outputs.end());
    std::set<Statement> inter;
    for (const Statement& y : lang.statements())
      if (train_label.subset_of(y) && pi.subset_of(y)) inter.insert(y);
    bool correct = inter == ext_i;
    bool reported =
        std::find(policies.begin(), policies.end(), pi) != policies.end();
    REQUIRE(correct == reported);
  }
}

TEST_CASE("task with empty outputs selects policies avoiding Ext(I)") {
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  Statement input = Statement::of({0});
  Task t = make_task({input}, {}, lang);
  std::vector<Statement> policies = correct_policies(t, lang);
  for (const Statement& pi : policies)
    for (const Statement& y : lang.statements())
      if (input.subset_of(y)) REQUIRE_FALSE(pi.subset_of(y));
  // Brute-force count agrees.
  std::size_t expect = 0;
  for (const Statement& pi : lang.statements()) {
    bool avoids = true;
    for (const Statement& y : lang.statements())
      if (input.subset_of(y) && pi.subset_of(y)) avoids = false;
    if (avoids) ++expect;
  }
  REQUIRE(policies.size() == expect);
}

TEST_CASE("make_task rejects outputs outside Ext(inputs)") {
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  // region 1 -> class 0 does not extend "region 0 -> class 0".
  REQUIRE_THROWS_AS(
      make_task({Statement::of({0})}, {Statement::of({2})}, lang), ArgumentError);
  REQUIRE_THROWS_AS(make_task({}, {}, lang), ArgumentError);
}

TEST_CASE("survival probability closed form") {
  REQUIRE(survival_probability(2, 4) == 0.25);
  REQUIRE(survival_probability(7, 7) == 1.0);
  REQUIRE_THROWS_AS(survival_probability(5, 4), ArgumentError);
}

TEST_CASE("survival closed form equals exhaustive enumeration") {
  for (unsigned u = 0; u <= 12; ++u) {
    for (unsigned b = 0; b <= u; ++b) {
      std::size_t hits = 0;
      for (std::uint64_t mask = 0; mask < (1ull << u); ++mask) {
        // B = first b elements; S survives iff it avoids the rest.
        bool inside = (mask >> b) == 0;
        if (inside) ++hits;
      }
      double exact = static_cast<double>(hits) / static_cast<double>(1ull << u);
      REQUIRE(exact == survival_probability(b, u));
    }
  }
}

TEST_CASE("survival Monte Carlo is close and ordered") {
  std::vector<std::uint64_t> unseen;
  for (std::uint64_t i = 0; i < 10; ++i) unseen.push_back(100 + i);
  std::vector<std::uint64_t> b3(unseen.begin(), unseen.begin() + 3);
  std::vector<std::uint64_t> b5(unseen.begin(), unseen.begin() + 5);
  std::size_t n = 100000;
  double e3 = survival_mc(b3, unseen, n, 41);
  double e5 = survival_mc(b5, unseen, n, 42);
  auto sigma = [&](double p) { return std::sqrt(p * (1 - p) / double(n)); };
  double p3 = survival_probability(3, 10), p5 = survival_probability(5, 10);
  REQUIRE(std::fabs(e3 - p3) < 3 * sigma(p3));
  REQUIRE(std::fabs(e5 - p5) < 3 * sigma(p5));
  REQUIRE(e5 > e3);
}

TEST_CASE("survival_mc validates the buffer") {
  std::vector<std::uint64_t> unseen = {1, 2, 3};
  std::vector<std::uint64_t> bad = {9};
  REQUIRE_THROWS_AS(survival_mc(bad, unseen, 10, 0), ArgumentError);
}

TEST_CASE("kl_uniform identity and monotonicity") {
  REQUIRE(std::fabs(kl_uniform(121, 11) - std::log(11.0)) < 1e-12);
  REQUIRE(kl_uniform(42, 42) == 0.0);
  REQUIRE_THROWS_AS(kl_uniform(10, 0), ArgumentError);
  REQUIRE_THROWS_AS(kl_uniform(10, 11), ArgumentError);
  double prev = kl_uniform(1000, 1);
  for (double b = 2; b <= 1000; b += 7) {
    double k = kl_uniform(1000, b);
    REQUIRE(k < prev);
    prev = k;
  }
  for (double l : {5.0, 121.0, 3000.0})
    for (double b = 1; b <= l; b += 3)
      REQUIRE(std::fabs(kl_uniform(l, b) + std::log(b) - std::log(l)) < 1e-12);
}

TEST_CASE("region_class_vocab shapes") {
  Vocabulary v1 = region_class_vocab(1, 2);
  REQUIRE(v1.universe().size == 2);
  REQUIRE(v1.size() == 2);
  for (const Program& p : v1.programs()) REQUIRE(p.members.count() == 1);

  Vocabulary v2 = region_class_vocab(2, 10);
  REQUIRE(v2.universe().size == 100);
  REQUIRE(v2.size() == 20);

  REQUIRE_THROWS_AS(region_class_vocab(30, 10), CapacityError);
}

TEST_CASE("buffer size determines weakness ranking among correct policies") {
  // Counting-measure analogue: for correct policies of one task,
  // w(pi) = |O| + |Ext(pi) cap U| with U = L \ Ext(I), so weakness ranking
  // equals buffer-size ranking.
  Vocabulary v = region_class_vocab(2, 2);
  Language lang = enumerate_language(v);
  Statement input = Statement::of({1});
  std::vector<Statement> outputs = extension(input, lang);
  Task t = make_task({input}, outputs, lang);
  std::vector<Statement> policies = correct_policies(t, lang);
  REQUIRE(policies.size() >= 2);

  std::vector<char> ext_inputs(lang.size(), 0);
  for (std::size_t i = 0; i < lang.size(); ++i)
    if (input.subset_of(lang.statements()[i])) ext_inputs[i] = 1;

  std::vector<std::pair<std::size_t, std::size_t>> wb;  // (weakness, buffer)
  for (const Statement& pi : policies) {
    std::size_t w = weakness(pi, lang);
    std::size_t buffer = 0;
    for (std::size_t i = 0; i < lang.size(); ++i)
      if (!ext_inputs[i] && pi.subset_of(lang.statements()[i])) ++buffer;
    wb.emplace_back(w, buffer);
    REQUIRE(w == t.outputs.size() + buffer);
  }
  for (const auto& [w1, b1] : wb)
    for (const auto& [w2, b2] : wb) {
      if (b1 > b2) REQUIRE(w1 > w2);
      if (b1 == b2) REQUIRE(w1 == w2);
    }
}

TEST_CASE("vocabulary rejects duplicates and width mismatches") {
  REQUIRE_THROWS_AS(
      Vocabulary(StateUniverse(2), {program_of(2, {0}), program_of(2, {0})}),
      ArgumentError);
  REQUIRE_THROWS_AS(Vocabulary(StateUniverse(2), {program_of(3, {0})}),
                    ArgumentError);
  REQUIRE_THROWS_AS(StateUniverse(0), ArgumentError);
}
