#include "ruleforge/dnf.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ruleforge/episode.hpp"
#include "ruleforge/rng.hpp"

using namespace ruleforge;

namespace {

// Independent clause-by-clause evaluator used as the enumeration oracle:
// counts matched literals instead of short-circuiting.
bool oracle_eval(const DnfRule& rule, const std::vector<std::uint8_t>& assignment) {
  for (const Clause& clause : rule.clauses()) {
    std::size_t matched = 0;
    for (const Literal& lit : clause.literals()) {
      const bool value = assignment[static_cast<std::size_t>(lit.variable)] != 0;
      if (value != lit.negated) ++matched;
    }
    if (matched == clause.literals().size()) return true;
  }
  return false;
}

DnfRule random_rule(Rng& rng, int n, int k_max, int l_max) {
  return sample_rule(rng, n, k_max, l_max);
}

}  // namespace

TEST_CASE("eval_boolean basics") {
  DnfRule empty;
  CHECK_FALSE(eval_boolean(empty, {1, 0, 1}));

  DnfRule rule = DnfRule::from_literal_lists({{{0, false}, {1, true}}});
  CHECK(eval_boolean(rule, {1, 0}));
  CHECK_FALSE(eval_boolean(rule, {1, 1}));

  CHECK_THROWS_AS(eval_boolean(rule, {1}), std::out_of_range);

  // Empty clause is satisfied by anything.
  DnfRule tautology(std::vector<Clause>{Clause(std::vector<Literal>{})});
  CHECK(eval_boolean(tautology, {0}));
}

TEST_CASE("eval_boolean agrees with enumeration oracle on satisfying fractions") {
  Rng rng = Rng::stream(42, 0);
  const int n = 8;
  for (int trial = 0; trial < 100; ++trial) {
    DnfRule rule = random_rule(rng, n, 4, 3);
    int ours = 0, oracle = 0;
    std::vector<std::uint8_t> assignment(n);
    for (int bits = 0; bits < (1 << n); ++bits) {
      for (int v = 0; v < n; ++v) assignment[v] = (bits >> v) & 1;
      if (eval_boolean(rule, assignment)) ++ours;
      if (oracle_eval(rule, assignment)) ++oracle;
    }
    CHECK(ours == oracle);
  }
}

TEST_CASE("eval_soft limit cases") {
  // All z = 0 -> every clause truth 1; all w = 0 -> prediction 0.
  SoftAssignment lits;
  lits.literal_values = {0.3, 0.7, 0.9, 0.1};
  std::vector<double> z(2 * 4, 0.0);
  std::vector<double> w(2, 0.0);
  SoftEval eval = eval_soft(z, 2, w, lits);
  CHECK(eval.clause_truths[0] == doctest::Approx(1.0));
  CHECK(eval.clause_truths[1] == doctest::Approx(1.0));
  CHECK(eval.prediction == doctest::Approx(0.0));

  // Single active gate on literal j passes the literal value through.
  for (double v : {0.0, 0.25, 0.5, 1.0}) {
    SoftAssignment one;
    one.literal_values = {v, 1.0 - v};
    std::vector<double> z1 = {1.0, 0.0};
    std::vector<double> w1 = {1.0};
    SoftEval e = eval_soft(z1, 1, w1, one);
    CHECK(e.prediction == doctest::Approx(v));
  }

  CHECK_THROWS_AS(eval_soft(z, 3, w, lits), std::invalid_argument);
}

TEST_CASE("hard-gated soft execution reproduces boolean evaluation") {
  Rng rng = Rng::stream(7, 1);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(9));  // N <= 10
    DnfRule rule = random_rule(rng, n, 4, std::min(3, n));
    std::vector<std::uint8_t> assignment(n);
    for (int v = 0; v < n; ++v) assignment[v] = rng.bernoulli(0.5) ? 1 : 0;
    HardGates gates = hard_gates(rule, n);
    SoftEval eval = eval_soft(gates.z, gates.num_slots, gates.w,
                              SoftAssignment::from_booleans(assignment));
    const bool expected = eval_boolean(rule, assignment);
    CHECK((eval.prediction == 0.0 || eval.prediction == 1.0));
    CHECK((eval.prediction == 1.0) == expected);
  }
}

TEST_CASE("logical equivalence") {
  DnfRule a = parse_rule("(x1) OR (x2)");
  DnfRule b = parse_rule("(x2) OR (x1)");
  CHECK(logically_equivalent(a, b).equivalent);
  CHECK_FALSE(logically_equivalent(a, b).sampled);

  // Contradictory clause is a constant-false disjunct.
  DnfRule contradiction = parse_rule("(x1 AND NOT x1)");
  CHECK(contradiction.empty());
  CHECK(logically_equivalent(contradiction, DnfRule()).equivalent);

  DnfRule lhs = parse_rule("(x1)");
  DnfRule rhs = parse_rule("(x1 AND x2) OR (x1 AND NOT x2)");
  CHECK(logically_equivalent(lhs, rhs).equivalent);

  CHECK_FALSE(logically_equivalent(parse_rule("(x1)"), parse_rule("(x2)")).equivalent);
}

TEST_CASE("logical equivalence properties: reflexive and symmetric") {
  Rng rng = Rng::stream(11, 3);
  for (int trial = 0; trial < 50; ++trial) {
    DnfRule a = random_rule(rng, 10, 4, 3);
    DnfRule b = random_rule(rng, 10, 4, 3);
    CHECK(logically_equivalent(a, a).equivalent);
    CHECK(logically_equivalent(a, b).equivalent == logically_equivalent(b, a).equivalent);
  }
}

TEST_CASE("sampled mode triggers above the exact limit") {
  std::vector<std::vector<Literal>> lists;
  for (int v = 0; v < 21; ++v) lists.push_back({{v, false}});
  DnfRule wide = DnfRule::from_literal_lists(lists);
  EquivalenceResult res = logically_equivalent(wide, wide);
  CHECK(res.equivalent);
  CHECK(res.sampled);
}

TEST_CASE("parse and print round trips") {
  // Canonical clause order sorts by (size, literal indices), so the
  // single-literal clause prints first.
  DnfRule rule = parse_rule("(x1 AND NOT x2) OR (x3)");
  CHECK(print_rule(rule) == "(x3) OR (x1 AND NOT x2)");
  CHECK(parse_rule(print_rule(rule)) == rule);
  CHECK(print_rule(parse_rule(print_rule(rule))) == print_rule(rule));

  // Keywords are case-insensitive.
  CHECK(parse_rule("(X1 and not X2) or (x3)") == rule);

  // Duplicate clauses collapse.
  DnfRule dup = parse_rule("(x1) OR (x1)");
  CHECK(dup.clauses().size() == 1);
  CHECK(print_rule(dup) == "(x1)");

  CHECK(print_rule(DnfRule()) == "FALSE");
  CHECK(parse_rule("FALSE").empty());
}

TEST_CASE("printing with dataset feature names") {
  std::vector<std::string> names = {"plas_gt_median", "age_gt_median"};
  DnfRule rule = DnfRule::from_literal_lists({{{0, false}, {1, false}}});
  CHECK(print_rule(rule, &names) == "(plas_gt_median AND age_gt_median)");
  CHECK(parse_rule("(plas_gt_median AND age_gt_median)", &names) == rule);
}

TEST_CASE("parse errors carry positions") {
  CHECK_THROWS_AS(parse_rule("x1 AND x2"), ParseError);
  CHECK_THROWS_AS(parse_rule("(x1 OR"), ParseError);
  CHECK_THROWS_AS(parse_rule("(banana)"), ParseError);
  try {
    parse_rule("(x1 AND ??)");
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.position() == 8);
  }
}

TEST_CASE("canonical ordering is permutation invariant") {
  Rng rng = Rng::stream(13, 5);
  for (int trial = 0; trial < 50; ++trial) {
    DnfRule rule = random_rule(rng, 9, 5, 4);
    // Rebuild with shuffled clause and literal order.
    std::vector<std::vector<Literal>> lists;
    for (const Clause& clause : rule.clauses()) {
      std::vector<Literal> lits = clause.literals();
      for (std::size_t i = lits.size(); i > 1; --i) {
        std::swap(lits[i - 1], lits[rng.next_below(i)]);
      }
      lists.push_back(std::move(lits));
    }
    for (std::size_t i = lists.size(); i > 1; --i) {
      std::swap(lists[i - 1], lists[rng.next_below(i)]);
    }
    DnfRule shuffled = DnfRule::from_literal_lists(lists, rule.num_variables());
    CHECK(shuffled == rule);
    CHECK(print_rule(shuffled) == print_rule(rule));
    CHECK(parse_rule(print_rule(rule)) == rule);
  }
}

TEST_CASE("soft evaluation is monotone in gates and gated literals") {
  Rng rng = Rng::stream(15, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4;
    SoftAssignment lits;
    lits.literal_values.resize(2 * n);
    for (auto& v : lits.literal_values) v = rng.next_double();
    std::vector<double> z(2 * 2 * n);
    for (auto& v : z) v = rng.next_double();
    std::vector<double> w = {rng.next_double(), rng.next_double()};
    const double base = eval_soft(z, 2, w, lits).prediction;

    // Raising any w_k cannot lower the prediction.
    std::vector<double> w_up = w;
    w_up[trial % 2] = std::min(1.0, w_up[trial % 2] + 0.2);
    CHECK(eval_soft(z, 2, w_up, lits).prediction >= base - 1e-12);

    // Raising a literal value cannot lower the prediction.
    SoftAssignment up = lits;
    const std::size_t j = trial % (2 * n);
    up.literal_values[j] = std::min(1.0, up.literal_values[j] + 0.2);
    CHECK(eval_soft(z, 2, w, up).prediction >= base - 1e-12);
  }
}

TEST_CASE("clause construction rejects complementary pairs") {
  CHECK_THROWS_AS(Clause({{0, false}, {0, true}}), std::invalid_argument);
  // Duplicate literals collapse to one.
  Clause c({{1, false}, {1, false}});
  CHECK(c.size() == 1);
}
