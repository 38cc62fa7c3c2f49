#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ruleforge {

// A boolean variable or its negation. Variables are 0-based internally;
// the text form is 1-based ("x1" is variable 0).
struct Literal {
  int variable = 0;
  bool negated = false;

  // Global literal index: 2*variable for x, 2*variable+1 for NOT x.
  int index() const { return 2 * variable + (negated ? 1 : 0); }

  friend bool operator==(const Literal& a, const Literal& b) {
    return a.variable == b.variable && a.negated == b.negated;
  }
  friend bool operator<(const Literal& a, const Literal& b) {
    return a.index() < b.index();
  }
};

// Conjunction of literals over distinct variables. Constructing a clause
// that mentions both x and NOT x throws; DnfRule filters such clauses
// instead (they are constant-false disjuncts).
class Clause {
 public:
  Clause() = default;
  explicit Clause(std::vector<Literal> literals);

  const std::vector<Literal>& literals() const { return literals_; }
  bool empty() const { return literals_.empty(); }
  std::size_t size() const { return literals_.size(); }

  friend bool operator==(const Clause& a, const Clause& b) {
    return a.literals_ == b.literals_;
  }
  friend bool operator<(const Clause& a, const Clause& b);

 private:
  std::vector<Literal> literals_;  // sorted by (variable, polarity), unique variables
};

// Disjunction of clauses, kept in canonical form: clauses deduplicated and
// sorted by (size, lexicographic literal indices). The empty rule is
// constant-false.
class DnfRule {
 public:
  DnfRule() = default;
  explicit DnfRule(std::vector<Clause> clauses, int num_variables = -1);

  // Builds from raw literal lists; clauses containing a complementary pair
  // are constant-false and dropped.
  static DnfRule from_literal_lists(const std::vector<std::vector<Literal>>& lists,
                                    int num_variables = -1);

  const std::vector<Clause>& clauses() const { return clauses_; }
  bool empty() const { return clauses_.empty(); }
  int num_variables() const { return num_variables_; }

  // Sorted list of variable indices mentioned by any clause.
  std::vector<int> mentioned_variables() const;

  friend bool operator==(const DnfRule& a, const DnfRule& b) {
    return a.clauses_ == b.clauses_;
  }

 private:
  std::vector<Clause> clauses_;
  int num_variables_ = 0;
};

// True iff some clause has all literals satisfied. Throws std::out_of_range
// if the rule mentions a variable >= assignment.size().
bool eval_boolean(const DnfRule& rule, const std::vector<std::uint8_t>& assignment);

// Literal truth values for one example; index 2i holds x_i, index 2i+1 holds
// NOT x_i. For observed boolean inputs the pair sums to 1; missing cells
// encode both entries as 0.5.
struct SoftAssignment {
  std::vector<double> literal_values;

  static SoftAssignment from_booleans(const std::vector<std::uint8_t>& assignment);
};

struct SoftEval {
  std::vector<double> clause_truths;  // length T
  double prediction = 0.0;
};

// Product T-norm execution of gated clauses:
//   C_k = prod_j (1 - z[k,j] * (1 - l_j)),  yhat = 1 - prod_k (1 - w_k * C_k).
// z is row-major T x 2N. Throws std::invalid_argument on dimension mismatch.
SoftEval eval_soft(const std::vector<double>& z, int num_slots,
                   const std::vector<double>& w, const SoftAssignment& lits);

// Hard gate encoding of a rule (z,w in {0,1}) for soft execution; one slot
// per clause.
struct HardGates {
  std::vector<double> z;  // T x 2N row-major
  std::vector<double> w;  // T
  int num_slots = 0;
  int num_literals = 0;
};
HardGates hard_gates(const DnfRule& rule, int num_variables);

struct EquivalenceResult {
  bool equivalent = false;
  bool sampled = false;  // true when checked on random assignments only

  explicit operator bool() const { return equivalent; }
};

// Exact truth-table comparison over the union of mentioned variables when
// that union has at most `exact_limit` variables; otherwise agreement on
// 2^16 uniformly random assignments (flagged `sampled`).
EquivalenceResult logically_equivalent(const DnfRule& a, const DnfRule& b,
                                       int exact_limit = 20,
                                       std::uint64_t sample_seed = 0x5EEDull);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Grammar: rule := clause ("OR" clause)* | "FALSE"
//          clause := "(" literal ("AND" literal)* ")"
//          literal := ["NOT"] name
// Keywords are case-insensitive. Names resolve against `names` when given,
// otherwise (and as a fallback) "x<k>" maps to variable k-1.
DnfRule parse_rule(const std::string& text,
                   const std::vector<std::string>* names = nullptr);

// Canonical text form; dedupes clauses via DnfRule's canonicalization.
// Uses names[i] for variable i when given, "x<i+1>" otherwise.
std::string print_rule(const DnfRule& rule,
                       const std::vector<std::string>* names = nullptr);

}  // namespace ruleforge
