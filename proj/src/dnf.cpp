#include "ruleforge/dnf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "ruleforge/rng.hpp"

namespace ruleforge {

namespace {

std::vector<Literal> normalize_literals(std::vector<Literal> literals) {
  std::sort(literals.begin(), literals.end());
  literals.erase(std::unique(literals.begin(), literals.end()), literals.end());
  return literals;
}

bool has_complementary_pair(const std::vector<Literal>& sorted_literals) {
  for (std::size_t i = 1; i < sorted_literals.size(); ++i) {
    if (sorted_literals[i].variable == sorted_literals[i - 1].variable) return true;
  }
  return false;
}

}  // namespace

Clause::Clause(std::vector<Literal> literals)
    : literals_(normalize_literals(std::move(literals))) {
  if (has_complementary_pair(literals_)) {
    throw std::invalid_argument("clause contains a variable and its negation");
  }
}

bool operator<(const Clause& a, const Clause& b) {
  if (a.literals_.size() != b.literals_.size()) {
    return a.literals_.size() < b.literals_.size();
  }
  return a.literals_ < b.literals_;
}

DnfRule::DnfRule(std::vector<Clause> clauses, int num_variables)
    : clauses_(std::move(clauses)) {
  std::sort(clauses_.begin(), clauses_.end());
  clauses_.erase(std::unique(clauses_.begin(), clauses_.end()), clauses_.end());
  int max_var = -1;
  for (const Clause& c : clauses_) {
    for (const Literal& l : c.literals()) max_var = std::max(max_var, l.variable);
  }
  num_variables_ = num_variables >= 0 ? num_variables : max_var + 1;
}

DnfRule DnfRule::from_literal_lists(const std::vector<std::vector<Literal>>& lists,
                                    int num_variables) {
  std::vector<Clause> clauses;
  clauses.reserve(lists.size());
  for (const auto& list : lists) {
    auto sorted = normalize_literals(list);
    if (has_complementary_pair(sorted)) continue;  // constant-false disjunct
    clauses.push_back(Clause(std::move(sorted)));
  }
  return DnfRule(std::move(clauses), num_variables);
}

std::vector<int> DnfRule::mentioned_variables() const {
  std::vector<int> vars;
  for (const Clause& c : clauses_) {
    for (const Literal& l : c.literals()) vars.push_back(l.variable);
  }
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  return vars;
}

bool eval_boolean(const DnfRule& rule, const std::vector<std::uint8_t>& assignment) {
  for (const Clause& clause : rule.clauses()) {
    bool satisfied = true;
    for (const Literal& lit : clause.literals()) {
      if (lit.variable < 0 ||
          static_cast<std::size_t>(lit.variable) >= assignment.size()) {
        throw std::out_of_range("literal variable index outside assignment");
      }
      bool value = assignment[static_cast<std::size_t>(lit.variable)] != 0;
      if (lit.negated) value = !value;
      if (!value) {
        satisfied = false;
        break;
      }
    }
    if (satisfied) return true;  // empty clause counts as satisfied
  }
  return false;
}

SoftAssignment SoftAssignment::from_booleans(const std::vector<std::uint8_t>& assignment) {
  SoftAssignment soft;
  soft.literal_values.resize(assignment.size() * 2);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    double v = assignment[i] ? 1.0 : 0.0;
    soft.literal_values[2 * i] = v;
    soft.literal_values[2 * i + 1] = 1.0 - v;
  }
  return soft;
}

SoftEval eval_soft(const std::vector<double>& z, int num_slots,
                   const std::vector<double>& w, const SoftAssignment& lits) {
  const std::size_t num_literals = lits.literal_values.size();
  if (num_slots < 0 || w.size() != static_cast<std::size_t>(num_slots) ||
      z.size() != static_cast<std::size_t>(num_slots) * num_literals) {
    throw std::invalid_argument("eval_soft: gate/literal dimension mismatch");
  }
  SoftEval out;
  out.clause_truths.resize(static_cast<std::size_t>(num_slots));
  double none_fire = 1.0;
  for (int k = 0; k < num_slots; ++k) {
    double truth = 1.0;
    const double* zk = z.data() + static_cast<std::size_t>(k) * num_literals;
    for (std::size_t j = 0; j < num_literals; ++j) {
      truth *= 1.0 - zk[j] * (1.0 - lits.literal_values[j]);
    }
    out.clause_truths[static_cast<std::size_t>(k)] = truth;
    none_fire *= 1.0 - w[static_cast<std::size_t>(k)] * truth;
  }
  out.prediction = 1.0 - none_fire;
  return out;
}

HardGates hard_gates(const DnfRule& rule, int num_variables) {
  HardGates gates;
  gates.num_slots = static_cast<int>(rule.clauses().size());
  gates.num_literals = 2 * num_variables;
  gates.z.assign(static_cast<std::size_t>(gates.num_slots) * gates.num_literals, 0.0);
  gates.w.assign(static_cast<std::size_t>(gates.num_slots), 1.0);
  for (int k = 0; k < gates.num_slots; ++k) {
    for (const Literal& lit : rule.clauses()[static_cast<std::size_t>(k)].literals()) {
      gates.z[static_cast<std::size_t>(k) * gates.num_literals + lit.index()] = 1.0;
    }
  }
  return gates;
}

namespace {

// Per-clause masks over the compressed variable set V: the clause is
// satisfied by compressed assignment `a` iff (a & mask) == need.
struct ClauseMasks {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;

  ClauseMasks(const DnfRule& rule, const std::vector<int>& vars) {
    entries.reserve(rule.clauses().size());
    for (const Clause& clause : rule.clauses()) {
      std::uint32_t mask = 0, need = 0;
      for (const Literal& lit : clause.literals()) {
        auto it = std::lower_bound(vars.begin(), vars.end(), lit.variable);
        auto bit = static_cast<std::uint32_t>(1u << (it - vars.begin()));
        mask |= bit;
        if (!lit.negated) need |= bit;
      }
      entries.emplace_back(mask, need);
    }
  }

  bool eval(std::uint32_t assignment) const {
    for (const auto& [mask, need] : entries) {
      if ((assignment & mask) == need) return true;
    }
    return false;
  }
};

}  // namespace

EquivalenceResult logically_equivalent(const DnfRule& a, const DnfRule& b,
                                       int exact_limit, std::uint64_t sample_seed) {
  std::vector<int> vars = a.mentioned_variables();
  {
    std::vector<int> vb = b.mentioned_variables();
    vars.insert(vars.end(), vb.begin(), vb.end());
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  }
  ClauseMasks ma(a, vars), mb(b, vars);
  EquivalenceResult result;
  if (static_cast<int>(vars.size()) <= exact_limit) {
    const std::uint64_t total = 1ull << vars.size();
    for (std::uint64_t assignment = 0; assignment < total; ++assignment) {
      auto bits = static_cast<std::uint32_t>(assignment);
      if (ma.eval(bits) != mb.eval(bits)) return {false, false};
    }
    return {true, false};
  }
  result.sampled = true;
  Rng rng = Rng::stream(sample_seed, vars.size());
  const int samples = 1 << 16;
  const int words = (static_cast<int>(vars.size()) + 31) / 32;
  for (int s = 0; s < samples; ++s) {
    // Only the low 32 bits matter per mask word; clause masks use uint32,
    // so sample per-32-variable blocks and evaluate blockwise.
    // For |V| > 32 variables fall back to vector assignments.
    if (words == 1) {
      auto bits = static_cast<std::uint32_t>(rng.next_u64());
      if (ma.eval(bits) != mb.eval(bits)) return {false, true};
    } else {
      std::vector<std::uint8_t> assignment(
          static_cast<std::size_t>(vars.empty() ? 0 : vars.back() + 1), 0);
      for (int v : vars) assignment[static_cast<std::size_t>(v)] =
          static_cast<std::uint8_t>(rng.next_u64() & 1u);
      if (eval_boolean(a, assignment) != eval_boolean(b, assignment)) {
        return {false, true};
      }
    }
  }
  result.equivalent = true;
  return result;
}

namespace {

struct Token {
  enum Kind { kLParen, kRParen, kAnd, kOr, kNot, kFalse, kName, kEnd } kind;
  std::string text;
  std::size_t position;
};

std::string upper_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '(') {
      tokens.push_back({Token::kLParen, "(", i});
      ++i;
      continue;
    }
    if (c == ')') {
      tokens.push_back({Token::kRParen, ")", i});
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i])) &&
           text[i] != '(' && text[i] != ')') {
      ++i;
    }
    std::string word = text.substr(start, i - start);
    std::string up = upper_ascii(word);
    Token::Kind kind = Token::kName;
    if (up == "AND") kind = Token::kAnd;
    else if (up == "OR") kind = Token::kOr;
    else if (up == "NOT") kind = Token::kNot;
    else if (up == "FALSE") kind = Token::kFalse;
    tokens.push_back({kind, word, start});
  }
  tokens.push_back({Token::kEnd, "", text.size()});
  return tokens;
}

int resolve_name(const std::string& name, const std::vector<std::string>* names,
                 std::size_t position) {
  if (names != nullptr) {
    for (std::size_t i = 0; i < names->size(); ++i) {
      if ((*names)[i] == name) return static_cast<int>(i);
    }
  }
  if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'X')) {
    bool digits = true;
    for (std::size_t i = 1; i < name.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(name[i]))) {
        digits = false;
        break;
      }
    }
    if (digits) {
      long k = std::stol(name.substr(1));
      if (k >= 1) return static_cast<int>(k - 1);
      throw ParseError("variable index must be >= 1", position);
    }
  }
  throw ParseError("unknown variable name '" + name + "'", position);
}

}  // namespace

DnfRule parse_rule(const std::string& text, const std::vector<std::string>* names) {
  std::vector<Token> tokens = tokenize(text);
  std::size_t pos = 0;
  auto peek = [&]() -> const Token& { return tokens[pos]; };
  auto next = [&]() -> const Token& { return tokens[pos++]; };

  if (peek().kind == Token::kFalse) {
    next();
    if (peek().kind != Token::kEnd) {
      throw ParseError("trailing tokens after FALSE", peek().position);
    }
    return DnfRule();
  }

  std::vector<std::vector<Literal>> clause_lists;
  int max_var = -1;
  while (true) {
    if (peek().kind != Token::kLParen) {
      throw ParseError("expected '('", peek().position);
    }
    next();
    std::vector<Literal> literals;
    if (peek().kind == Token::kRParen) {
      next();  // "()" parses as the empty (always-true) clause
    } else {
      while (true) {
        bool negated = false;
        if (peek().kind == Token::kNot) {
          next();
          negated = true;
        }
        if (peek().kind != Token::kName) {
          throw ParseError("expected variable name", peek().position);
        }
        const Token& name_tok = next();
        int var = resolve_name(name_tok.text, names, name_tok.position);
        max_var = std::max(max_var, var);
        literals.push_back({var, negated});
        if (peek().kind == Token::kAnd) {
          next();
          continue;
        }
        if (peek().kind == Token::kRParen) {
          next();
          break;
        }
        throw ParseError("expected AND or ')'", peek().position);
      }
    }
    clause_lists.push_back(std::move(literals));
    if (peek().kind == Token::kOr) {
      next();
      continue;
    }
    if (peek().kind == Token::kEnd) break;
    throw ParseError("expected OR or end of input", peek().position);
  }
  return DnfRule::from_literal_lists(clause_lists, max_var + 1);
}

std::string print_rule(const DnfRule& rule, const std::vector<std::string>* names) {
  if (rule.empty()) return "FALSE";
  std::string out;
  bool first_clause = true;
  for (const Clause& clause : rule.clauses()) {
    if (!first_clause) out += " OR ";
    first_clause = false;
    out += "(";
    bool first_lit = true;
    for (const Literal& lit : clause.literals()) {
      if (!first_lit) out += " AND ";
      first_lit = false;
      if (lit.negated) out += "NOT ";
      if (names != nullptr && lit.variable >= 0 &&
          static_cast<std::size_t>(lit.variable) < names->size()) {
        out += (*names)[static_cast<std::size_t>(lit.variable)];
      } else {
        out += "x" + std::to_string(lit.variable + 1);
      }
    }
    out += ")";
  }
  return out;
}

}  // namespace ruleforge
