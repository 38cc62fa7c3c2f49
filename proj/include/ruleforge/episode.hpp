#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ruleforge/dnf.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

// Boolean cell with optional missingness.
enum class Cell : std::int8_t { kFalse = 0, kTrue = 1, kUnknown = -1 };

struct GenConfig {
  int n_min = 6;
  int n_max = 12;
  int m_min = 24;
  int m_max = 48;
  int k_max = 6;
  int l_max = 4;
  int s_spurious = 3;
  double rho_flip = 0.3;
  double label_noise_rate = 0.0;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct Episode {
  int n = 0;  // causal variables
  int s = 0;  // spurious variables
  int m = 0;  // examples
  std::vector<Cell> x;        // m x (n+s), row-major
  std::vector<std::uint8_t> y;
  DnfRule rule;               // over the first n variables
  std::uint64_t seed = 0;     // root seed of the generating run
  std::uint64_t index = 0;    // episode index within the run
  GenConfig config;           // snapshot

  int width() const { return n + s; }
  Cell at(int row, int col) const { return x[static_cast<std::size_t>(row) * width() + col]; }
  Cell& at(int row, int col) { return x[static_cast<std::size_t>(row) * width() + col]; }

  // Literal truth value for (row, literal j) with missing encoded as 0.5.
  double literal_value(int row, int literal) const {
    Cell c = at(row, literal / 2);
    if (c == Cell::kUnknown) return 0.5;
    double v = (c == Cell::kTrue) ? 1.0 : 0.0;
    return (literal % 2 == 0) ? v : 1.0 - v;
  }
};

// Samples K ~ Unif{1..k_max} clauses; each clause draws its length from
// Unif{1..min(l_max, n)}, distinct variables without replacement, and
// Bernoulli(0.5) polarities. Rules are not canonicalized beyond the
// DnfRule constructor's dedup; `drawn_clauses` reports K before dedup.
DnfRule sample_rule(Rng& rng, int n, int k_max, int l_max, int* drawn_clauses = nullptr);

// Variant with exact clause count and exact literals per clause, used by the
// evaluation grids.
DnfRule sample_rule_exact(Rng& rng, int n, int k, int l);

// Appends `s` spurious columns whose label correlation flips between the
// first and second half of the rows: rows [0, m/2) use P(s=1|y=1)=rho,
// P(s=1|y=0)=1-rho; the remaining rows use the reverse. Marginally over the
// episode each spurious column is independent of the label.
void attach_spurious(Episode& episode, int s, double rho, Rng& rng);

void apply_label_noise(std::vector<std::uint8_t>& y, double rate, Rng& rng);
void apply_missingness(std::vector<Cell>& x, double rate, Rng& rng);

// Generates one episode from the stream (cfg.seed, episode_index):
// sample sizes and rule, fill causal cells iid Bernoulli(0.5), label by the
// rule, attach spurious columns, apply label noise then missingness, and
// shuffle rows last. Episodes whose labels end up single-class are
// regenerated (up to 50 attempts per rule, then the rule is resampled).
Episode gen_episode(const GenConfig& cfg, std::uint64_t episode_index);

// One JSON object per line: fields n, s, m, x (null for unknown), y, rule,
// seed.
std::string episode_to_json(const Episode& episode);
Episode episode_from_json(const std::string& line);
void write_episodes_jsonl(std::ostream& out, const std::vector<Episode>& episodes);

}  // namespace ruleforge
