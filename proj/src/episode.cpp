#include "ruleforge/episode.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace ruleforge {

void GenConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("GenConfig: " + what); };
  if (n_min < 1 || n_max < n_min) fail("n range invalid");
  if (m_min < 2 || m_max < m_min) fail("m range invalid");
  if (k_max < 1) fail("k_max must be >= 1");
  if (l_max < 1) fail("l_max must be >= 1");
  if (l_max > n_min) fail("l_max must be <= n_min");
  if (s_spurious < 0) fail("s_spurious must be >= 0");
  if (s_spurious > 0 && !(rho_flip > 0.0 && rho_flip < 0.5)) fail("rho_flip must be in (0, 0.5)");
  if (label_noise_rate < 0.0 || label_noise_rate >= 1.0) fail("label_noise_rate must be in [0,1)");
  if (missing_rate < 0.0 || missing_rate >= 1.0) fail("missing_rate must be in [0,1)");
}

DnfRule sample_rule(Rng& rng, int n, int k_max, int l_max, int* drawn_clauses) {
  int k = rng.next_int(1, k_max);
  if (drawn_clauses != nullptr) *drawn_clauses = k;
  std::vector<std::vector<Literal>> clauses;
  clauses.reserve(static_cast<std::size_t>(k));
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int clause = 0; clause < k; ++clause) {
    int length = rng.next_int(1, std::min(l_max, n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<Literal> literals;
    literals.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {  // partial Fisher-Yates draw
      int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      literals.push_back({pool[static_cast<std::size_t>(i)], rng.bernoulli(0.5)});
    }
    clauses.push_back(std::move(literals));
  }
  return DnfRule::from_literal_lists(clauses, n);
}

DnfRule sample_rule_exact(Rng& rng, int n, int k, int l) {
  if (l > n) throw std::invalid_argument("sample_rule_exact: l > n");
  std::vector<std::vector<Literal>> clauses;
  clauses.reserve(static_cast<std::size_t>(k));
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int clause = 0; clause < k; ++clause) {
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<Literal> literals;
    for (int i = 0; i < l; ++i) {
      int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      literals.push_back({pool[static_cast<std::size_t>(i)], rng.bernoulli(0.5)});
    }
    clauses.push_back(std::move(literals));
  }
  return DnfRule::from_literal_lists(clauses, n);
}

void attach_spurious(Episode& episode, int s, double rho, Rng& rng) {
  if (s < 0) throw std::invalid_argument("attach_spurious: s must be >= 0");
  if (s == 0) return;
  const int m = episode.m;
  const int old_width = episode.width();
  const int new_width = old_width + s;
  std::vector<Cell> grown(static_cast<std::size_t>(m) * new_width, Cell::kFalse);
  for (int row = 0; row < m; ++row) {
    for (int col = 0; col < old_width; ++col) {
      grown[static_cast<std::size_t>(row) * new_width + col] = episode.at(row, col);
    }
  }
  const int half = m / 2;
  for (int col = 0; col < s; ++col) {
    for (int row = 0; row < m; ++row) {
      bool env1 = row < half;
      bool label = episode.y[static_cast<std::size_t>(row)] != 0;
      // Env 1: P(s=1|y=1)=rho, P(s=1|y=0)=1-rho; env 2 reversed.
      double p_one = (label == env1) ? rho : 1.0 - rho;
      grown[static_cast<std::size_t>(row) * new_width + old_width + col] =
          rng.bernoulli(p_one) ? Cell::kTrue : Cell::kFalse;
    }
  }
  episode.x = std::move(grown);
  episode.s += s;
}

void apply_label_noise(std::vector<std::uint8_t>& y, double rate, Rng& rng) {
  if (rate <= 0.0) return;
  for (auto& label : y) {
    if (rng.bernoulli(rate)) label = label ? 0 : 1;
  }
}

void apply_missingness(std::vector<Cell>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return;
  for (auto& cell : x) {
    if (rng.bernoulli(rate)) cell = Cell::kUnknown;
  }
}

namespace {

bool single_class(const std::vector<std::uint8_t>& y) {
  bool any_pos = false, any_neg = false;
  for (auto label : y) (label ? any_pos : any_neg) = true;
  return !(any_pos && any_neg);
}

}  // namespace

Episode gen_episode(const GenConfig& cfg, std::uint64_t episode_index) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.seed, episode_index);

  Episode episode;
  episode.seed = cfg.seed;
  episode.index = episode_index;
  episode.config = cfg;
  episode.n = rng.next_int(cfg.n_min, cfg.n_max);
  episode.m = rng.next_int(cfg.m_min, cfg.m_max);
  episode.s = 0;

  DnfRule rule = sample_rule(rng, episode.n, cfg.k_max, cfg.l_max);
  int attempts_with_rule = 0;
  while (true) {
    episode.s = 0;
    episode.x.assign(static_cast<std::size_t>(episode.m) * episode.n, Cell::kFalse);
    episode.y.assign(static_cast<std::size_t>(episode.m), 0);
    std::vector<std::uint8_t> assignment(static_cast<std::size_t>(episode.n));
    for (int row = 0; row < episode.m; ++row) {
      for (int col = 0; col < episode.n; ++col) {
        bool v = rng.bernoulli(0.5);
        episode.at(row, col) = v ? Cell::kTrue : Cell::kFalse;
        assignment[static_cast<std::size_t>(col)] = v ? 1 : 0;
      }
      episode.y[static_cast<std::size_t>(row)] = eval_boolean(rule, assignment) ? 1 : 0;
    }
    if (single_class(episode.y)) {
      if (++attempts_with_rule >= 50) {
        rule = sample_rule(rng, episode.n, cfg.k_max, cfg.l_max);
        attempts_with_rule = 0;
      }
      continue;
    }
    attach_spurious(episode, cfg.s_spurious, cfg.rho_flip, rng);
    apply_label_noise(episode.y, cfg.label_noise_rate, rng);
    if (single_class(episode.y)) {  // noise degenerated the labels; retry
      if (++attempts_with_rule >= 50) {
        rule = sample_rule(rng, episode.n, cfg.k_max, cfg.l_max);
        attempts_with_rule = 0;
      }
      continue;
    }
    apply_missingness(episode.x, cfg.missing_rate, rng);
    break;
  }
  episode.rule = rule;

  // Shuffle rows last so environment boundaries are not recoverable.
  const int width = episode.width();
  for (int row = episode.m - 1; row > 0; --row) {
    int other = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(row + 1)));
    if (other == row) continue;
    std::swap(episode.y[static_cast<std::size_t>(row)], episode.y[static_cast<std::size_t>(other)]);
    for (int col = 0; col < width; ++col) {
      std::swap(episode.at(row, col), episode.at(other, col));
    }
  }
  return episode;
}

std::string episode_to_json(const Episode& episode) {
  nlohmann::json j;
  j["n"] = episode.n;
  j["s"] = episode.s;
  j["m"] = episode.m;
  nlohmann::json rows = nlohmann::json::array();
  for (int row = 0; row < episode.m; ++row) {
    nlohmann::json r = nlohmann::json::array();
    for (int col = 0; col < episode.width(); ++col) {
      Cell c = episode.at(row, col);
      if (c == Cell::kUnknown) {
        r.push_back(nullptr);
      } else {
        r.push_back(c == Cell::kTrue ? 1 : 0);
      }
    }
    rows.push_back(std::move(r));
  }
  j["x"] = std::move(rows);
  j["y"] = episode.y;
  j["rule"] = print_rule(episode.rule);
  j["seed"] = episode.seed;
  return j.dump();
}

Episode episode_from_json(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  Episode episode;
  episode.n = j.at("n").get<int>();
  episode.s = j.at("s").get<int>();
  episode.m = j.at("m").get<int>();
  episode.seed = j.value("seed", 0ull);
  const auto& rows = j.at("x");
  episode.x.assign(static_cast<std::size_t>(episode.m) * episode.width(), Cell::kFalse);
  for (int row = 0; row < episode.m; ++row) {
    const auto& r = rows.at(static_cast<std::size_t>(row));
    for (int col = 0; col < episode.width(); ++col) {
      const auto& cell = r.at(static_cast<std::size_t>(col));
      if (cell.is_null()) {
        episode.at(row, col) = Cell::kUnknown;
      } else {
        episode.at(row, col) = cell.get<int>() ? Cell::kTrue : Cell::kFalse;
      }
    }
  }
  episode.y.clear();
  for (const auto& label : j.at("y")) episode.y.push_back(label.get<int>() ? 1 : 0);
  episode.rule = parse_rule(j.at("rule").get<std::string>());
  return episode;
}

void write_episodes_jsonl(std::ostream& out, const std::vector<Episode>& episodes) {
  for (const Episode& episode : episodes) out << episode_to_json(episode) << "\n";
}

}  // namespace ruleforge
