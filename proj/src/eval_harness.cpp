#include "ruleforge/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "ruleforge/memtrack.hpp"
#include "ruleforge/util.hpp"

namespace ruleforge {

std::string CellReport::csv_header() {
  return "k,l,noise_rate,distractors,rho,n,m,episodes,logical_match_rate,accuracy,"
         "distractor_mention_rate,latency_ms,peak_bytes";
}

std::string CellReport::csv_row() const {
  std::ostringstream out;
  out.precision(10);
  out << clause_count << ',' << clause_length << ',' << noise_rate << ',' << distractors << ','
      << rho << ',' << n << ',' << m << ',' << episodes << ',' << logical_match_rate << ','
      << accuracy << ',' << distractor_mention_rate << ',' << latency_ms << ',' << peak_bytes;
  return out.str();
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << CellReport::csv_header() << "\n";
  for (const CellReport& cell : cells) out << cell.csv_row() << "\n";
  return out.str();
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["meta"] = meta;
  nlohmann::json arr = nlohmann::json::array();
  for (const CellReport& cell : cells) {
    arr.push_back({{"k", cell.clause_count},
                   {"l", cell.clause_length},
                   {"noise_rate", cell.noise_rate},
                   {"distractors", cell.distractors},
                   {"rho", cell.rho},
                   {"n", cell.n},
                   {"m", cell.m},
                   {"episodes", cell.episodes},
                   {"logical_match_rate", cell.logical_match_rate},
                   {"accuracy", cell.accuracy},
                   {"distractor_mention_rate", cell.distractor_mention_rate},
                   {"latency_ms", cell.latency_ms},
                   {"peak_bytes", cell.peak_bytes}});
  }
  j["cells"] = std::move(arr);
  return j;
}

const CellReport* ExperimentReport::find(int k, int l) const {
  for (const CellReport& cell : cells) {
    if (cell.clause_count == k && cell.clause_length == l) return &cell;
  }
  return nullptr;
}

namespace {

// Evaluation episode: exact-(k, l) rule when k > 0, otherwise a uniform
// draw over the option lists. X is iid Bernoulli(0.5); regenerated until
// both classes appear (up to 50 draws per rule, then the rule resamples).
struct EvalEpisode {
  Episode episode;
  DnfRule rule;  // generating rule (over the causal n only)
};

EvalEpisode make_eval_episode(Rng& rng, int n, int m_min, int m_max, int k, int l) {
  EvalEpisode out;
  out.episode.n = n;
  out.episode.s = 0;
  out.episode.m = rng.next_int(m_min, m_max);
  DnfRule rule = sample_rule_exact(rng, n, k, l);
  int attempts = 0;
  while (true) {
    out.episode.x.assign(static_cast<std::size_t>(out.episode.m) * n, Cell::kFalse);
    out.episode.y.assign(static_cast<std::size_t>(out.episode.m), 0);
    std::vector<std::uint8_t> assignment(static_cast<std::size_t>(n));
    for (int row = 0; row < out.episode.m; ++row) {
      for (int col = 0; col < n; ++col) {
        const bool v = rng.bernoulli(0.5);
        out.episode.at(row, col) = v ? Cell::kTrue : Cell::kFalse;
        assignment[static_cast<std::size_t>(col)] = v ? 1 : 0;
      }
      out.episode.y[static_cast<std::size_t>(row)] = eval_boolean(rule, assignment) ? 1 : 0;
    }
    bool any_pos = false, any_neg = false;
    for (auto label : out.episode.y) (label ? any_pos : any_neg) = true;
    if (any_pos && any_neg) break;
    if (++attempts >= 50) {
      rule = sample_rule_exact(rng, n, k, l);
      attempts = 0;
    }
  }
  out.episode.rule = rule;
  out.rule = rule;
  return out;
}

double heldout_accuracy(Rng& rng, const DnfRule& truth, const DnfRule& induced, int n,
                        int rows, int distractors, double rho) {
  int correct = 0;
  std::vector<std::uint8_t> causal(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> full(static_cast<std::size_t>(n + distractors));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < n; ++c) causal[static_cast<std::size_t>(c)] = rng.bernoulli(0.5) ? 1 : 0;
    const bool y = eval_boolean(truth, causal);
    std::copy(causal.begin(), causal.end(), full.begin());
    for (int d = 0; d < distractors; ++d) {
      const double p_one = y ? rho : 1.0 - rho;
      full[static_cast<std::size_t>(n + d)] = rng.bernoulli(p_one) ? 1 : 0;
    }
    const bool pred = eval_boolean(induced, full);
    if (pred == y) ++correct;
  }
  return static_cast<double>(correct) / rows;
}

std::uint64_t cell_stream(std::uint64_t base, int seed_idx, int a, int b) {
  return Rng::mix(base + 0x9E37ull * static_cast<std::uint64_t>(seed_idx + 1)) ^
         Rng::mix((static_cast<std::uint64_t>(a) << 20) | static_cast<std::uint64_t>(b + 7));
}

}  // namespace

ExperimentReport complexity_grid(const InferenceNet& net, const GridOptions& opts) {
  ExperimentReport report;
  report.name = "complexity_grid";
  report.meta = {{"n", opts.n},
                 {"episodes_per_cell", opts.episodes_per_cell},
                 {"seeds", opts.seeds},
                 {"base_seed", opts.base_seed},
                 {"eval_rows", opts.eval_rows},
                 {"checkpoint_seed", net.seed()}};
  ThreadPool pool(resolve_threads(opts.threads));
  std::vector<CellReport> cells(opts.clause_counts.size() * opts.clause_lengths.size());
  std::vector<std::future<void>> futures;
  int cell_index = 0;
  for (int k : opts.clause_counts) {
    for (int l : opts.clause_lengths) {
      const int at = cell_index++;
      futures.push_back(pool.submit([&, k, l, at] {
        CellReport cell;
        cell.clause_count = k;
        cell.clause_length = l;
        cell.n = opts.n;
        int matches = 0;
        double acc_sum = 0.0;
        for (int s = 0; s < opts.seeds; ++s) {
          for (int e = 0; e < opts.episodes_per_cell; ++e) {
            Rng rng = Rng::stream(cell_stream(opts.base_seed, s, k, l),
                                  static_cast<std::uint64_t>(e));
            EvalEpisode ev = make_eval_episode(rng, opts.n, opts.m_min, opts.m_max, k, l);
            DnfRule induced = net.induce(ev.episode);
            if (logically_equivalent(induced, ev.rule)) ++matches;
            acc_sum += heldout_accuracy(rng, ev.rule, induced, opts.n, opts.eval_rows, 0, 0.0);
            ++cell.episodes;
          }
        }
        cell.logical_match_rate = static_cast<double>(matches) / cell.episodes;
        cell.accuracy = acc_sum / cell.episodes;
        cells[static_cast<std::size_t>(at)] = cell;
      }));
    }
  }
  for (auto& f : futures) f.get();
  report.cells = std::move(cells);
  return report;
}

ExperimentReport noise_sweep(const InferenceNet& net, const std::vector<double>& rates,
                             const GridOptions& opts) {
  ExperimentReport report;
  report.name = "noise_sweep";
  report.meta = {{"rates", rates},
                 {"episodes_per_cell", opts.episodes_per_cell},
                 {"seeds", opts.seeds},
                 {"base_seed", opts.base_seed},
                 {"checkpoint_seed", net.seed()}};
  ThreadPool pool(resolve_threads(opts.threads));
  std::vector<CellReport> cells(rates.size());
  std::vector<std::future<void>> futures;
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    futures.push_back(pool.submit([&, ri] {
      const double rate = rates[ri];
      CellReport cell;
      cell.noise_rate = rate;
      cell.n = opts.n;
      int matches = 0;
      double acc_sum = 0.0;
      for (int s = 0; s < opts.seeds; ++s) {
        for (int e = 0; e < opts.episodes_per_cell; ++e) {
          Rng rng = Rng::stream(cell_stream(opts.base_seed, s, 101, static_cast<int>(ri)),
                                static_cast<std::uint64_t>(e));
          // Noise the support labels only; the episode (or just the noise
          // draw) is regenerated until both classes survive.
          EvalEpisode ev;
          Episode noisy;
          while (true) {
            const int k = opts.clause_counts[rng.next_below(opts.clause_counts.size())];
            const int l = opts.clause_lengths[rng.next_below(opts.clause_lengths.size())];
            ev = make_eval_episode(rng, opts.n, opts.m_min, opts.m_max, k, l);
            noisy = ev.episode;
            apply_label_noise(noisy.y, rate, rng);
            bool any_pos = false, any_neg = false;
            for (auto label : noisy.y) (label ? any_pos : any_neg) = true;
            if (any_pos && any_neg) break;
          }
          DnfRule induced = net.induce(noisy);
          if (logically_equivalent(induced, ev.rule)) ++matches;
          acc_sum += heldout_accuracy(rng, ev.rule, induced, opts.n, opts.eval_rows, 0, 0.0);
          ++cell.episodes;
        }
      }
      cell.logical_match_rate = static_cast<double>(matches) / cell.episodes;
      cell.accuracy = acc_sum / cell.episodes;
      cells[ri] = cell;
    }));
  }
  for (auto& f : futures) f.get();
  report.cells = std::move(cells);
  return report;
}

ExperimentReport spurious_sweep(const InferenceNet& net, const std::vector<int>& distractors,
                                const std::vector<double>& rhos, const GridOptions& opts) {
  ExperimentReport report;
  report.name = "spurious_sweep";
  report.meta = {{"distractors", distractors},
                 {"rhos", rhos},
                 {"episodes_per_cell", opts.episodes_per_cell},
                 {"seeds", opts.seeds},
                 {"base_seed", opts.base_seed},
                 {"checkpoint_seed", net.seed()}};
  ThreadPool pool(resolve_threads(opts.threads));
  std::vector<CellReport> cells(distractors.size() * rhos.size());
  std::vector<std::future<void>> futures;
  int cell_index = 0;
  for (std::size_t di = 0; di < distractors.size(); ++di) {
    for (std::size_t pi = 0; pi < rhos.size(); ++pi) {
      const int at = cell_index++;
      futures.push_back(pool.submit([&, di, pi, at] {
        const int d_count = distractors[di];
        const double rho = rhos[pi];
        CellReport cell;
        cell.distractors = d_count;
        cell.rho = rho;
        cell.n = opts.n;
        int matches = 0, mentioned = 0;
        double acc_sum = 0.0;
        for (int s = 0; s < opts.seeds; ++s) {
          for (int e = 0; e < opts.episodes_per_cell; ++e) {
            Rng rng = Rng::stream(
                cell_stream(opts.base_seed, s, 202 + static_cast<int>(di), static_cast<int>(pi)),
                static_cast<std::uint64_t>(e));
            const int k = opts.clause_counts[rng.next_below(opts.clause_counts.size())];
            const int l = opts.clause_lengths[rng.next_below(opts.clause_lengths.size())];
            EvalEpisode ev = make_eval_episode(rng, opts.n, opts.m_min, opts.m_max, k, l);
            Episode with_d = ev.episode;
            if (d_count > 0) {
              const int width = opts.n + d_count;
              std::vector<Cell> grown(static_cast<std::size_t>(with_d.m) * width, Cell::kFalse);
              for (int row = 0; row < with_d.m; ++row) {
                for (int col = 0; col < opts.n; ++col) {
                  grown[static_cast<std::size_t>(row) * width + col] = ev.episode.at(row, col);
                }
                const bool y = ev.episode.y[static_cast<std::size_t>(row)] != 0;
                for (int d = 0; d < d_count; ++d) {
                  const double p_one = y ? rho : 1.0 - rho;
                  grown[static_cast<std::size_t>(row) * width + opts.n + d] =
                      rng.bernoulli(p_one) ? Cell::kTrue : Cell::kFalse;
                }
              }
              with_d.x = std::move(grown);
              with_d.s = d_count;
            }
            DnfRule induced = net.induce(with_d);
            if (logically_equivalent(induced, ev.rule)) ++matches;
            bool mentions = false;
            for (int var : induced.mentioned_variables()) mentions = mentions || var >= opts.n;
            if (mentions) ++mentioned;
            acc_sum += heldout_accuracy(rng, ev.rule, induced, opts.n, opts.eval_rows,
                                        d_count, rho);
            ++cell.episodes;
          }
        }
        cell.logical_match_rate = static_cast<double>(matches) / cell.episodes;
        cell.accuracy = acc_sum / cell.episodes;
        cell.distractor_mention_rate = static_cast<double>(mentioned) / cell.episodes;
        cells[static_cast<std::size_t>(at)] = cell;
      }));
    }
  }
  for (auto& f : futures) f.get();
  report.cells = std::move(cells);
  return report;
}

namespace {

Episode scaling_episode(int n, int m, std::uint64_t seed) {
  GenConfig cfg;
  cfg.n_min = cfg.n_max = n;
  cfg.m_min = cfg.m_max = m;
  cfg.s_spurious = 0;
  cfg.k_max = 6;
  cfg.l_max = 4;
  cfg.seed = seed;
  return gen_episode(cfg, 0);
}

CellReport measure_cell(const InferenceNet& net, int n, int m, std::uint64_t seed, int reps,
                        int warmup) {
  CellReport cell;
  cell.n = n;
  cell.m = m;
  cell.episodes = 1;
  Episode episode = scaling_episode(n, m, seed);
  for (int i = 0; i < warmup; ++i) (void)net.induce(episode);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.induce(episode);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  cell.latency_ms = times[times.size() / 2];
  {
    memtrack::Scope scope;
    (void)net.induce(episode);
    cell.peak_bytes = scope.peak();
  }
  return cell;
}

}  // namespace

ScalingReport scaling_bench(const InferenceNet& net, const ScalingOptions& opts) {
  ScalingReport report;
  report.n_sweep.name = "scaling_n";
  report.n_sweep.meta = {{"fixed_m", opts.fixed_m}, {"reps", opts.reps}, {"seed", opts.seed}};
  for (int n : opts.n_values) {
    report.n_sweep.cells.push_back(measure_cell(net, n, opts.fixed_m, opts.seed, opts.reps,
                                                opts.warmup));
  }
  report.m_sweep.name = "scaling_m";
  report.m_sweep.meta = {{"fixed_n", opts.fixed_n}, {"reps", opts.reps}, {"seed", opts.seed}};
  for (int m : opts.m_values) {
    report.m_sweep.cells.push_back(measure_cell(net, opts.fixed_n, m, opts.seed, opts.reps,
                                                opts.warmup));
  }

  const auto& nc = report.n_sweep.cells;
  report.latency_ratio_n = nc.back().latency_ms / nc.front().latency_ms;
  double lo = report.m_sweep.cells.front().latency_ms, hi = lo;
  for (const CellReport& cell : report.m_sweep.cells) {
    lo = std::min(lo, cell.latency_ms);
    hi = std::max(hi, cell.latency_ms);
  }
  report.latency_spread_m = hi / lo;

  // Log-log least squares of peak bytes against N.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double count = static_cast<double>(nc.size());
  for (const CellReport& cell : nc) {
    const double x = std::log(static_cast<double>(cell.n));
    const double y = std::log(static_cast<double>(cell.peak_bytes));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  report.memory_exponent = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  return report;
}

LossWeights ablation_variant(LossWeights base, const std::string& name) {
  if (name == "cf") {
    base.lambda_cf = 0.0f;
  } else if (name == "max_margin") {
    base.lambda_m = 0.0f;
  } else if (name == "slot_balance") {
    base.lambda_b = 0.0f;
  } else if (name != "full") {
    throw std::invalid_argument("unknown ablation variant: " + name);
  }
  return base;
}

double slot_usage_cv2(const std::vector<double>& mean_usage) {
  if (mean_usage.empty()) return 0.0;
  double mu = 0.0;
  for (double u : mean_usage) mu += u;
  mu /= static_cast<double>(mean_usage.size());
  if (mu < 1e-12) return 0.0;
  double acc = 0.0;
  for (double u : mean_usage) {
    const double r = u / mu - 1.0;
    acc += r * r;
  }
  return acc / static_cast<double>(mean_usage.size());
}

std::vector<double> tail_slot_usage(const std::string& slots_csv_path, double fraction) {
  std::ifstream in(slots_csv_path);
  if (!in) throw std::runtime_error("cannot open " + slots_csv_path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cellText;
    bool first = true;
    while (std::getline(ss, cellText, ',')) {
      if (first) {
        first = false;
        continue;  // step column
      }
      row.push_back(std::stod(cellText));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty slots csv: " + slots_csv_path);
  const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(
      fraction * static_cast<double>(rows.size())));
  std::vector<double> mean(rows.back().size(), 0.0);
  for (std::size_t r = rows.size() - take; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += rows[r][k] / static_cast<double>(take);
  }
  return mean;
}

}  // namespace ruleforge
