#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ruleforge/losses.hpp"
#include "ruleforge/model.hpp"

namespace ruleforge {

struct CellReport {
  int clause_count = 0;    // K (0 when not applicable)
  int clause_length = 0;   // L
  double noise_rate = 0.0;
  int distractors = 0;
  double rho = 0.0;
  int n = 0;
  int m = 0;
  int episodes = 0;
  double logical_match_rate = 0.0;
  double accuracy = 0.0;
  double distractor_mention_rate = 0.0;
  double latency_ms = 0.0;
  std::int64_t peak_bytes = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

struct ExperimentReport {
  std::string name;
  nlohmann::json meta;  // seeds, grid spec, checkpoint step/seed
  std::vector<CellReport> cells;

  std::string to_csv() const;
  nlohmann::json to_json() const;

  const CellReport* find(int k, int l) const;
};

struct GridOptions {
  std::vector<int> clause_counts = {1, 2, 3, 4};
  std::vector<int> clause_lengths = {1, 2, 3};
  int n = 12;
  int m_min = 24;
  int m_max = 48;
  int episodes_per_cell = 50;
  int seeds = 3;
  std::uint64_t base_seed = 99;
  int eval_rows = 256;
  int threads = 0;
};

// Rule recovery and held-out accuracy over exact-(K, L) rules at fixed N.
ExperimentReport complexity_grid(const InferenceNet& net, const GridOptions& opts);

// Label noise on the support labels only; accuracy on clean held-out rows.
// Episodes mix K in clause_counts and L in clause_lengths uniformly.
ExperimentReport noise_sweep(const InferenceNet& net, const std::vector<double>& rates,
                             const GridOptions& opts);

// Consistently label-correlated distractor columns appended to each episode:
// P(d=1|y=1) = rho, P(d=1|y=0) = 1-rho in support and held-out rows alike.
ExperimentReport spurious_sweep(const InferenceNet& net, const std::vector<int>& distractors,
                                const std::vector<double>& rhos, const GridOptions& opts);

struct ScalingOptions {
  std::vector<int> n_values = {16, 32, 64, 128, 256, 512};
  std::vector<int> m_values = {32, 64, 128, 256, 512};
  int fixed_m = 128;  // example count for the N sweep
  int fixed_n = 64;   // variable count for the M sweep
  int reps = 5;
  int warmup = 2;
  std::uint64_t seed = 7;
};

struct ScalingReport {
  ExperimentReport n_sweep;  // latency + peak bytes per N at fixed M
  ExperimentReport m_sweep;  // latency per M at fixed N
  double latency_ratio_n = 0.0;    // latency(max N) / latency(min N)
  double latency_spread_m = 0.0;   // max/min over the M sweep
  double memory_exponent = 0.0;    // log-log slope of peak bytes vs N
};

// Single-threaded induction timing and peak-allocation measurement.
ScalingReport scaling_bench(const InferenceNet& net, const ScalingOptions& opts);

// Loss ablation variants (Table-style): zeroes one weight group.
LossWeights ablation_variant(LossWeights base, const std::string& name);

// Normalized slot-usage variance: CV^2 of the per-slot usage means.
double slot_usage_cv2(const std::vector<double>& mean_usage);

// Mean of the last `fraction` of rows of a slots.csv file, one value per slot.
std::vector<double> tail_slot_usage(const std::string& slots_csv_path, double fraction = 0.1);

}  // namespace ruleforge
