#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruleforge/episode.hpp"

namespace ruleforge {

class SingleClassError : public std::runtime_error {
 public:
  explicit SingleClassError(const std::string& what) : std::runtime_error(what) {}
};

// Full pairwise co-occurrence (centered covariance of literal truth values
// over rows where both literals are observed), overall and per class.
// c[j*F + k] = n11/cnt - (sum_j/cnt)*(sum_k/cnt) with cnt the co-observed
// row count; entries with cnt == 0 are 0. `num` holds the exact integer
// numerator n11*cnt - sum_j*sum_k, so c = num / cnt^2.
struct CooccurrenceResult {
  int num_literals = 0;  // F = 2*(n+s)
  std::vector<std::int32_t> cnt_all, cnt_pos, cnt_neg;
  std::vector<std::int64_t> num_all, num_pos, num_neg;
  std::vector<double> c_all, c_pos, c_neg;

  double c(int j, int k) const { return c_all[static_cast<std::size_t>(j) * num_literals + k]; }
};

// 18 statistics per literal, rows indexed by literal (2i = x_i, 2i+1 = NOT x_i).
struct LiteralStats {
  static constexpr int kFeatureCount = 18;

  int num_literals = 0;
  std::vector<double> phi;  // num_literals x 18, row-major

  double at(int literal, int feature) const {
    return phi[static_cast<std::size_t>(literal) * kFeatureCount + feature];
  }

  // Column order of phi.
  static const std::array<const char*, kFeatureCount>& feature_names();
};

// Feature column indices.
enum StatFeature : int {
  kP1GivenPos = 0,   // P(l=1 | y=1)
  kP0GivenPos = 1,
  kObsPos = 2,
  kP1GivenNeg = 3,   // P(l=1 | y=0)
  kP0GivenNeg = 4,
  kObsNeg = 5,
  kP1 = 6,
  kP0 = 7,
  kObs = 8,
  kEntropy = 9,      // natural log, range [0, ln 2]
  kSign = 10,        // 1 positive literal, 0 negation
  kReserved = 11,    // always 0
  kCoocAbs = 12,     // mean |c_{j,k}| over k != j, all rows
  kCoocPosAbs = 13,
  kCoocPos = 14,
  kCoocNegAbs = 15,
  kCoocNeg = 16,
  kCoocDelta = 17,   // kCoocPos - kCoocNeg
};

// Pairwise co-occurrence over the given support rows (all rows when empty).
CooccurrenceResult cooccurrence(const Episode& episode,
                                const std::vector<int>& support_rows = {});

// Computes the full 18-feature matrix on the support rows. Truth rates use
// observed cells only; 0/0 rates default to 0.5 with the matching
// observation-rate feature 0. Throws SingleClassError when the support rows
// carry a single label class.
LiteralStats compute_stats(const Episode& episode,
                           const std::vector<int>& support_rows = {});

// Debug dump: one CSV row per literal with the 18 named columns.
std::string stats_to_csv(const LiteralStats& stats);

}  // namespace ruleforge
