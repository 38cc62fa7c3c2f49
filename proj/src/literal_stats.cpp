#include "ruleforge/literal_stats.hpp"

#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ruleforge/memtrack.hpp"

namespace ruleforge {

const std::array<const char*, LiteralStats::kFeatureCount>& LiteralStats::feature_names() {
  static const std::array<const char*, kFeatureCount> names = {
      "p1_pos", "p0_pos", "obs_pos", "p1_neg", "p0_neg", "obs_neg",
      "p1",     "p0",     "obs",     "entropy", "sign",  "reserved",
      "c_abs",  "c_pos_abs", "c_pos", "c_neg_abs", "c_neg", "c_delta"};
  return names;
}

namespace {

// Per-literal bit rows over the (re-indexed) support rows.
struct BitColumns {
  int rows = 0;
  int words = 0;
  int literals = 0;
  std::vector<std::uint64_t> val;  // literal true and observed
  std::vector<std::uint64_t> obs;  // literal observed
  std::vector<std::uint64_t> pos;  // class mask, one row of `words`
  std::vector<std::uint64_t> neg;
  int n_pos = 0, n_neg = 0;

  const std::uint64_t* val_row(int j) const { return val.data() + static_cast<std::size_t>(j) * words; }
  const std::uint64_t* obs_row(int j) const { return obs.data() + static_cast<std::size_t>(j) * words; }
};

BitColumns build_columns(const Episode& episode, const std::vector<int>& support_rows) {
  std::vector<int> rows = support_rows;
  if (rows.empty()) {
    rows.resize(static_cast<std::size_t>(episode.m));
    std::iota(rows.begin(), rows.end(), 0);
  }
  BitColumns cols;
  cols.rows = static_cast<int>(rows.size());
  cols.words = (cols.rows + 63) / 64;
  cols.literals = 2 * episode.width();
  cols.val.assign(static_cast<std::size_t>(cols.literals) * cols.words, 0);
  cols.obs.assign(static_cast<std::size_t>(cols.literals) * cols.words, 0);
  cols.pos.assign(static_cast<std::size_t>(cols.words), 0);
  cols.neg.assign(static_cast<std::size_t>(cols.words), 0);
  for (int r = 0; r < cols.rows; ++r) {
    const int src = rows[static_cast<std::size_t>(r)];
    const std::uint64_t bit = 1ull << (r % 64);
    const int word = r / 64;
    if (episode.y[static_cast<std::size_t>(src)]) {
      cols.pos[static_cast<std::size_t>(word)] |= bit;
      ++cols.n_pos;
    } else {
      cols.neg[static_cast<std::size_t>(word)] |= bit;
      ++cols.n_neg;
    }
    for (int v = 0; v < episode.width(); ++v) {
      Cell c = episode.at(src, v);
      if (c == Cell::kUnknown) continue;
      const std::size_t base_pos = static_cast<std::size_t>(2 * v) * cols.words + word;
      const std::size_t base_neg = static_cast<std::size_t>(2 * v + 1) * cols.words + word;
      cols.obs[base_pos] |= bit;
      cols.obs[base_neg] |= bit;
      if (c == Cell::kTrue) {
        cols.val[base_pos] |= bit;
      } else {
        cols.val[base_neg] |= bit;
      }
    }
  }
  return cols;
}

inline int popcount_and2(const std::uint64_t* a, const std::uint64_t* b, int words) {
  int total = 0;
  for (int w = 0; w < words; ++w) total += std::popcount(a[w] & b[w]);
  return total;
}

inline int popcount_and3(const std::uint64_t* a, const std::uint64_t* b,
                         const std::uint64_t* c, int words) {
  int total = 0;
  for (int w = 0; w < words; ++w) total += std::popcount(a[w] & b[w] & c[w]);
  return total;
}

void fill_class(const BitColumns& cols, const std::uint64_t* mask,
                std::vector<std::int32_t>& cnt, std::vector<std::int64_t>& num,
                std::vector<double>& c) {
  const int F = cols.literals;
  const int words = cols.words;
  for (int j = 0; j < F; ++j) {
    const std::uint64_t* vj = cols.val_row(j);
    const std::uint64_t* oj = cols.obs_row(j);
    for (int k = j; k < F; ++k) {
      const std::uint64_t* vk = cols.val_row(k);
      const std::uint64_t* ok = cols.obs_row(k);
      std::int64_t n, n11, sj, sk;
      if (mask == nullptr) {
        n = popcount_and2(oj, ok, words);
        n11 = popcount_and2(vj, vk, words);
        sj = popcount_and2(vj, ok, words);
        sk = popcount_and2(oj, vk, words);
      } else {
        n = popcount_and3(oj, ok, mask, words);
        n11 = popcount_and3(vj, vk, mask, words);
        sj = popcount_and3(vj, ok, mask, words);
        sk = popcount_and3(oj, vk, mask, words);
      }
      const std::int64_t numerator = n11 * n - sj * sk;
      const double value = n > 0 ? static_cast<double>(numerator) /
                                       (static_cast<double>(n) * static_cast<double>(n))
                                 : 0.0;
      const std::size_t jk = static_cast<std::size_t>(j) * F + k;
      const std::size_t kj = static_cast<std::size_t>(k) * F + j;
      cnt[jk] = static_cast<std::int32_t>(n);
      cnt[kj] = static_cast<std::int32_t>(n);
      num[jk] = numerator;
      num[kj] = numerator;
      c[jk] = value;
      c[kj] = value;
    }
  }
}

// Mean of num/cnt^2 over k != j with cnt > 0, summed exactly per distinct
// cnt so the result is invariant to how literals are ordered.
struct GroupedMean {
  std::vector<std::int64_t> sums;  // indexed by cnt
  int max_cnt = 0;
  int valid = 0;

  explicit GroupedMean(int rows) : sums(static_cast<std::size_t>(rows) + 1, 0) {}

  void accumulate(std::int64_t value, std::int32_t cnt) {
    if (cnt <= 0) return;
    sums[static_cast<std::size_t>(cnt)] += value;
    if (cnt > max_cnt) max_cnt = cnt;
    ++valid;
  }

  double finish() {
    double total = 0.0;
    for (int c = 1; c <= max_cnt; ++c) {
      const std::int64_t s = sums[static_cast<std::size_t>(c)];
      if (s != 0) {
        total += static_cast<double>(s) / (static_cast<double>(c) * static_cast<double>(c));
      }
      sums[static_cast<std::size_t>(c)] = 0;
    }
    const double mean = valid > 0 ? total / static_cast<double>(valid) : 0.0;
    max_cnt = 0;
    valid = 0;
    return mean;
  }
};

}  // namespace

CooccurrenceResult cooccurrence(const Episode& episode, const std::vector<int>& support_rows) {
  BitColumns cols = build_columns(episode, support_rows);
  CooccurrenceResult result;
  result.num_literals = cols.literals;
  const std::size_t cells = static_cast<std::size_t>(cols.literals) * cols.literals;
  result.cnt_all.assign(cells, 0);
  result.cnt_pos.assign(cells, 0);
  result.cnt_neg.assign(cells, 0);
  result.num_all.assign(cells, 0);
  result.num_pos.assign(cells, 0);
  result.num_neg.assign(cells, 0);
  result.c_all.assign(cells, 0.0);
  result.c_pos.assign(cells, 0.0);
  result.c_neg.assign(cells, 0.0);
  memtrack::add(static_cast<std::int64_t>(cells) * (3 * 4 + 3 * 8 + 3 * 8));
  fill_class(cols, nullptr, result.cnt_all, result.num_all, result.c_all);
  fill_class(cols, cols.pos.data(), result.cnt_pos, result.num_pos, result.c_pos);
  fill_class(cols, cols.neg.data(), result.cnt_neg, result.num_neg, result.c_neg);
  return result;
}

LiteralStats compute_stats(const Episode& episode, const std::vector<int>& support_rows) {
  BitColumns cols = build_columns(episode, support_rows);
  if (cols.n_pos == 0 || cols.n_neg == 0) {
    throw SingleClassError("compute_stats: support rows contain a single label class");
  }
  const int F = cols.literals;
  LiteralStats stats;
  stats.num_literals = F;
  stats.phi.assign(static_cast<std::size_t>(F) * LiteralStats::kFeatureCount, 0.0);

  auto rate = [](int hits, int denom) {
    return denom > 0 ? static_cast<double>(hits) / denom : 0.5;
  };

  for (int j = 0; j < F; ++j) {
    const std::uint64_t* vj = cols.val_row(j);
    const std::uint64_t* oj = cols.obs_row(j);
    const int obs_pos = popcount_and2(oj, cols.pos.data(), cols.words);
    const int val_pos = popcount_and2(vj, cols.pos.data(), cols.words);
    const int obs_neg = popcount_and2(oj, cols.neg.data(), cols.words);
    const int val_neg = popcount_and2(vj, cols.neg.data(), cols.words);
    const int obs_all = obs_pos + obs_neg;
    const int val_all = val_pos + val_neg;

    double* row = stats.phi.data() + static_cast<std::size_t>(j) * LiteralStats::kFeatureCount;
    const double p_pos = rate(val_pos, obs_pos);
    const double p_neg = rate(val_neg, obs_neg);
    const double p_all = rate(val_all, obs_all);
    row[kP1GivenPos] = p_pos;
    row[kP0GivenPos] = 1.0 - p_pos;
    row[kObsPos] = static_cast<double>(obs_pos) / cols.n_pos;
    row[kP1GivenNeg] = p_neg;
    row[kP0GivenNeg] = 1.0 - p_neg;
    row[kObsNeg] = static_cast<double>(obs_neg) / cols.n_neg;
    row[kP1] = p_all;
    row[kP0] = 1.0 - p_all;
    row[kObs] = static_cast<double>(obs_all) / cols.rows;
    double entropy = 0.0;
    if (p_all > 0.0 && p_all < 1.0) {
      entropy = -p_all * std::log(p_all) - (1.0 - p_all) * std::log(1.0 - p_all);
    }
    row[kEntropy] = entropy;
    row[kSign] = (j % 2 == 0) ? 1.0 : 0.0;
    row[kReserved] = 0.0;
  }

  CooccurrenceResult cooc = cooccurrence(episode, support_rows);
  const std::int64_t cooc_bytes =
      static_cast<std::int64_t>(cooc.c_all.size()) * (3 * 4 + 3 * 8 + 3 * 8);
  GroupedMean abs_all(cols.rows), abs_pos(cols.rows), sgn_pos(cols.rows);
  GroupedMean abs_neg(cols.rows), sgn_neg(cols.rows);
  for (int j = 0; j < F; ++j) {
    const std::size_t base = static_cast<std::size_t>(j) * F;
    for (int k = 0; k < F; ++k) {
      if (k == j) continue;
      const std::size_t jk = base + static_cast<std::size_t>(k);
      abs_all.accumulate(std::llabs(cooc.num_all[jk]), cooc.cnt_all[jk]);
      abs_pos.accumulate(std::llabs(cooc.num_pos[jk]), cooc.cnt_pos[jk]);
      sgn_pos.accumulate(cooc.num_pos[jk], cooc.cnt_pos[jk]);
      abs_neg.accumulate(std::llabs(cooc.num_neg[jk]), cooc.cnt_neg[jk]);
      sgn_neg.accumulate(cooc.num_neg[jk], cooc.cnt_neg[jk]);
    }
    double* row = stats.phi.data() + static_cast<std::size_t>(j) * LiteralStats::kFeatureCount;
    row[kCoocAbs] = abs_all.finish();
    row[kCoocPosAbs] = abs_pos.finish();
    row[kCoocPos] = sgn_pos.finish();
    row[kCoocNegAbs] = abs_neg.finish();
    row[kCoocNeg] = sgn_neg.finish();
    row[kCoocDelta] = row[kCoocPos] - row[kCoocNeg];
  }
  memtrack::sub(cooc_bytes);  // pairwise matrices are freed on return
  return stats;
}

std::string stats_to_csv(const LiteralStats& stats) {
  std::ostringstream out;
  out << "literal";
  for (const char* name : LiteralStats::feature_names()) out << "," << name;
  out << "\n";
  out.precision(17);
  for (int j = 0; j < stats.num_literals; ++j) {
    out << j;
    for (int f = 0; f < LiteralStats::kFeatureCount; ++f) {
      out << "," << stats.at(j, f);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace ruleforge
