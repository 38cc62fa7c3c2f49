#include "ruleforge/literal_stats.hpp"

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "ruleforge/rng.hpp"

using namespace ruleforge;

namespace {

Episode make_episode(int n, const std::vector<std::vector<int>>& cells,
                     const std::vector<int>& labels) {
  Episode episode;
  episode.n = n;
  episode.s = 0;
  episode.m = static_cast<int>(cells.size());
  episode.x.resize(static_cast<std::size_t>(episode.m) * n);
  episode.y.resize(static_cast<std::size_t>(episode.m));
  for (int r = 0; r < episode.m; ++r) {
    episode.y[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(r)] ? 1 : 0;
    for (int c = 0; c < n; ++c) {
      const int v = cells[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      episode.at(r, c) = v < 0 ? Cell::kUnknown : (v ? Cell::kTrue : Cell::kFalse);
    }
  }
  return episode;
}

Episode random_episode(Rng& rng, int n, int m, double missing = 0.0) {
  Episode episode;
  episode.n = n;
  episode.s = 0;
  episode.m = m;
  episode.x.resize(static_cast<std::size_t>(m) * n);
  episode.y.resize(static_cast<std::size_t>(m));
  while (true) {
    bool any_pos = false, any_neg = false;
    for (int r = 0; r < m; ++r) {
      episode.y[static_cast<std::size_t>(r)] = rng.bernoulli(0.5) ? 1 : 0;
      (episode.y[static_cast<std::size_t>(r)] ? any_pos : any_neg) = true;
      for (int c = 0; c < n; ++c) {
        if (missing > 0.0 && rng.bernoulli(missing)) {
          episode.at(r, c) = Cell::kUnknown;
        } else {
          episode.at(r, c) = rng.bernoulli(0.5) ? Cell::kTrue : Cell::kFalse;
        }
      }
    }
    if (any_pos && any_neg) return episode;
  }
}

}  // namespace

TEST_CASE("constant fully observed literal") {
  Episode e = make_episode(1, {{1}, {1}, {1}, {1}}, {1, 1, 0, 0});
  LiteralStats stats = compute_stats(e);
  CHECK(stats.at(0, kP1GivenPos) == doctest::Approx(1.0));
  CHECK(stats.at(0, kP1GivenNeg) == doctest::Approx(1.0));
  CHECK(stats.at(0, kP1) == doctest::Approx(1.0));
  CHECK(stats.at(0, kEntropy) == doctest::Approx(0.0));
  CHECK(stats.at(0, kObs) == doctest::Approx(1.0));
  CHECK(stats.at(0, kSign) == doctest::Approx(1.0));
  CHECK(stats.at(1, kSign) == doctest::Approx(0.0));
  CHECK(stats.at(0, kReserved) == doctest::Approx(0.0));
}

TEST_CASE("hand-computed four-example episode") {
  // x1 = [1,1,0,0], y = [1,1,0,0]; independently computed by hand:
  // P(x1=1|y=1)=1, P(x1=1|y=0)=0, P(x1=1)=1/2, H = ln 2.
  Episode e = make_episode(2, {{1, 1}, {1, 0}, {0, 1}, {0, 0}}, {1, 1, 0, 0});
  LiteralStats stats = compute_stats(e);
  CHECK(stats.at(0, kP1GivenPos) == doctest::Approx(1.0));
  CHECK(stats.at(0, kP1GivenNeg) == doctest::Approx(0.0));
  CHECK(stats.at(0, kP1) == doctest::Approx(0.5));
  CHECK(stats.at(0, kEntropy) == doctest::Approx(std::log(2.0)));
  // The negation literal mirrors it.
  CHECK(stats.at(1, kP1GivenPos) == doctest::Approx(0.0));
  CHECK(stats.at(1, kP1GivenNeg) == doctest::Approx(1.0));
}

TEST_CASE("missing cells reduce the observation rate, not the truth rate") {
  // Among 10 positives, 3 missing in x1, observed ones all true.
  std::vector<std::vector<int>> cells;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    cells.push_back({i < 3 ? -1 : 1});
    labels.push_back(1);
  }
  for (int i = 0; i < 10; ++i) {
    cells.push_back({0});
    labels.push_back(0);
  }
  LiteralStats stats = compute_stats(make_episode(1, cells, labels));
  CHECK(stats.at(0, kObsPos) == doctest::Approx(0.7));
  CHECK(stats.at(0, kP1GivenPos) == doctest::Approx(1.0));
}

TEST_CASE("unobserved class defaults to 0.5 with zero observation rate") {
  std::vector<std::vector<int>> cells = {{-1}, {-1}, {1}, {0}};
  std::vector<int> labels = {1, 1, 0, 0};
  LiteralStats stats = compute_stats(make_episode(1, cells, labels));
  CHECK(stats.at(0, kObsPos) == doctest::Approx(0.0));
  CHECK(stats.at(0, kP1GivenPos) == doctest::Approx(0.5));
}

TEST_CASE("cooccurrence of independent columns is near zero") {
  Rng rng = Rng::stream(8, 0);
  Episode e = random_episode(rng, 2, 100000);
  CooccurrenceResult cooc = cooccurrence(e);
  CHECK(std::abs(cooc.c(0, 2)) < 0.01);  // x1 vs x2
}

TEST_CASE("duplicated column covariance equals p(1-p)") {
  Rng rng = Rng::stream(9, 0);
  const int m = 100000;
  Episode e;
  e.n = 2;
  e.s = 0;
  e.m = m;
  e.x.resize(static_cast<std::size_t>(m) * 2);
  e.y.resize(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    const bool v = rng.bernoulli(0.5);
    e.at(r, 0) = v ? Cell::kTrue : Cell::kFalse;
    e.at(r, 1) = v ? Cell::kTrue : Cell::kFalse;
    e.y[static_cast<std::size_t>(r)] = rng.bernoulli(0.5) ? 1 : 0;
  }
  CooccurrenceResult cooc = cooccurrence(e);
  CHECK(cooc.c(0, 2) == doctest::Approx(0.25).epsilon(0.02));
  // x vs its own negation: -Var(x).
  CHECK(cooc.c(0, 1) == doctest::Approx(-cooc.c(0, 0)));
}

TEST_CASE("variable-column permutation permutes phi rows bitwise") {
  Rng rng = Rng::stream(10, 0);
  Episode e = random_episode(rng, 6, 60, 0.2);
  LiteralStats base = compute_stats(e);

  // Rotate columns by two.
  const int n = e.n;
  Episode permuted = e;
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) perm[static_cast<std::size_t>(v)] = (v + 2) % n;
  for (int r = 0; r < e.m; ++r) {
    for (int v = 0; v < n; ++v) permuted.at(r, perm[static_cast<std::size_t>(v)]) = e.at(r, v);
  }
  LiteralStats moved = compute_stats(permuted);
  for (int v = 0; v < n; ++v) {
    for (int pol = 0; pol < 2; ++pol) {
      const int from = 2 * v + pol;
      const int to = 2 * perm[static_cast<std::size_t>(v)] + pol;
      CHECK(std::memcmp(base.phi.data() + from * LiteralStats::kFeatureCount,
                        moved.phi.data() + to * LiteralStats::kFeatureCount,
                        sizeof(double) * LiteralStats::kFeatureCount) == 0);
    }
  }
}

TEST_CASE("label swap mirrors the class-conditional blocks") {
  Rng rng = Rng::stream(12, 0);
  Episode e = random_episode(rng, 5, 48, 0.1);
  LiteralStats base = compute_stats(e);
  Episode flipped = e;
  for (auto& label : flipped.y) label = label ? 0 : 1;
  LiteralStats swapped = compute_stats(flipped);
  for (int j = 0; j < base.num_literals; ++j) {
    CHECK(base.at(j, kP1GivenPos) == swapped.at(j, kP1GivenNeg));
    CHECK(base.at(j, kP0GivenPos) == swapped.at(j, kP0GivenNeg));
    CHECK(base.at(j, kObsPos) == swapped.at(j, kObsNeg));
    CHECK(base.at(j, kP1) == swapped.at(j, kP1));
    CHECK(base.at(j, kEntropy) == swapped.at(j, kEntropy));
    CHECK(base.at(j, kCoocAbs) == swapped.at(j, kCoocAbs));
    CHECK(base.at(j, kCoocPosAbs) == swapped.at(j, kCoocNegAbs));
    CHECK(base.at(j, kCoocPos) == swapped.at(j, kCoocNeg));
    CHECK(base.at(j, kCoocDelta) == -swapped.at(j, kCoocDelta));
  }
}

TEST_CASE("feature schema order matches the documented names") {
  const auto& names = LiteralStats::feature_names();
  CHECK(std::string(names[kP1GivenPos]) == "p1_pos");
  CHECK(std::string(names[kP0GivenPos]) == "p0_pos");
  CHECK(std::string(names[kObsPos]) == "obs_pos");
  CHECK(std::string(names[kP1GivenNeg]) == "p1_neg");
  CHECK(std::string(names[kObsNeg]) == "obs_neg");
  CHECK(std::string(names[kP1]) == "p1");
  CHECK(std::string(names[kObs]) == "obs");
  CHECK(std::string(names[kEntropy]) == "entropy");
  CHECK(std::string(names[kSign]) == "sign");
  CHECK(std::string(names[kReserved]) == "reserved");
  CHECK(std::string(names[kCoocAbs]) == "c_abs");
  CHECK(std::string(names[kCoocPosAbs]) == "c_pos_abs");
  CHECK(std::string(names[kCoocPos]) == "c_pos");
  CHECK(std::string(names[kCoocNegAbs]) == "c_neg_abs");
  CHECK(std::string(names[kCoocNeg]) == "c_neg");
  CHECK(std::string(names[kCoocDelta]) == "c_delta");
  CHECK(LiteralStats::kFeatureCount == 18);

  Rng rng = Rng::stream(14, 0);
  Episode e = random_episode(rng, 3, 16);
  std::string csv = stats_to_csv(compute_stats(e));
  CHECK(csv.find("literal,p1_pos,") == 0);
}

TEST_CASE("single-class support raises SingleClassError") {
  Episode e = make_episode(1, {{1}, {0}}, {1, 1});
  CHECK_THROWS_AS(compute_stats(e), SingleClassError);
}

TEST_CASE("support-row subset restricts the statistics") {
  Episode e = make_episode(1, {{1}, {1}, {0}, {0}}, {1, 0, 1, 0});
  LiteralStats stats = compute_stats(e, {0, 1});  // only the first two rows
  CHECK(stats.at(0, kP1) == doctest::Approx(1.0));
}
