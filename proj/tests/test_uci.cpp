#include "ruleforge/uci.hpp"

#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace ruleforge;

namespace {

std::string write_temp_csv(const std::string& name, const std::string& content) {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

DatasetManifest toy_manifest(const std::string& csv_path) {
  DatasetManifest m;
  m.name = "toy";
  m.csv_path = csv_path;
  m.label_column = "label";
  m.positive_labels = {"yes"};
  m.column_types = {{"age", "numeric"}, {"color", "categorical"}, {"flat", "numeric"}};
  return m;
}

const char* kToyCsv =
    "age,color,flat,label\n"
    "10,red,5,yes\n"
    "20,blue,5,no\n"
    "30,red,5,yes\n"
    "40,?,5,no\n"
    "?,green,5,yes\n"
    "60,blue,5,no\n";

}  // namespace

TEST_CASE("binarize: medians, one-hot expansion, missing handling") {
  const std::string path = write_temp_csv("rf_toy.csv", kToyCsv);
  RawTable table = load_csv(path);
  BinarizedDataset data = binarize(table, toy_manifest(path));

  // age (numeric), color in {blue, green, red} (categorical), flat (numeric).
  REQUIRE(data.feature_names.size() == 5);
  CHECK(data.feature_names[0] == "age_gt_median");
  CHECK(data.feature_names[1] == "color_blue");
  CHECK(data.feature_names[2] == "color_green");
  CHECK(data.feature_names[3] == "color_red");
  CHECK(data.feature_names[4] == "flat_gt_median");

  // Median of observed ages {10,20,30,40,60} is 30; strict > binarization.
  CHECK(data.at(0, 0) == Cell::kFalse);   // 10
  CHECK(data.at(2, 0) == Cell::kFalse);   // 30 == median -> 0
  CHECK(data.at(3, 0) == Cell::kTrue);    // 40
  CHECK(data.at(4, 0) == Cell::kUnknown); // missing age

  // Missing categorical cell is unknown in all its indicators.
  CHECK(data.at(3, 1) == Cell::kUnknown);
  CHECK(data.at(3, 2) == Cell::kUnknown);
  CHECK(data.at(3, 3) == Cell::kUnknown);
  CHECK(data.at(0, 3) == Cell::kTrue);   // red
  CHECK(data.at(0, 1) == Cell::kFalse);  // not blue

  // Constant numeric column binarizes to all zeros (strict inequality).
  for (int r = 0; r < data.num_rows; ++r) CHECK(data.at(r, 4) == Cell::kFalse);

  CHECK(data.y[0] == 1);
  CHECK(data.y[1] == 0);
}

TEST_CASE("binarize is label-blind") {
  const std::string path = write_temp_csv("rf_toy2.csv", kToyCsv);
  RawTable table = load_csv(path);
  DatasetManifest m = toy_manifest(path);
  BinarizedDataset a = binarize(table, m);
  m.positive_labels = {"no"};  // swap the label convention
  BinarizedDataset b = binarize(table, m);
  CHECK(a.x == b.x);
  CHECK(a.feature_names == b.feature_names);
}

TEST_CASE("expected feature count is enforced") {
  const std::string path = write_temp_csv("rf_toy3.csv", kToyCsv);
  RawTable table = load_csv(path);
  DatasetManifest m = toy_manifest(path);
  m.expected_n = 4;
  CHECK_THROWS(binarize(table, m));
  m.expected_n = 5;
  CHECK_NOTHROW(binarize(table, m));
}

TEST_CASE("unparseable numeric cells are an error") {
  const std::string path = write_temp_csv(
      "rf_bad.csv", "v,label\nabc,yes\n2,no\n");
  RawTable table = load_csv(path);
  DatasetManifest m;
  m.name = "bad";
  m.csv_path = path;
  m.label_column = "label";
  m.positive_labels = {"yes"};
  m.column_types = {{"v", "numeric"}};
  CHECK_THROWS(binarize(table, m));
}

namespace {

BinarizedDataset synthetic_dataset(int rows, std::uint64_t seed) {
  // y = x0 AND x1, plus two noise features; no missing cells.
  BinarizedDataset data;
  data.name = "synthetic";
  data.num_features = 4;
  data.num_rows = rows;
  data.feature_names = {"f0", "f1", "f2", "f3"};
  data.x.resize(static_cast<std::size_t>(rows) * 4);
  data.y.resize(static_cast<std::size_t>(rows));
  Rng rng = Rng::stream(seed, 0);
  for (int r = 0; r < rows; ++r) {
    bool v0 = rng.bernoulli(0.5), v1 = rng.bernoulli(0.5);
    data.x[static_cast<std::size_t>(r) * 4 + 0] = v0 ? Cell::kTrue : Cell::kFalse;
    data.x[static_cast<std::size_t>(r) * 4 + 1] = v1 ? Cell::kTrue : Cell::kFalse;
    data.x[static_cast<std::size_t>(r) * 4 + 2] = rng.bernoulli(0.5) ? Cell::kTrue : Cell::kFalse;
    data.x[static_cast<std::size_t>(r) * 4 + 3] = rng.bernoulli(0.5) ? Cell::kTrue : Cell::kFalse;
    data.y[static_cast<std::size_t>(r)] = (v0 && v1) ? 1 : 0;
  }
  data.raw_labels.assign(static_cast<std::size_t>(rows), "");
  return data;
}

}  // namespace

TEST_CASE("cv_split: stratified, balanced, disjoint, exhaustive") {
  BinarizedDataset data = synthetic_dataset(768, 5);
  std::vector<int> folds = cv_split(data, 5, 17);
  REQUIRE(folds.size() == static_cast<std::size_t>(data.num_rows));

  std::vector<int> sizes(5, 0);
  std::vector<int> positives(5, 0);
  for (int r = 0; r < data.num_rows; ++r) {
    REQUIRE(folds[static_cast<std::size_t>(r)] >= 0);
    REQUIRE(folds[static_cast<std::size_t>(r)] < 5);
    sizes[static_cast<std::size_t>(folds[static_cast<std::size_t>(r)])]++;
    if (data.y[static_cast<std::size_t>(r)]) {
      positives[static_cast<std::size_t>(folds[static_cast<std::size_t>(r)])]++;
    }
  }
  int min_size = sizes[0], max_size = sizes[0];
  for (int s : sizes) {
    min_size = std::min(min_size, s);
    max_size = std::max(max_size, s);
  }
  CHECK(max_size - min_size <= 1);

  // Stratification: per-fold positive rate close to the global rate.
  double global = 0.0;
  for (auto label : data.y) global += label;
  global /= data.num_rows;
  for (int f = 0; f < 5; ++f) {
    const double rate = static_cast<double>(positives[static_cast<std::size_t>(f)]) /
                        sizes[static_cast<std::size_t>(f)];
    CHECK(std::abs(rate - global) < 0.02);
  }

  // Determinism.
  CHECK(cv_split(data, 5, 17) == folds);

  // A class smaller than the fold count is an error.
  BinarizedDataset tiny = synthetic_dataset(103, 6);
  for (int r = 0; r < tiny.num_rows; ++r) tiny.y[static_cast<std::size_t>(r)] = r < 3 ? 1 : 0;
  CHECK_THROWS(cv_split(tiny, 5, 17));
}

TEST_CASE("hard-rule prediction treats unknowns as 0.5") {
  BinarizedDataset data;
  data.num_features = 2;
  data.num_rows = 3;
  data.feature_names = {"a", "b"};
  data.x = {Cell::kUnknown, Cell::kTrue,    // row 0
            Cell::kUnknown, Cell::kFalse,   // row 1
            Cell::kFalse,   Cell::kTrue};   // row 2
  data.y = {1, 0, 0};

  DnfRule single = parse_rule("(x1)");
  CHECK(predict_with_rule(single, data, 0));        // 0.5 -> positive at the tie
  DnfRule both = parse_rule("(x1 AND x2)");
  CHECK(predict_with_rule(both, data, 0));          // 0.5 * 1 = 0.5 -> positive
  CHECK_FALSE(predict_with_rule(both, data, 1));    // 0.5 * 0 = 0 -> negative
  CHECK_FALSE(predict_with_rule(both, data, 2));    // 0 -> negative
  CHECK_FALSE(predict_with_rule(DnfRule(), data, 0));  // empty rule is constant false
}

TEST_CASE("zero-shot evaluation runs mechanically with an untrained net") {
  ModelConfig cfg;
  cfg.d = 24;
  cfg.slots = 4;
  cfg.heads = 4;
  cfg.decoder_layers = 1;
  cfg.key_bottleneck = 8;
  cfg.n_train = 6;
  ParamStore store;
  init_params(store, cfg, 3);
  InferenceNet net(store, cfg, 3);

  BinarizedDataset data = synthetic_dataset(120, 9);
  UciResult result = zero_shot_eval(net, data, 5, 17);
  CHECK(result.folds.size() == 5);
  for (const FoldResult& fr : result.folds) {
    if (fr.skipped) continue;
    CHECK(fr.accuracy >= 0.0);
    CHECK(fr.accuracy <= 1.0);
    CHECK_NOTHROW(parse_rule(fr.rule_text, &data.feature_names));
  }
  CHECK(result.majority_rate >= 0.5);

  // Deterministic for a fixed seed.
  UciResult again = zero_shot_eval(net, data, 5, 17);
  CHECK(again.mean_accuracy == result.mean_accuracy);
  for (std::size_t i = 0; i < result.folds.size(); ++i) {
    CHECK(again.folds[i].rule_text == result.folds[i].rule_text);
  }
}
