#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ruleforge/episode.hpp"
#include "ruleforge/model.hpp"

namespace ruleforge {

struct DatasetManifest {
  std::string name;
  std::string csv_path;  // relative paths resolve against the manifest's directory
  std::string label_column;
  std::vector<std::string> positive_labels;  // label values mapped to y=1
  std::vector<std::string> classes;          // optional one-vs-rest class list
  std::map<std::string, std::string> column_types;  // "numeric" | "categorical"; absent -> auto
  int expected_n = -1;

  static DatasetManifest from_json_file(const std::string& path);
};

struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // "" denotes missing ('?' or empty)
};

// Header row required; '?' or the empty string marks a missing cell.
RawTable load_csv(const std::string& path);

struct BinarizedDataset {
  std::string name;
  std::vector<std::string> feature_names;  // <col>_gt_median or <col>_<category>
  int num_features = 0;
  int num_rows = 0;
  std::vector<Cell> x;  // num_rows x num_features
  std::vector<std::uint8_t> y;
  std::vector<std::string> raw_labels;  // per row, for one-vs-rest reductions

  Cell at(int row, int col) const {
    return x[static_cast<std::size_t>(row) * num_features + col];
  }
  double majority_rate() const;
};

// Median-binarizes numeric columns (strict >, medians over observed values
// of the full dataset) and one-hot expands categorical columns; missing
// source cells become unknown in every derived feature.
BinarizedDataset binarize(const RawTable& table, const DatasetManifest& manifest);

// Stratified fold assignment (values 0..folds-1). Throws when a class has
// fewer members than folds.
std::vector<int> cv_split(const BinarizedDataset& dataset, int folds, std::uint64_t seed);

struct FoldResult {
  int fold = 0;
  bool skipped = false;
  double accuracy = 0.0;
  std::string rule_text;
  DnfRule rule;
  int support_rows = 0;
  int eval_rows = 0;
};

struct UciResult {
  std::string dataset;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double majority_rate = 0.0;
  std::vector<FoldResult> folds;
};

// Zero-shot protocol: in each round one fold is the support set (statistics
// and rule induction) and the remaining rows are scored with the induced
// hard rule via soft execution, unknown literals valued 0.5, threshold 0.5.
UciResult zero_shot_eval(const InferenceNet& net, const BinarizedDataset& dataset,
                         int folds = 5, std::uint64_t seed = 17);

// Per-class one-vs-rest rules (Appendix-style listing for multi-class data).
std::map<std::string, UciResult> one_vs_rest_eval(const InferenceNet& net,
                                                  const RawTable& table,
                                                  const DatasetManifest& manifest,
                                                  int folds = 5, std::uint64_t seed = 17);

// Episode view of a binarized dataset (s = 0, rule empty).
Episode dataset_to_episode(const BinarizedDataset& dataset);

// Hard-rule prediction with unknowns as 0.5 (prediction >= 0.5 is positive).
bool predict_with_rule(const DnfRule& rule, const BinarizedDataset& dataset, int row);

}  // namespace ruleforge
