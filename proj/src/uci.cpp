#include "ruleforge/uci.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ruleforge/literal_stats.hpp"

namespace ruleforge {

DatasetManifest DatasetManifest::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  DatasetManifest m;
  m.name = j.value("name", "");
  m.csv_path = j.at("csv").get<std::string>();
  m.label_column = j.at("label_column").get<std::string>();
  for (const auto& v : j.value("positive_labels", nlohmann::json::array())) {
    m.positive_labels.push_back(v.get<std::string>());
  }
  for (const auto& v : j.value("classes", nlohmann::json::array())) {
    m.classes.push_back(v.get<std::string>());
  }
  if (j.contains("columns")) {
    for (const auto& [key, value] : j.at("columns").items()) {
      m.column_types[key] = value.get<std::string>();
    }
  }
  m.expected_n = j.value("expected_n", -1);
  // Relative CSV paths resolve against the manifest location.
  std::filesystem::path csv(m.csv_path);
  if (csv.is_relative()) {
    m.csv_path = (std::filesystem::path(path).parent_path() / csv).string();
  }
  return m;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (std::isspace(static_cast<unsigned char>(c))) c = '_';
  }
  return out;
}

}  // namespace

RawTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv " + path);
  RawTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.columns = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != table.columns.size()) {
      throw std::runtime_error("csv row width mismatch in " + path);
    }
    for (std::string& f : fields) {
      if (f == "?") f.clear();
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

double BinarizedDataset::majority_rate() const {
  if (y.empty()) return 0.0;
  std::int64_t pos = 0;
  for (auto label : y) pos += label ? 1 : 0;
  const double rate = static_cast<double>(pos) / static_cast<double>(y.size());
  return std::max(rate, 1.0 - rate);
}

BinarizedDataset binarize(const RawTable& table, const DatasetManifest& manifest) {
  BinarizedDataset out;
  out.name = manifest.name;
  out.num_rows = static_cast<int>(table.rows.size());
  if (out.num_rows == 0) throw std::runtime_error("binarize: no rows");

  int label_col = -1;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (table.columns[c] == manifest.label_column) label_col = static_cast<int>(c);
  }
  if (label_col < 0) throw std::runtime_error("label column not found: " + manifest.label_column);

  // Labels.
  out.y.resize(static_cast<std::size_t>(out.num_rows), 0);
  out.raw_labels.resize(static_cast<std::size_t>(out.num_rows));
  bool any_pos = false, any_neg = false;
  for (int r = 0; r < out.num_rows; ++r) {
    const std::string& label = table.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(label_col)];
    out.raw_labels[static_cast<std::size_t>(r)] = label;
    const bool positive = std::find(manifest.positive_labels.begin(),
                                    manifest.positive_labels.end(),
                                    label) != manifest.positive_labels.end();
    out.y[static_cast<std::size_t>(r)] = positive ? 1 : 0;
    (positive ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg) throw std::runtime_error("binarize: single-class labels");

  // Feature expansion.
  struct Derived {
    int source_col;
    bool numeric;
    double median;          // numeric columns
    std::string category;   // categorical columns
  };
  std::vector<Derived> derived;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (static_cast<int>(c) == label_col) continue;
    const std::string& col = table.columns[c];
    std::string type = "auto";
    auto it = manifest.column_types.find(col);
    if (it != manifest.column_types.end()) type = it->second;

    std::vector<double> observed;
    bool all_numeric = true;
    for (const auto& row : table.rows) {
      const std::string& cell = row[c];
      if (cell.empty()) continue;
      double v = 0.0;
      if (parse_double(cell, v)) {
        observed.push_back(v);
      } else {
        all_numeric = false;
      }
    }
    if (type == "auto") type = (all_numeric && !observed.empty()) ? "numeric" : "categorical";

    if (type == "numeric") {
      if (!all_numeric) throw std::runtime_error("unparseable numeric cell in column " + col);
      if (observed.empty()) throw std::runtime_error("empty numeric column " + col);
      std::sort(observed.begin(), observed.end());
      const std::size_t n = observed.size();
      const double median = (n % 2 == 1) ? observed[n / 2]
                                         : 0.5 * (observed[n / 2 - 1] + observed[n / 2]);
      derived.push_back({static_cast<int>(c), true, median, ""});
      out.feature_names.push_back(sanitize(col) + "_gt_median");
    } else {
      std::vector<std::string> categories;
      for (const auto& row : table.rows) {
        if (!row[c].empty()) categories.push_back(row[c]);
      }
      std::sort(categories.begin(), categories.end());
      categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
      if (categories.empty()) throw std::runtime_error("empty categorical column " + col);
      for (const std::string& cat : categories) {
        derived.push_back({static_cast<int>(c), false, 0.0, cat});
        out.feature_names.push_back(sanitize(col) + "_" + sanitize(cat));
      }
    }
  }
  out.num_features = static_cast<int>(derived.size());
  if (manifest.expected_n >= 0 && out.num_features != manifest.expected_n) {
    throw std::runtime_error("binarize: expected " + std::to_string(manifest.expected_n) +
                             " features for " + manifest.name + ", got " +
                             std::to_string(out.num_features));
  }

  out.x.assign(static_cast<std::size_t>(out.num_rows) * out.num_features, Cell::kUnknown);
  for (int r = 0; r < out.num_rows; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    for (int f = 0; f < out.num_features; ++f) {
      const Derived& d = derived[static_cast<std::size_t>(f)];
      const std::string& cell = row[static_cast<std::size_t>(d.source_col)];
      Cell value = Cell::kUnknown;
      if (!cell.empty()) {
        if (d.numeric) {
          double v = 0.0;
          parse_double(cell, v);
          value = v > d.median ? Cell::kTrue : Cell::kFalse;
        } else {
          value = (cell == d.category) ? Cell::kTrue : Cell::kFalse;
        }
      }
      out.x[static_cast<std::size_t>(r) * out.num_features + f] = value;
    }
  }
  return out;
}

std::vector<int> cv_split(const BinarizedDataset& dataset, int folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cv_split: folds must be >= 2");
  std::vector<int> positives, negatives;
  for (int r = 0; r < dataset.num_rows; ++r) {
    (dataset.y[static_cast<std::size_t>(r)] ? positives : negatives).push_back(r);
  }
  if (static_cast<int>(positives.size()) < folds || static_cast<int>(negatives.size()) < folds) {
    throw std::runtime_error("cv_split: a class has fewer members than folds");
  }
  Rng rng = Rng::stream(seed, 0xF01D5ull);
  auto shuffle = [&rng](std::vector<int>& rows) {
    for (std::size_t i = rows.size(); i > 1; --i) {
      const std::size_t j = rng.next_below(i);
      std::swap(rows[i - 1], rows[j]);
    }
  };
  shuffle(positives);
  shuffle(negatives);
  std::vector<int> assignment(static_cast<std::size_t>(dataset.num_rows), 0);
  int cursor = 0;  // shared across classes so fold sizes stay within one
  for (const auto* group : {&positives, &negatives}) {
    for (int row : *group) {
      assignment[static_cast<std::size_t>(row)] = cursor % folds;
      ++cursor;
    }
  }
  return assignment;
}

Episode dataset_to_episode(const BinarizedDataset& dataset) {
  Episode episode;
  episode.n = dataset.num_features;
  episode.s = 0;
  episode.m = dataset.num_rows;
  episode.x = dataset.x;
  episode.y = dataset.y;
  return episode;
}

bool predict_with_rule(const DnfRule& rule, const BinarizedDataset& dataset, int row) {
  SoftAssignment lits;
  lits.literal_values.resize(static_cast<std::size_t>(2 * dataset.num_features));
  for (int f = 0; f < dataset.num_features; ++f) {
    const Cell c = dataset.at(row, f);
    double v = 0.5;
    if (c != Cell::kUnknown) v = (c == Cell::kTrue) ? 1.0 : 0.0;
    lits.literal_values[static_cast<std::size_t>(2 * f)] = v;
    lits.literal_values[static_cast<std::size_t>(2 * f + 1)] =
        (c == Cell::kUnknown) ? 0.5 : 1.0 - v;
  }
  HardGates gates = hard_gates(rule, dataset.num_features);
  SoftEval eval = eval_soft(gates.z, gates.num_slots, gates.w, lits);
  return eval.prediction >= 0.5;
}

UciResult zero_shot_eval(const InferenceNet& net, const BinarizedDataset& dataset, int folds,
                         std::uint64_t seed) {
  UciResult result;
  result.dataset = dataset.name;
  result.majority_rate = dataset.majority_rate();
  std::vector<int> assignment = cv_split(dataset, folds, seed);
  Episode episode = dataset_to_episode(dataset);

  std::vector<double> accuracies;
  for (int fold = 0; fold < folds; ++fold) {
    FoldResult fr;
    fr.fold = fold;
    std::vector<int> support;
    std::vector<int> eval_rows;
    for (int r = 0; r < dataset.num_rows; ++r) {
      (assignment[static_cast<std::size_t>(r)] == fold ? support : eval_rows).push_back(r);
    }
    fr.support_rows = static_cast<int>(support.size());
    fr.eval_rows = static_cast<int>(eval_rows.size());
    bool any_pos = false, any_neg = false;
    for (int r : support) {
      (dataset.y[static_cast<std::size_t>(r)] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) {
      fr.skipped = true;  // single-class support fold
      result.folds.push_back(std::move(fr));
      continue;
    }
    fr.rule = net.induce(episode, support);
    fr.rule_text = print_rule(fr.rule, &dataset.feature_names);
    int correct = 0;
    for (int r : eval_rows) {
      const bool pred = predict_with_rule(fr.rule, dataset, r);
      if (pred == (dataset.y[static_cast<std::size_t>(r)] != 0)) ++correct;
    }
    fr.accuracy = static_cast<double>(correct) / fr.eval_rows;
    accuracies.push_back(fr.accuracy);
    result.folds.push_back(std::move(fr));
  }
  if (!accuracies.empty()) {
    double mean = 0.0;
    for (double a : accuracies) mean += a;
    mean /= static_cast<double>(accuracies.size());
    double var = 0.0;
    for (double a : accuracies) var += (a - mean) * (a - mean);
    if (accuracies.size() > 1) var /= static_cast<double>(accuracies.size() - 1);
    result.mean_accuracy = mean;
    result.std_accuracy = std::sqrt(var);
  }
  return result;
}

std::map<std::string, UciResult> one_vs_rest_eval(const InferenceNet& net, const RawTable& table,
                                                  const DatasetManifest& manifest, int folds,
                                                  std::uint64_t seed) {
  std::map<std::string, UciResult> results;
  std::vector<std::string> classes = manifest.classes;
  if (classes.empty()) classes = manifest.positive_labels;
  for (const std::string& cls : classes) {
    DatasetManifest one = manifest;
    one.positive_labels = {cls};
    one.name = manifest.name + ":" + cls;
    BinarizedDataset dataset = binarize(table, one);
    results[cls] = zero_shot_eval(net, dataset, folds, seed);
  }
  return results;
}

}  // namespace ruleforge
