// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 iff all pass.
//
// Trained artifacts (the desk-scale checkpoint and the slot-balance ablation
// run) are reused from --artifacts when present; pass --train to retrain
// them from scratch with the desk configuration.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "ruleforge/episode.hpp"
#include "ruleforge/eval_harness.hpp"
#include "ruleforge/gradcheck.hpp"
#include "ruleforge/literal_stats.hpp"
#include "ruleforge/trainer.hpp"
#include "ruleforge/uci.hpp"
#include "ruleforge/util.hpp"

namespace fs = std::filesystem;
using namespace ruleforge;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
  outcomes.push_back({id, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;  // desk defaults: batch 256, 2000 steps
  cfg.seed = seed;
  return cfg;
}

// ---- criterion 1: hard-gate execution reproduces boolean evaluation ----
void criterion_1() {
  const auto start = Clock::now();
  Rng rng = Rng::stream(0xACC1ull, 0);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(9));
    DnfRule rule = sample_rule(rng, n, 4, std::min(3, n));
    std::vector<std::uint8_t> assignment(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) assignment[static_cast<std::size_t>(v)] = rng.bernoulli(0.5);
    HardGates gates = hard_gates(rule, n);
    SoftEval eval = eval_soft(gates.z, gates.num_slots, gates.w,
                              SoftAssignment::from_booleans(assignment));
    const bool expected = eval_boolean(rule, assignment);
    const bool hard_valid = eval.prediction == 0.0 || eval.prediction == 1.0;
    if (!hard_valid || (eval.prediction == 1.0) != expected) ++mismatches;
  }
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "t-norm/boolean agreement on 10^4 pairs, " << mismatches << " mismatches, "
         << secs << " s";
  report(1, mismatches == 0 && secs < 10.0, detail.str());
}

// ---- criterion 2: spurious construction statistics ----
void criterion_2() {
  const auto start = Clock::now();
  GenConfig cfg;
  cfg.seed = 0xACC2ull;
  std::int64_t pos = 0, neg = 0;
  std::vector<std::int64_t> pos_ones(3, 0), neg_ones(3, 0);
  for (int e = 0; e < 1000; ++e) {
    Episode episode = gen_episode(cfg, static_cast<std::uint64_t>(e));
    for (int row = 0; row < episode.m; ++row) {
      const bool y = episode.y[static_cast<std::size_t>(row)] != 0;
      (y ? pos : neg)++;
      for (int s = 0; s < episode.s; ++s) {
        if (episode.at(row, episode.n + s) == Cell::kTrue) {
          (y ? pos_ones : neg_ones)[static_cast<std::size_t>(s)]++;
        }
      }
    }
  }
  double worst_marginal = 0.0;
  for (int s = 0; s < 3; ++s) {
    const double gap = std::abs(
        static_cast<double>(pos_ones[static_cast<std::size_t>(s)]) / pos -
        static_cast<double>(neg_ones[static_cast<std::size_t>(s)]) / neg);
    worst_marginal = std::max(worst_marginal, gap);
  }

  // Within-environment conditional rate from the construction op directly
  // (gen_episode shuffles rows, hiding the boundary by design).
  Rng rng = Rng::stream(0xACC2Bull, 0);
  std::int64_t env_pos = 0, env_pos_ones = 0;
  for (int e = 0; e < 1000; ++e) {
    Episode episode;
    episode.n = 2;
    episode.s = 0;
    episode.m = 36;
    episode.x.assign(36 * 2, Cell::kFalse);
    episode.y.resize(36);
    for (int row = 0; row < 36; ++row) {
      episode.y[static_cast<std::size_t>(row)] = rng.bernoulli(0.5) ? 1 : 0;
    }
    attach_spurious(episode, 1, 0.3, rng);
    for (int row = 0; row < 18; ++row) {
      if (episode.y[static_cast<std::size_t>(row)]) {
        ++env_pos;
        if (episode.at(row, 2) == Cell::kTrue) ++env_pos_ones;
      }
    }
  }
  const double env_rate = static_cast<double>(env_pos_ones) / env_pos;
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "marginal gap " << worst_marginal << " (< 0.02), env-1 conditional " << env_rate
         << " (0.30 +/- 0.03), " << secs << " s";
  report(2, worst_marginal < 0.02 && std::abs(env_rate - 0.3) < 0.03 && secs < 30.0,
         detail.str());
}

// ---- criterion 3: gradient fidelity ----
void criterion_3() {
  const auto start = Clock::now();
  std::string log;
  GradCheckReport r = run_gradient_checks(1, 100, &log);
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "full-model FD: max rel " << r.max_rel_error << " (< 1e-2), median "
         << r.median_rel_error << " (< 1e-3), " << r.checked << " params, operators "
         << (r.operators_ok ? "ok" : "FAILED") << ", " << secs << " s";
  report(3, r.pass() && secs < 120.0, detail.str());
}

// ---- criteria 4-6, 8-10 need the desk checkpoint ----

struct Artifacts {
  std::string desk_dir;
  std::string ablate_dir;
  bool ready = false;
};

Artifacts ensure_artifacts(const std::string& artifacts_dir, bool force_train,
                           int override_steps, int override_batch) {
  Artifacts art;
  art.desk_dir = artifacts_dir + "/desk";
  art.ablate_dir = artifacts_dir + "/ablate_balance";
  const bool have_desk = fs::exists(art.desk_dir + "/checkpoint.json") &&
                         fs::exists(art.desk_dir + "/slots.csv");
  const bool have_ablate = fs::exists(art.ablate_dir + "/slots.csv");
  if (have_desk && have_ablate && !force_train) {
    art.ready = true;
    return art;
  }
  std::cout << "[acceptance] training desk model (this is the slow path)" << std::endl;
  TrainConfig cfg = desk_config(1);
  if (override_steps > 0) cfg.steps = override_steps;
  if (override_batch > 0) cfg.batch_episodes = override_batch;
  int last = -100;
  train(cfg, art.desk_dir, [&](const StepStats& s) {
    if (s.step - last >= 100) {
      last = s.step;
      std::cout << "[desk] step " << s.step << " total " << s.losses.total << std::endl;
    }
  });
  std::cout << "[acceptance] training slot-balance ablation" << std::endl;
  TrainConfig ab = cfg;
  ab.loss = ablation_variant(ab.loss, "slot_balance");
  last = -100;
  train(ab, art.ablate_dir, [&](const StepStats& s) {
    if (s.step - last >= 100) {
      last = s.step;
      std::cout << "[ablate] step " << s.step << " total " << s.losses.total << std::endl;
    }
  });
  art.ready = true;
  return art;
}

void criterion_4(const InferenceNet& net) {
  const auto start = Clock::now();
  GridOptions opts;
  opts.episodes_per_cell = 50;
  opts.seeds = 4;  // 200 episodes per cell
  opts.base_seed = 0xACC4ull;
  ExperimentReport report4 = complexity_grid(net, opts);
  const CellReport* k1l1 = report4.find(1, 1);
  bool monotone = true;
  for (int l : opts.clause_lengths) {
    double prev = 2.0;
    for (int k : opts.clause_counts) {
      const CellReport* cell = report4.find(k, l);
      if (cell->logical_match_rate > prev + 1e-12) monotone = false;
      prev = cell->logical_match_rate;
    }
  }
  bool acc_dominates = true;
  for (const CellReport& cell : report4.cells) {
    if (cell.accuracy + 1e-9 < cell.logical_match_rate) acc_dominates = false;
  }
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "K=1,L=1 logical match " << k1l1->logical_match_rate
         << " (>= 0.90) on 200 episodes; non-increasing in K at each L: "
         << (monotone ? "yes" : "no") << "; accuracy >= match everywhere: "
         << (acc_dominates ? "yes" : "no") << "; " << secs << " s";
  report(4, k1l1->logical_match_rate >= 0.90 && monotone && acc_dominates && secs < 300.0,
         detail.str());
}

void criterion_5(const InferenceNet& net) {
  GridOptions opts;
  opts.episodes_per_cell = 50;
  opts.seeds = 3;
  opts.base_seed = 0xACC5ull;
  ExperimentReport sweep = noise_sweep(net, {0.0, 0.1, 0.2, 0.3}, opts);
  const double clean = sweep.cells.front().accuracy;
  const double noisy = sweep.cells.back().accuracy;
  const double drop = (clean - noisy) * 100.0;
  std::ostringstream detail;
  detail << "accuracy " << clean * 100 << "% at 0% noise -> " << noisy * 100
         << "% at 30% noise; drop " << drop << " pts (<= 10)";
  report(5, drop <= 10.0, detail.str());
}

void criterion_6(const InferenceNet& net) {
  GridOptions opts;
  opts.episodes_per_cell = 34;
  opts.seeds = 3;  // ~100 episodes per cell over 25 cells
  opts.base_seed = 0xACC6ull;
  ExperimentReport sweep = spurious_sweep(net, {0, 4, 8, 16, 32}, {0.1, 0.3, 0.5, 0.7, 0.9},
                                          opts);
  double min_acc = 1.0;
  const CellReport* worst = nullptr;
  for (const CellReport& cell : sweep.cells) {
    if (cell.accuracy < min_acc) {
      min_acc = cell.accuracy;
      worst = &cell;
    }
  }
  std::ostringstream detail;
  detail << "min cell accuracy " << min_acc * 100 << "% (>= 85%) at D=" << worst->distractors
         << ", rho=" << worst->rho;
  report(6, min_acc >= 0.85, detail.str());
}

void criterion_7(const Artifacts& art) {
  std::vector<double> full_usage = tail_slot_usage(art.desk_dir + "/slots.csv");
  std::vector<double> ablate_usage = tail_slot_usage(art.ablate_dir + "/slots.csv");
  const double full_var = slot_usage_cv2(full_usage);
  const double ablate_var = slot_usage_cv2(ablate_usage);
  std::ostringstream detail;
  detail << "normalized slot-usage variance: full " << full_var << " (< 0.01), -balance "
         << ablate_var << " (>= 10x full)";
  report(7, full_var < 0.01 && ablate_var >= 10.0 * full_var, detail.str());
}

void criterion_8(const InferenceNet& net, const std::string& data_dir) {
  struct Target {
    const char* manifest;
    double paper;
  };
  const Target targets[] = {{"diabetes.manifest.json", 68.0},
                            {"breast_cancer.manifest.json", 88.3}};
  bool all_ok = true;
  std::ostringstream detail;
  for (const Target& target : targets) {
    DatasetManifest manifest = DatasetManifest::from_json_file(
        data_dir + "/" + target.manifest);
    RawTable table = load_csv(manifest.csv_path);
    BinarizedDataset data = binarize(table, manifest);
    UciResult result = zero_shot_eval(net, data, 5, 17);
    const double acc = result.mean_accuracy * 100.0;
    const double majority = result.majority_rate * 100.0;
    bool nonempty = true, parses = true;
    for (const FoldResult& fr : result.folds) {
      if (fr.skipped) continue;
      nonempty = nonempty && !fr.rule.empty();
      try {
        (void)parse_rule(fr.rule_text, &data.feature_names);
      } catch (...) {
        parses = false;
      }
    }
    const bool in_window = std::abs(acc - target.paper) <= 8.0;
    const bool above_floor = acc >= majority - 10.0;
    all_ok = all_ok && in_window && above_floor && nonempty && parses;
    detail << data.name << " " << acc << "% (target " << target.paper << " +/- 8, majority "
           << majority << "%), rules " << (nonempty ? "non-empty" : "EMPTY") << "/"
           << (parses ? "parse" : "NO-PARSE") << "; ";
  }
  report(8, all_ok, detail.str());
}

void criterion_9(const InferenceNet& net) {
  ScalingOptions opts;
  ScalingReport sr = scaling_bench(net, opts);
  std::ostringstream detail;
  detail << "latency(N=512)/latency(N=16) = " << sr.latency_ratio_n
         << " (< 32); latency spread over M = " << sr.latency_spread_m
         << " (< 3); memory exponent = " << sr.memory_exponent << " (in [1.5, 2.5])";
  report(9, sr.latency_ratio_n < 32.0 && sr.latency_spread_m < 3.0 &&
             sr.memory_exponent >= 1.5 && sr.memory_exponent <= 2.5,
         detail.str());
}

void criterion_10(const InferenceNet& net, const ModelConfig& cfg, const ParamStore& store) {
  const auto start = Clock::now();
  bool slot_perm_ok = true;
  {
    GenConfig gen;
    gen.seed = 0xACC10ull;
    Episode episode = gen_episode(gen, 0);
    LiteralStats stats = compute_stats(episode);
    ModelInput input = build_model_input(episode, stats);
    GateValues base = net.gates(input);
    DnfRule base_rule = net.extract_rule(base, episode.width());

    ParamStore permuted;
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& e = store.entry(static_cast<int>(i));
      permuted.add(e.name, e.value);
    }
    const int T = cfg.slots;
    for (const char* name : {"film.gamma", "film.beta", "slot.query"}) {
      Tensor& dst = permuted.value(name);
      const Tensor src = store.value(name);
      for (int k = 0; k < T; ++k) {
        for (int c = 0; c < cfg.d; ++c) dst((k + 3) % T, c) = src(k, c);
      }
    }
    InferenceNet net2(permuted, cfg, net.seed());
    DnfRule moved_rule = net2.extract_rule(net2.gates(input), episode.width());
    slot_perm_ok = moved_rule == base_rule;
  }

  bool phi_perm_ok = true;
  {
    GenConfig gen;
    gen.seed = 0xACC10Bull;
    gen.missing_rate = 0.15;
    Episode episode = gen_episode(gen, 1);
    LiteralStats base = compute_stats(episode);
    const int width = episode.width();
    Episode permuted = episode;
    std::vector<int> perm(static_cast<std::size_t>(width));
    for (int v = 0; v < width; ++v) perm[static_cast<std::size_t>(v)] = (v + 5) % width;
    for (int r = 0; r < episode.m; ++r) {
      for (int v = 0; v < width; ++v) {
        permuted.at(r, perm[static_cast<std::size_t>(v)]) = episode.at(r, v);
      }
    }
    LiteralStats moved = compute_stats(permuted);
    for (int v = 0; v < width && phi_perm_ok; ++v) {
      for (int pol = 0; pol < 2; ++pol) {
        const int from = 2 * v + pol;
        const int to = 2 * perm[static_cast<std::size_t>(v)] + pol;
        if (std::memcmp(base.phi.data() + from * LiteralStats::kFeatureCount,
                        moved.phi.data() + to * LiteralStats::kFeatureCount,
                        sizeof(double) * LiteralStats::kFeatureCount) != 0) {
          phi_perm_ok = false;
        }
      }
    }
  }

  bool train_repro_ok = true;
  {
    TrainConfig cfg2;
    cfg2.steps = 3;
    cfg2.batch_episodes = 8;
    cfg2.chunk_episodes = 4;
    cfg2.checkpoint_every = 0;
    cfg2.seed = 0xACC10Cull;
    cfg2.gen.n_min = 4;
    cfg2.gen.n_max = 5;
    cfg2.gen.m_min = 10;
    cfg2.gen.m_max = 12;
    cfg2.gen.k_max = 2;
    cfg2.gen.l_max = 2;
    cfg2.gen.s_spurious = 1;
    cfg2.model.d = 24;
    cfg2.model.slots = 4;
    cfg2.model.decoder_layers = 1;
    cfg2.model.key_bottleneck = 8;
    cfg2.model.n_train = 6;
    const std::string dir_a = (fs::temp_directory_path() / "rf_acc_repro_a").string();
    const std::string dir_b = (fs::temp_directory_path() / "rf_acc_repro_b").string();
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    TrainOutput a = train(cfg2, dir_a);
    TrainOutput b = train(cfg2, dir_b);
    std::ifstream fa(a.checkpoint_stem + ".bin", std::ios::binary);
    std::ifstream fb(b.checkpoint_stem + ".bin", std::ios::binary);
    std::vector<char> ba(std::istreambuf_iterator<char>(fa), {});
    std::vector<char> bb(std::istreambuf_iterator<char>(fb), {});
    train_repro_ok = !ba.empty() && ba == bb;
  }

  bool pruning_ok = true;
  {
    GenConfig gen;
    gen.seed = 0xACC10Dull;
    for (int e = 0; e < 20 && pruning_ok; ++e) {
      Episode episode = gen_episode(gen, static_cast<std::uint64_t>(e));
      DnfRule rule = net.induce(episode);
      for (const Clause& clause : rule.clauses()) {
        for (std::size_t i = 1; i < clause.literals().size(); ++i) {
          if (clause.literals()[i].variable == clause.literals()[i - 1].variable) {
            pruning_ok = false;
          }
        }
      }
    }
  }

  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "slot-permutation rule set " << (slot_perm_ok ? "ok" : "FAILED")
         << "; phi permutation bitwise " << (phi_perm_ok ? "ok" : "FAILED")
         << "; same-seed training bitwise " << (train_repro_ok ? "ok" : "FAILED")
         << "; no contradictory clauses " << (pruning_ok ? "ok" : "FAILED") << "; " << secs
         << " s";
  report(10, slot_perm_ok && phi_perm_ok && train_repro_ok && pruning_ok && secs < 300.0,
         detail.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::string artifacts_dir = "artifacts";
  std::string data_dir = "data";
  bool force_train = false;
  int override_steps = 0, override_batch = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw std::runtime_error("missing value for " + arg);
      return argv[++i];
    };
    if (arg == "--artifacts") artifacts_dir = next();
    else if (arg == "--data") data_dir = next();
    else if (arg == "--train") force_train = true;
    else if (arg == "--steps") override_steps = std::stoi(next());
    else if (arg == "--batch") override_batch = std::stoi(next());
    else {
      std::cerr << "unknown argument " << arg << std::endl;
      return 1;
    }
  }

  try {
    criterion_1();
    criterion_2();
    criterion_3();

    Artifacts art = ensure_artifacts(artifacts_dir, force_train, override_steps, override_batch);
    Checkpoint ckpt = load_checkpoint(art.desk_dir + "/checkpoint");
    InferenceNet net = InferenceNet::from_checkpoint(ckpt);

    criterion_4(net);
    criterion_5(net);
    criterion_6(net);
    criterion_7(art);
    criterion_8(net, data_dir);
    criterion_9(net);
    criterion_10(net, net.config(), ckpt.params);
  } catch (const std::exception& e) {
    std::cerr << "acceptance suite aborted: " << e.what() << std::endl;
    return 2;
  }

  int failures = 0;
  for (const Outcome& o : outcomes) failures += o.pass ? 0 : 1;
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: ") << (failures == 0 ? "" : std::to_string(failures))
            << std::endl;
  return failures == 0 ? 0 : 1;
}
