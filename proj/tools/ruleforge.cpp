// ruleforge: synthetic-pretrained DNF rule induction toolchain.
//
// Subcommands: gen, train, induce, eval-grid, eval-noise, eval-spurious,
// bench-scaling, eval-uci, ablate, check-grad. Every artifact-writing
// command persists its effective configuration as run.json under --out.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ruleforge/episode.hpp"
#include "ruleforge/eval_harness.hpp"
#include "ruleforge/gradcheck.hpp"
#include "ruleforge/literal_stats.hpp"
#include "ruleforge/trainer.hpp"
#include "ruleforge/uci.hpp"

namespace fs = std::filesystem;
using namespace ruleforge;

namespace {

void write_run_json(const std::string& out_dir, const std::string& command,
                    const nlohmann::json& options) {
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["tool"] = "ruleforge";
  j["version"] = "1.0.0";
  j["command"] = command;
  j["options"] = options;
  std::ofstream(out_dir + "/run.json") << j.dump(2) << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

TrainConfig load_train_config(const std::string& config_path) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config " + config_path);
    cfg = train_config_from_json(nlohmann::json::parse(in));
  }
  return cfg;
}

InferenceNet load_net(const std::string& checkpoint_stem) {
  Checkpoint ckpt = load_checkpoint(checkpoint_stem);
  return InferenceNet::from_checkpoint(ckpt);
}

// Flags shared by train and ablate.
struct TrainFlags {
  std::string config_path;
  std::string out_dir;
  std::string resume_stem;
  TrainConfig cfg;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--resume", resume_stem, "checkpoint stem to resume from");
    cmd->add_option("--steps", cfg.steps);
    cmd->add_option("--batch", cfg.batch_episodes);
    cmd->add_option("--lr", cfg.lr);
    cmd->add_option("--weight-decay", cfg.weight_decay);
    cmd->add_option("--clause-dropout", cfg.clause_dropout);
    cmd->add_option("--grad-clip", cfg.grad_clip);
    cmd->add_option("--chunk", cfg.chunk_episodes);
    cmd->add_option("--checkpoint-every", cfg.checkpoint_every);
    cmd->add_option("--threads", cfg.threads);
    cmd->add_option("--seed", cfg.seed);
    cmd->add_option("--d", cfg.model.d);
    cmd->add_option("--slots", cfg.model.slots);
    cmd->add_option("--n-train", cfg.model.n_train);
    cmd->add_option("--decoder-layers", cfg.model.decoder_layers);
    cmd->add_option("--lambda-b", cfg.loss.lambda_b);
    cmd->add_option("--lambda-r", cfg.loss.lambda_r);
    cmd->add_option("--lambda-e", cfg.loss.lambda_e);
    cmd->add_option("--lambda-e-w", cfg.loss.lambda_e_w);
    cmd->add_option("--lambda-m", cfg.loss.lambda_m);
    cmd->add_option("--lambda-cf", cfg.loss.lambda_cf);
    cmd->add_option("--n-min", cfg.gen.n_min);
    cmd->add_option("--n-max", cfg.gen.n_max);
    cmd->add_option("--m-min", cfg.gen.m_min);
    cmd->add_option("--m-max", cfg.gen.m_max);
    cmd->add_option("--k-max", cfg.gen.k_max);
    cmd->add_option("--l-max", cfg.gen.l_max);
    cmd->add_option("--spurious", cfg.gen.s_spurious);
    cmd->add_option("--label-noise", cfg.gen.label_noise_rate);
    cmd->add_option("--missing", cfg.gen.missing_rate);
  }

  // Re-parse on top of a config file so explicit flags win.
  TrainConfig resolve(CLI::App* cmd) {
    if (config_path.empty()) return cfg;
    TrainConfig from_file = load_train_config(config_path);
    // Apply only the flags the user actually passed.
    TrainConfig merged = from_file;
    auto maybe = [&](const std::string& name, auto member) {
      if (cmd->count(name) > 0) merged.*member = cfg.*member;
    };
    maybe("--steps", &TrainConfig::steps);
    maybe("--batch", &TrainConfig::batch_episodes);
    maybe("--lr", &TrainConfig::lr);
    maybe("--weight-decay", &TrainConfig::weight_decay);
    maybe("--clause-dropout", &TrainConfig::clause_dropout);
    maybe("--grad-clip", &TrainConfig::grad_clip);
    maybe("--chunk", &TrainConfig::chunk_episodes);
    maybe("--checkpoint-every", &TrainConfig::checkpoint_every);
    maybe("--threads", &TrainConfig::threads);
    maybe("--seed", &TrainConfig::seed);
    if (cmd->count("--d")) merged.model.d = cfg.model.d;
    if (cmd->count("--slots")) merged.model.slots = cfg.model.slots;
    if (cmd->count("--n-train")) merged.model.n_train = cfg.model.n_train;
    if (cmd->count("--decoder-layers")) merged.model.decoder_layers = cfg.model.decoder_layers;
    if (cmd->count("--lambda-b")) merged.loss.lambda_b = cfg.loss.lambda_b;
    if (cmd->count("--lambda-r")) merged.loss.lambda_r = cfg.loss.lambda_r;
    if (cmd->count("--lambda-e")) merged.loss.lambda_e = cfg.loss.lambda_e;
    if (cmd->count("--lambda-e-w")) merged.loss.lambda_e_w = cfg.loss.lambda_e_w;
    if (cmd->count("--lambda-m")) merged.loss.lambda_m = cfg.loss.lambda_m;
    if (cmd->count("--lambda-cf")) merged.loss.lambda_cf = cfg.loss.lambda_cf;
    if (cmd->count("--n-min")) merged.gen.n_min = cfg.gen.n_min;
    if (cmd->count("--n-max")) merged.gen.n_max = cfg.gen.n_max;
    if (cmd->count("--m-min")) merged.gen.m_min = cfg.gen.m_min;
    if (cmd->count("--m-max")) merged.gen.m_max = cfg.gen.m_max;
    if (cmd->count("--k-max")) merged.gen.k_max = cfg.gen.k_max;
    if (cmd->count("--l-max")) merged.gen.l_max = cfg.gen.l_max;
    if (cmd->count("--spurious")) merged.gen.s_spurious = cfg.gen.s_spurious;
    if (cmd->count("--label-noise")) merged.gen.label_noise_rate = cfg.gen.label_noise_rate;
    if (cmd->count("--missing")) merged.gen.missing_rate = cfg.gen.missing_rate;
    return merged;
  }
};

int run_train(TrainFlags& flags, CLI::App* cmd, const std::string& variant) {
  TrainConfig cfg = flags.resolve(cmd);
  if (!variant.empty()) cfg.loss = ablation_variant(cfg.loss, variant);
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!flags.resume_stem.empty()) {
    resume = load_checkpoint(flags.resume_stem);
    resume_ptr = &resume;
  }
  int last_print = -1;
  TrainOutput out = train(cfg, flags.out_dir, [&](const StepStats& s) {
    if (s.step - last_print >= 25 || s.step + 1 == cfg.steps) {
      last_print = s.step;
      std::cout << "step " << s.step << " total " << s.losses.total << " cov "
                << s.losses.cov << " mm " << s.losses.mm << " bal " << s.losses.bal
                << std::endl;
    }
  }, resume_ptr);
  std::cout << "checkpoint: " << out.checkpoint_stem << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ruleforge: zero-shot DNF rule induction from synthetic pretraining"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen_cmd = app.add_subcommand("gen", "generate synthetic episodes as JSONL");
  int gen_episodes = 10;
  GenConfig gen_cfg;
  std::string gen_out;
  gen_cmd->add_option("--episodes", gen_episodes);
  gen_cmd->add_option("--seed", gen_cfg.seed);
  gen_cmd->add_option("--out", gen_out)->required();
  gen_cmd->add_option("--n-min", gen_cfg.n_min);
  gen_cmd->add_option("--n-max", gen_cfg.n_max);
  gen_cmd->add_option("--m-min", gen_cfg.m_min);
  gen_cmd->add_option("--m-max", gen_cfg.m_max);
  gen_cmd->add_option("--k-max", gen_cfg.k_max);
  gen_cmd->add_option("--l-max", gen_cfg.l_max);
  gen_cmd->add_option("--spurious", gen_cfg.s_spurious);
  gen_cmd->add_option("--rho", gen_cfg.rho_flip);
  gen_cmd->add_option("--label-noise", gen_cfg.label_noise_rate);
  gen_cmd->add_option("--missing", gen_cfg.missing_rate);

  // ---- train / ablate ----
  auto* train_cmd = app.add_subcommand("train", "pretrain on synthetic episodes");
  TrainFlags train_flags;
  train_flags.attach(train_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate", "train a loss-ablation variant");
  TrainFlags ablate_flags;
  std::string ablate_variant = "full";
  ablate_flags.attach(ablate_cmd);
  ablate_cmd->add_option("--variant", ablate_variant,
                         "one of: full, cf, max_margin, slot_balance");

  // ---- induce ----
  auto* induce_cmd = app.add_subcommand("induce", "induce a rule with a trained checkpoint");
  std::string induce_ckpt, induce_episode_file, induce_dataset, induce_manifest, induce_out;
  int induce_index = 0;
  induce_cmd->add_option("--checkpoint", induce_ckpt)->required();
  induce_cmd->add_option("--episodes", induce_episode_file, "episode JSONL file");
  induce_cmd->add_option("--index", induce_index, "episode line index");
  induce_cmd->add_option("--dataset", induce_dataset, "binarizable CSV");
  induce_cmd->add_option("--manifest", induce_manifest, "dataset manifest JSON");
  induce_cmd->add_option("--out", induce_out);

  // ---- eval-grid ----
  auto* grid_cmd = app.add_subcommand("eval-grid", "rule-complexity recovery grid");
  std::string grid_ckpt, grid_out;
  GridOptions grid_opts;
  grid_cmd->add_option("--checkpoint", grid_ckpt)->required();
  grid_cmd->add_option("--out", grid_out)->required();
  grid_cmd->add_option("--episodes-per-cell", grid_opts.episodes_per_cell);
  grid_cmd->add_option("--seeds", grid_opts.seeds);
  grid_cmd->add_option("--base-seed", grid_opts.base_seed);
  grid_cmd->add_option("--n", grid_opts.n);
  grid_cmd->add_option("--eval-rows", grid_opts.eval_rows);
  grid_cmd->add_option("--threads", grid_opts.threads);

  // ---- eval-noise ----
  auto* noise_cmd = app.add_subcommand("eval-noise", "label-noise robustness sweep");
  std::string noise_ckpt, noise_out;
  GridOptions noise_opts;
  std::vector<double> noise_rates = {0.0, 0.1, 0.2, 0.3};
  noise_cmd->add_option("--checkpoint", noise_ckpt)->required();
  noise_cmd->add_option("--out", noise_out)->required();
  noise_cmd->add_option("--rates", noise_rates);
  noise_cmd->add_option("--episodes-per-cell", noise_opts.episodes_per_cell);
  noise_cmd->add_option("--seeds", noise_opts.seeds);
  noise_cmd->add_option("--base-seed", noise_opts.base_seed);
  noise_cmd->add_option("--threads", noise_opts.threads);

  // ---- eval-spurious ----
  auto* spur_cmd = app.add_subcommand("eval-spurious", "distractor robustness sweep");
  std::string spur_ckpt, spur_out;
  GridOptions spur_opts;
  std::vector<int> spur_counts = {0, 4, 8, 16, 32};
  std::vector<double> spur_rhos = {0.1, 0.3, 0.5, 0.7, 0.9};
  spur_cmd->add_option("--checkpoint", spur_ckpt)->required();
  spur_cmd->add_option("--out", spur_out)->required();
  spur_cmd->add_option("--distractors", spur_counts);
  spur_cmd->add_option("--rhos", spur_rhos);
  spur_cmd->add_option("--episodes-per-cell", spur_opts.episodes_per_cell);
  spur_cmd->add_option("--seeds", spur_opts.seeds);
  spur_cmd->add_option("--base-seed", spur_opts.base_seed);
  spur_cmd->add_option("--threads", spur_opts.threads);

  // ---- bench-scaling ----
  auto* bench_cmd = app.add_subcommand("bench-scaling", "latency/memory scaling benchmark");
  std::string bench_ckpt, bench_out;
  ScalingOptions bench_opts;
  bench_cmd->add_option("--checkpoint", bench_ckpt)->required();
  bench_cmd->add_option("--out", bench_out)->required();
  bench_cmd->add_option("--reps", bench_opts.reps);
  bench_cmd->add_option("--seed", bench_opts.seed);

  // ---- eval-uci ----
  auto* uci_cmd = app.add_subcommand("eval-uci", "zero-shot tabular evaluation");
  std::string uci_ckpt, uci_out;
  std::vector<std::string> uci_manifests;
  int uci_folds = 5;
  std::uint64_t uci_seed = 17;
  uci_cmd->add_option("--checkpoint", uci_ckpt)->required();
  uci_cmd->add_option("--manifest", uci_manifests, "one or more dataset manifests")->required();
  uci_cmd->add_option("--out", uci_out)->required();
  uci_cmd->add_option("--folds", uci_folds);
  uci_cmd->add_option("--seed", uci_seed);

  // ---- check-grad ----
  auto* grad_cmd = app.add_subcommand("check-grad", "finite-difference gradient checks");
  std::uint64_t grad_seed = 1;
  int grad_samples = 100;
  grad_cmd->add_option("--seed", grad_seed);
  grad_cmd->add_option("--samples", grad_samples);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1
  }

  try {
    if (gen_cmd->parsed()) {
      gen_cfg.validate();
      write_run_json(gen_out, "gen",
                     {{"episodes", gen_episodes}, {"seed", gen_cfg.seed}});
      std::ofstream out(gen_out + "/episodes.jsonl");
      for (int e = 0; e < gen_episodes; ++e) {
        out << episode_to_json(gen_episode(gen_cfg, static_cast<std::uint64_t>(e))) << "\n";
      }
      std::cout << "wrote " << gen_episodes << " episodes to " << gen_out
                << "/episodes.jsonl" << std::endl;
      return 0;
    }
    if (train_cmd->parsed()) return run_train(train_flags, train_cmd, "");
    if (ablate_cmd->parsed()) return run_train(ablate_flags, ablate_cmd, ablate_variant);

    if (induce_cmd->parsed()) {
      InferenceNet net = load_net(induce_ckpt);
      if (!induce_dataset.empty()) {
        if (induce_manifest.empty()) throw std::runtime_error("--dataset requires --manifest");
        DatasetManifest manifest = DatasetManifest::from_json_file(induce_manifest);
        manifest.csv_path = induce_dataset;
        RawTable table = load_csv(induce_dataset);
        BinarizedDataset data = binarize(table, manifest);
        Episode episode = dataset_to_episode(data);
        DnfRule rule = net.induce(episode);
        const std::string text = print_rule(rule, &data.feature_names);
        std::cout << text << std::endl;
        if (!induce_out.empty()) {
          write_run_json(induce_out, "induce", {{"dataset", induce_dataset}});
          write_text(induce_out + "/rule.txt", text + "\n");
        }
        return 0;
      }
      if (induce_episode_file.empty()) {
        throw std::runtime_error("induce needs --episodes or --dataset");
      }
      std::ifstream in(induce_episode_file);
      if (!in) throw std::runtime_error("cannot open " + induce_episode_file);
      std::string line;
      int at = 0;
      while (std::getline(in, line)) {
        if (at++ == induce_index) {
          Episode episode = episode_from_json(line);
          DnfRule rule = net.induce(episode);
          std::cout << print_rule(rule) << std::endl;
          if (!induce_out.empty()) {
            write_run_json(induce_out, "induce", {{"episodes", induce_episode_file},
                                                  {"index", induce_index}});
            write_text(induce_out + "/rule.txt", print_rule(rule) + "\n");
          }
          return 0;
        }
      }
      throw std::runtime_error("episode index out of range");
    }

    if (grid_cmd->parsed()) {
      InferenceNet net = load_net(grid_ckpt);
      write_run_json(grid_out, "eval-grid",
                     {{"episodes_per_cell", grid_opts.episodes_per_cell},
                      {"seeds", grid_opts.seeds},
                      {"base_seed", grid_opts.base_seed}});
      ExperimentReport report = complexity_grid(net, grid_opts);
      write_text(grid_out + "/grid.csv", report.to_csv());
      write_text(grid_out + "/grid.json", report.to_json().dump(2) + "\n");
      std::cout << report.to_csv();
      return 0;
    }

    if (noise_cmd->parsed()) {
      InferenceNet net = load_net(noise_ckpt);
      write_run_json(noise_out, "eval-noise", {{"rates", noise_rates}});
      ExperimentReport report = noise_sweep(net, noise_rates, noise_opts);
      write_text(noise_out + "/noise.csv", report.to_csv());
      write_text(noise_out + "/noise.json", report.to_json().dump(2) + "\n");
      std::cout << report.to_csv();
      return 0;
    }

    if (spur_cmd->parsed()) {
      InferenceNet net = load_net(spur_ckpt);
      write_run_json(spur_out, "eval-spurious",
                     {{"distractors", spur_counts}, {"rhos", spur_rhos}});
      ExperimentReport report = spurious_sweep(net, spur_counts, spur_rhos, spur_opts);
      write_text(spur_out + "/spurious.csv", report.to_csv());
      write_text(spur_out + "/spurious.json", report.to_json().dump(2) + "\n");
      std::cout << report.to_csv();
      return 0;
    }

    if (bench_cmd->parsed()) {
      InferenceNet net = load_net(bench_ckpt);
      write_run_json(bench_out, "bench-scaling", {{"reps", bench_opts.reps}});
      ScalingReport report = scaling_bench(net, bench_opts);
      write_text(bench_out + "/scaling_n.csv", report.n_sweep.to_csv());
      write_text(bench_out + "/scaling_m.csv", report.m_sweep.to_csv());
      nlohmann::json summary = {{"latency_ratio_n", report.latency_ratio_n},
                                {"latency_spread_m", report.latency_spread_m},
                                {"memory_exponent", report.memory_exponent}};
      write_text(bench_out + "/scaling_summary.json", summary.dump(2) + "\n");
      std::cout << summary.dump(2) << std::endl;
      return 0;
    }

    if (uci_cmd->parsed()) {
      InferenceNet net = load_net(uci_ckpt);
      write_run_json(uci_out, "eval-uci",
                     {{"manifests", uci_manifests}, {"folds", uci_folds}, {"seed", uci_seed}});
      std::ofstream results(uci_out + "/uci_results.csv");
      results << "dataset,fold,accuracy,majority_rate,support_rows,rule\n";
      for (const std::string& manifest_path : uci_manifests) {
        DatasetManifest manifest = DatasetManifest::from_json_file(manifest_path);
        RawTable table = load_csv(manifest.csv_path);
        BinarizedDataset data = binarize(table, manifest);
        UciResult result = zero_shot_eval(net, data, uci_folds, uci_seed);
        for (const FoldResult& fr : result.folds) {
          if (fr.skipped) continue;
          results << result.dataset << ',' << fr.fold << ',' << fr.accuracy << ','
                  << result.majority_rate << ',' << fr.support_rows << ",\""
                  << fr.rule_text << "\"\n";
          write_text(uci_out + "/" + result.dataset + "_fold" + std::to_string(fr.fold) +
                         ".rule.txt",
                     fr.rule_text + "\n");
        }
        std::cout << result.dataset << ": " << 100.0 * result.mean_accuracy << " +/- "
                  << 100.0 * result.std_accuracy << " (majority "
                  << 100.0 * result.majority_rate << ")" << std::endl;
      }
      return 0;
    }

    if (grad_cmd->parsed()) {
      std::string log;
      GradCheckReport report = run_gradient_checks(grad_seed, grad_samples, &log);
      std::cout << log;
      std::cout << (report.pass() ? "PASS" : "FAIL") << std::endl;
      return report.pass() ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
