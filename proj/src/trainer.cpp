#include "ruleforge/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>

#include "ruleforge/util.hpp"

namespace ruleforge {

namespace {

constexpr std::uint64_t kDropoutSalt = 0xD40960ull;

nlohmann::json gen_to_json(const GenConfig& g) {
  return {{"n_min", g.n_min},           {"n_max", g.n_max},
          {"m_min", g.m_min},           {"m_max", g.m_max},
          {"k_max", g.k_max},           {"l_max", g.l_max},
          {"s_spurious", g.s_spurious}, {"rho_flip", g.rho_flip},
          {"label_noise_rate", g.label_noise_rate},
          {"missing_rate", g.missing_rate},
          {"seed", g.seed}};
}

GenConfig gen_from_json(const nlohmann::json& j) {
  GenConfig g;
  g.n_min = j.value("n_min", g.n_min);
  g.n_max = j.value("n_max", g.n_max);
  g.m_min = j.value("m_min", g.m_min);
  g.m_max = j.value("m_max", g.m_max);
  g.k_max = j.value("k_max", g.k_max);
  g.l_max = j.value("l_max", g.l_max);
  g.s_spurious = j.value("s_spurious", g.s_spurious);
  g.rho_flip = j.value("rho_flip", g.rho_flip);
  g.label_noise_rate = j.value("label_noise_rate", g.label_noise_rate);
  g.missing_rate = j.value("missing_rate", g.missing_rate);
  g.seed = j.value("seed", g.seed);
  return g;
}

nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"d", m.d},
          {"slots", m.slots},
          {"n_train", m.n_train},
          {"heads", m.heads},
          {"decoder_layers", m.decoder_layers},
          {"key_bottleneck", m.key_bottleneck},
          {"tau_z", m.tau_z},
          {"tau_w", m.tau_w}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.d = j.value("d", m.d);
  m.slots = j.value("slots", m.slots);
  m.n_train = j.value("n_train", m.n_train);
  m.heads = j.value("heads", m.heads);
  m.decoder_layers = j.value("decoder_layers", m.decoder_layers);
  m.key_bottleneck = j.value("key_bottleneck", m.key_bottleneck);
  m.tau_z = j.value("tau_z", m.tau_z);
  m.tau_w = j.value("tau_w", m.tau_w);
  return m;
}

nlohmann::json loss_to_json(const LossWeights& l) {
  return {{"lambda_b", l.lambda_b},   {"lambda_r", l.lambda_r},
          {"lambda_e", l.lambda_e},   {"lambda_e_w", l.lambda_e_w},
          {"lambda_m", l.lambda_m},
          {"lambda_cf", l.lambda_cf}, {"lambda_o", l.lambda_o},
          {"lambda_c", l.lambda_c},   {"tau_pos", l.tau_pos},
          {"tau_neg", l.tau_neg},     {"flip_threshold", l.flip_threshold},
          {"eps", l.eps}};
}

LossWeights loss_from_json(const nlohmann::json& j) {
  LossWeights l;
  l.lambda_b = j.value("lambda_b", l.lambda_b);
  l.lambda_r = j.value("lambda_r", l.lambda_r);
  l.lambda_e = j.value("lambda_e", l.lambda_e);
  l.lambda_e_w = j.value("lambda_e_w", l.lambda_e_w);
  l.lambda_m = j.value("lambda_m", l.lambda_m);
  l.lambda_cf = j.value("lambda_cf", l.lambda_cf);
  l.lambda_o = j.value("lambda_o", l.lambda_o);
  l.lambda_c = j.value("lambda_c", l.lambda_c);
  l.tau_pos = j.value("tau_pos", l.tau_pos);
  l.tau_neg = j.value("tau_neg", l.tau_neg);
  l.flip_threshold = j.value("flip_threshold", l.flip_threshold);
  l.eps = j.value("eps", l.eps);
  return l;
}

struct ChunkResult {
  std::vector<Tensor> grads;          // aligned with store entries
  LossBreakdown breakdown;            // scaled by batch normalizers
  std::vector<std::vector<float>> w_values;  // unmasked gates per episode
  double chunk_loss = 0.0;
};

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (batch_episodes < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (chunk_episodes < 1) throw std::invalid_argument("TrainConfig: chunk must be >= 1");
  if (dropout_min_keep > model.slots) {
    throw std::invalid_argument("TrainConfig: dropout_min_keep must be <= slots");
  }
  if (!(clause_dropout >= 0.0f && clause_dropout <= 1.0f)) {
    throw std::invalid_argument("TrainConfig: dropout rate in [0,1]");
  }
  gen.validate();
  model.validate();
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["steps"] = cfg.steps;
  j["batch_episodes"] = cfg.batch_episodes;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["clause_dropout"] = cfg.clause_dropout;
  j["dropout_min_keep"] = cfg.dropout_min_keep;
  j["grad_clip"] = cfg.grad_clip;
  j["chunk_episodes"] = cfg.chunk_episodes;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["threads"] = cfg.threads;
  j["seed"] = cfg.seed;
  j["gen"] = gen_to_json(cfg.gen);
  j["model"] = model_to_json(cfg.model);
  j["loss"] = loss_to_json(cfg.loss);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_episodes = j.value("batch_episodes", cfg.batch_episodes);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.clause_dropout = j.value("clause_dropout", cfg.clause_dropout);
  cfg.dropout_min_keep = j.value("dropout_min_keep", cfg.dropout_min_keep);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.chunk_episodes = j.value("chunk_episodes", cfg.chunk_episodes);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("gen")) cfg.gen = gen_from_json(j.at("gen"));
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
  if (j.contains("loss")) cfg.loss = loss_from_json(j.at("loss"));
  return cfg;
}

std::vector<std::uint8_t> clause_dropout_mask(Rng& rng, int slots, double rate, int min_keep) {
  std::vector<std::uint8_t> active(static_cast<std::size_t>(slots), 1);
  if (rate <= 0.0) return active;
  int active_count = 0;
  for (int k = 0; k < slots; ++k) {
    if (rng.bernoulli(rate)) {
      active[static_cast<std::size_t>(k)] = 0;
    } else {
      ++active_count;
    }
  }
  while (active_count < min_keep) {
    const int inactive = slots - active_count;
    int pick = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(inactive)));
    for (int k = 0; k < slots; ++k) {
      if (!active[static_cast<std::size_t>(k)] && pick-- == 0) {
        active[static_cast<std::size_t>(k)] = 1;
        ++active_count;
        break;
      }
    }
  }
  return active;
}

TrainOutput train(const TrainConfig& cfg_in, const std::string& out_dir,
                  const std::function<void(const StepStats&)>& on_step,
                  const Checkpoint* resume) {
  TrainConfig cfg = cfg_in;
  cfg.gen.seed = cfg.seed;
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  ParamStore store;
  std::int64_t start_step = 0;
  std::uint64_t episode_base = 0;
  if (resume != nullptr) {
    if (!resume->has_optimizer_state) {
      throw std::invalid_argument("resume checkpoint lacks optimizer state");
    }
    for (std::size_t i = 0; i < resume->params.size(); ++i) {
      const auto& e = resume->params.entry(static_cast<int>(i));
      store.add(e.name, e.value);
      auto& mine = store.entry(static_cast<int>(i));
      mine.m = e.m;
      mine.v = e.v;
    }
    start_step = resume->step;
    episode_base = resume->next_episode_index;
  } else {
    init_params(store, cfg.model, cfg.seed);
  }

  {
    std::ofstream run(out_dir + "/run.json");
    nlohmann::json j;
    j["tool"] = "ruleforge";
    j["version"] = "1.0.0";
    j["command"] = "train";
    j["config"] = train_config_to_json(cfg);
    j["seed"] = cfg.seed;
    run << j.dump(2) << "\n";
  }
  std::ofstream losses_csv(out_dir + "/losses.csv");
  losses_csv << LossBreakdown::csv_header() << "\n";
  std::ofstream slots_csv(out_dir + "/slots.csv");
  slots_csv << "step";
  for (int k = 0; k < cfg.model.slots; ++k) slots_csv << ",w" << k;
  slots_csv << "\n";

  const int B = cfg.batch_episodes;
  const int T = cfg.model.slots;
  const int num_chunks = (B + cfg.chunk_episodes - 1) / cfg.chunk_episodes;
  ThreadPool pool(resolve_threads(cfg.threads));

  TrainOutput output;
  const int pairs = T * (T - 1) / 2;

  for (std::int64_t step = start_step; step < cfg.steps; ++step) {
    // Generate the batch (parallel, per-episode streams).
    std::vector<Episode> episodes(static_cast<std::size_t>(B));
    std::vector<ModelInput> inputs(static_cast<std::size_t>(B));
    std::vector<std::vector<std::uint8_t>> dropout(static_cast<std::size_t>(B));
    {
      std::vector<std::future<void>> futures;
      futures.reserve(static_cast<std::size_t>(num_chunks));
      for (int c = 0; c < num_chunks; ++c) {
        const int begin = c * cfg.chunk_episodes;
        const int end = std::min(B, begin + cfg.chunk_episodes);
        futures.push_back(pool.submit([&, begin, end] {
          for (int i = begin; i < end; ++i) {
            const std::uint64_t index = episode_base + static_cast<std::uint64_t>(i);
            episodes[static_cast<std::size_t>(i)] = gen_episode(cfg.gen, index);
            const Episode& ep = episodes[static_cast<std::size_t>(i)];
            LiteralStats stats = compute_stats(ep);
            inputs[static_cast<std::size_t>(i)] = build_model_input(ep, stats);
            Rng drop_rng = Rng::stream(cfg.seed ^ kDropoutSalt, index);
            dropout[static_cast<std::size_t>(i)] =
                clause_dropout_mask(drop_rng, T, cfg.clause_dropout, cfg.dropout_min_keep);
          }
        }));
      }
      for (auto& f : futures) f.get();
    }

    BatchCounts counts;
    for (const ModelInput& input : inputs) counts.add_episode(input, T);

    // Forward/backward per chunk; each chunk owns one tape.
    std::vector<ChunkResult> results(static_cast<std::size_t>(num_chunks));
    {
      std::vector<std::future<void>> futures;
      futures.reserve(static_cast<std::size_t>(num_chunks));
      for (int c = 0; c < num_chunks; ++c) {
        const int begin = c * cfg.chunk_episodes;
        const int end = std::min(B, begin + cfg.chunk_episodes);
        futures.push_back(pool.submit([&, c, begin, end] {
          TapeT<float> tape;
          TapeParams<float> params(tape, store);
          ChunkResult& result = results[static_cast<std::size_t>(c)];
          using V = TapeT<float>::Var;
          V total;
          std::vector<V> w_actives;
          const bool build_cf = cfg.loss.lambda_cf != 0.0f;
          for (int i = begin; i < end; ++i) {
            ForwardOptions opts;
            opts.active_slots = &dropout[static_cast<std::size_t>(i)];
            ForwardResult<float> fwd = model_forward(tape, params, cfg.model,
                                                     inputs[static_cast<std::size_t>(i)], opts);
            EpisodeLossVars<float> terms =
                episode_losses(tape, fwd, inputs[static_cast<std::size_t>(i)], cfg.loss, build_cf);
            w_actives.push_back(fwd.w_active);
            {
              const Tensor& wv = tape.val(fwd.w);
              std::vector<float> w_row(static_cast<std::size_t>(T));
              for (int k = 0; k < T; ++k) w_row[static_cast<std::size_t>(k)] = wv(k, 0);
              result.w_values.push_back(std::move(w_row));
            }
            V contrib = tape.scale(terms.cov_sum, 1.0f / static_cast<float>(counts.examples));
            result.breakdown.cov += tape.val(contrib)(0, 0);
            {
              V mm = tape.add(
                  tape.scale(terms.mm_pos_sum, 1.0f / static_cast<float>(counts.positives)),
                  tape.scale(terms.mm_neg_sum, 1.0f / static_cast<float>(counts.negatives)));
              result.breakdown.mm += tape.val(mm)(0, 0);
              contrib = tape.add(contrib, tape.scale(mm, cfg.loss.lambda_m));
            }
            {
              V ent = tape.scale(terms.ent_sum, 1.0f / static_cast<float>(counts.gate_entries));
              result.breakdown.ent += tape.val(ent)(0, 0);
              contrib = tape.add(contrib, tape.scale(ent, cfg.loss.lambda_e));
              V ent_w = tape.scale(terms.ent_w_sum, 1.0f / static_cast<float>(counts.clause_gates));
              result.breakdown.ent_w += tape.val(ent_w)(0, 0);
              if (cfg.loss.lambda_e_w != 0.0f) {
                contrib = tape.add(contrib, tape.scale(ent_w, cfg.loss.lambda_e_w));
              }
            }
            {
              V rep = tape.scale(terms.rep_mean, 1.0f / static_cast<float>(counts.episodes));
              result.breakdown.rep += tape.val(rep)(0, 0);
              contrib = tape.add(contrib, tape.scale(rep, cfg.loss.lambda_r));
            }
            if (build_cf) {
              const float inv_pos = 1.0f / static_cast<float>(counts.positives);
              V nec = tape.scale(terms.nec_sum, inv_pos);
              V spur = tape.scale(terms.spur_sum, inv_pos);
              V ovl = tape.scale(terms.ovl_sum, inv_pos / static_cast<float>(pairs));
              V cfb = tape.scale(terms.cfbal_sum, inv_pos);
              result.breakdown.nec += tape.val(nec)(0, 0);
              result.breakdown.spur += tape.val(spur)(0, 0);
              result.breakdown.ovl += tape.val(ovl)(0, 0);
              result.breakdown.cf_bal += tape.val(cfb)(0, 0);
              V cf = tape.add(tape.add(nec, spur),
                              tape.add(tape.scale(ovl, cfg.loss.lambda_o),
                                       tape.scale(cfb, cfg.loss.lambda_c)));
              contrib = tape.add(contrib, tape.scale(cf, cfg.loss.lambda_cf));
            }
            total = total.valid() ? tape.add(total, contrib) : contrib;
          }
          {
            BalanceVars<float> bal =
                balance_losses(tape, std::span<const V>(w_actives), cfg.loss);
            const float chunk_weight =
                static_cast<float>(end - begin) / static_cast<float>(B);
            result.breakdown.bal_switch += tape.val(bal.switch_aux)(0, 0) * chunk_weight;
            result.breakdown.bal_cv_norm += tape.val(bal.cv_norm)(0, 0) * chunk_weight;
            result.breakdown.bal_cv_raw += tape.val(bal.cv_raw)(0, 0) * chunk_weight;
            result.breakdown.bal += tape.val(bal.total)(0, 0) * chunk_weight;
            total = tape.add(total, tape.scale(bal.total, cfg.loss.lambda_b * chunk_weight));
          }
          result.chunk_loss = tape.val(total)(0, 0);
          result.breakdown.total += result.chunk_loss;
          tape.backward(total);
          result.grads.reserve(store.size());
          for (std::size_t p = 0; p < store.size(); ++p) {
            result.grads.push_back(params.grad(static_cast<int>(p)));
          }
        }));
      }
      for (auto& f : futures) f.get();
    }

    // Ordered reduction and update.
    store.zero_grads();
    LossBreakdown step_losses;
    std::vector<double> slot_usage(static_cast<std::size_t>(T), 0.0);
    for (int c = 0; c < num_chunks; ++c) {
      const ChunkResult& result = results[static_cast<std::size_t>(c)];
      step_losses.accumulate(result.breakdown);
      for (std::size_t p = 0; p < store.size(); ++p) {
        Tensor& acc = store.entry(static_cast<int>(p)).grad;
        const Tensor& g = result.grads[p];
        if (g.size() == 0) continue;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      }
      for (const auto& w_row : result.w_values) {
        for (int k = 0; k < T; ++k) {
          slot_usage[static_cast<std::size_t>(k)] += w_row[static_cast<std::size_t>(k)] / B;
        }
      }
    }

    if (!std::isfinite(step_losses.total)) {
      nlohmann::json dump;
      dump["step"] = step;
      dump["seed"] = cfg.seed;
      dump["episode_index_begin"] = episode_base;
      dump["episode_index_end"] = episode_base + static_cast<std::uint64_t>(B);
      std::ofstream(out_dir + "/diverged.json") << dump.dump(2) << "\n";
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step) +
                             "; offending batch seeds dumped to " + out_dir + "/diverged.json");
    }

    if (cfg.grad_clip > 0.0f) {
      const double norm = store.grad_norm();
      if (norm > cfg.grad_clip) {
        store.scale_grads(static_cast<float>(cfg.grad_clip / norm));
      }
    }
    store.adamw_step(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps, step + 1);
    episode_base += static_cast<std::uint64_t>(B);

    losses_csv << step_losses.csv_row(step) << "\n";
    slots_csv << step;
    for (int k = 0; k < T; ++k) slots_csv << ',' << slot_usage[static_cast<std::size_t>(k)];
    slots_csv << "\n";
    if (step == start_step) output.first_step = step_losses;
    output.last_step = step_losses;
    output.last_slot_usage = slot_usage;

    if (on_step) {
      StepStats stats;
      stats.step = static_cast<int>(step);
      stats.losses = step_losses;
      stats.slot_usage = slot_usage;
      on_step(stats);
    }

    const bool last = step + 1 == cfg.steps;
    if (!last && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir + "/checkpoint_step" + std::to_string(step + 1), store,
                      train_config_to_json(cfg), cfg.seed, step + 1, episode_base, true);
    }
  }

  output.checkpoint_stem = out_dir + "/checkpoint";
  save_checkpoint(output.checkpoint_stem, store, train_config_to_json(cfg), cfg.seed,
                  cfg.steps, episode_base, true);
  return output;
}

}  // namespace ruleforge
