#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruleforge/episode.hpp"
#include "ruleforge/losses.hpp"
#include "ruleforge/model.hpp"
#include "ruleforge/param_store.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

struct TrainConfig {
  int steps = 2000;           // desk default; paper scale is 500 x 8192
  int batch_episodes = 256;
  float lr = 6e-4f;
  float weight_decay = 1e-2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float clause_dropout = 0.25f;
  int dropout_min_keep = 2;
  float grad_clip = 1.0f;
  int chunk_episodes = 16;    // episodes sharing one tape (exact balance granularity)
  int checkpoint_every = 500;
  int threads = 0;            // 0 = RULEFORGE_THREADS or hardware
  std::uint64_t seed = 1;
  GenConfig gen;              // gen.seed is overridden by `seed`
  ModelConfig model;
  LossWeights loss;

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepStats {
  int step = 0;
  LossBreakdown losses;
  std::vector<double> slot_usage;  // batch mean of the (unmasked) clause gates
};

struct TrainOutput {
  std::string checkpoint_stem;
  LossBreakdown first_step;
  LossBreakdown last_step;
  std::vector<double> last_slot_usage;
};

// Drops slots independently, then resurrects random inactive slots until at
// least `min_keep` stay active. Inference never applies this.
std::vector<std::uint8_t> clause_dropout_mask(Rng& rng, int slots, double rate, int min_keep);

// Pretraining loop: per step, fresh episodes are generated in parallel
// chunks (each chunk shares a tape so the balance loss is exact within it),
// gradients reduce in chunk order, and AdamW updates the single store.
// Writes losses.csv, slots.csv, periodic and final checkpoints, and
// run.json under out_dir. Deterministic for a fixed seed and config.
TrainOutput train(const TrainConfig& cfg, const std::string& out_dir,
                  const std::function<void(const StepStats&)>& on_step = nullptr,
                  const Checkpoint* resume = nullptr);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace ruleforge
