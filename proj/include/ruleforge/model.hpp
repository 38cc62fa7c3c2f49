#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ruleforge/dnf.hpp"
#include "ruleforge/episode.hpp"
#include "ruleforge/literal_stats.hpp"
#include "ruleforge/param_store.hpp"
#include "ruleforge/tape.hpp"

namespace ruleforge {

struct ModelConfig {
  int d = 128;              // embedding width
  int slots = 8;            // clause slots T
  int n_train = 15;         // example-key branch ceiling in variables
                            // (training sees n_max + s_spurious columns)
  int heads = 4;
  int decoder_layers = 3;
  int key_bottleneck = 64;  // example-key value MLP hidden width
  float tau_z = 0.5f;       // literal threshold at inference
  float tau_w = 0.5f;       // clause threshold at inference

  void validate() const;
};

// Episode slice as the network consumes it: literal statistics, literal
// truth values (missing encoded 0.5), and labels over the support rows.
struct ModelInput {
  int num_literals = 0;  // F = 2 * (n + s)
  int num_examples = 0;  // M (support rows)
  std::vector<double> phi;     // F x 18
  std::vector<double> lits;    // M x F
  std::vector<std::uint8_t> labels;

  double lit(int row, int j) const {
    return lits[static_cast<std::size_t>(row) * num_literals + j];
  }
};

ModelInput build_model_input(const Episode& episode, const LiteralStats& stats,
                             const std::vector<int>& support_rows = {});

struct ForwardOptions {
  const std::vector<std::uint8_t>* active_slots = nullptr;  // clause dropout
  int pad_examples = 0;   // pad M up to this many rows (0 = none)
  int pad_literals = 0;   // pad F up to this many literal rows (0 = none)
  const Tensor* adapted_key_w1 = nullptr;  // expanded first layer for F > 2*n_train
  bool run_execution = true;  // compute clause truths / predictions
};

// Registers every parameter as a tape leaf; shared by all episodes built on
// the same tape so gradients accumulate across a chunk.
template <typename S>
class TapeParams {
 public:
  TapeParams(TapeT<S>& tape, const ParamStore& store) : tape_(&tape), store_(&store) {
    vars_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      vars_.push_back(tape.leaf(store.entry(static_cast<int>(i)).value.template cast<S>(), true));
    }
  }

  // Same registration but with explicit values (e.g. perturbed copies for
  // finite-difference checks); `values` must align with the store's entries.
  TapeParams(TapeT<S>& tape, const ParamStore& store, const std::vector<TensorT<S>>& values,
             bool needs_grad)
      : tape_(&tape), store_(&store) {
    vars_.reserve(values.size());
    for (const TensorT<S>& v : values) vars_.push_back(tape.leaf(v, needs_grad));
  }

  typename TapeT<S>::Var at(const std::string& name) const {
    return vars_[static_cast<std::size_t>(store_->index_of(name))];
  }

  // Gradient of the parameter at the store's index (valid after backward).
  const TensorT<S>& grad(int store_index) const {
    return tape_->grad(vars_[static_cast<std::size_t>(store_index)]);
  }

  // Adds tape gradients into the store's accumulators (call after backward).
  void add_grads_to(ParamStore& store) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const TensorT<S>& g = tape_->grad(vars_[i]);
      if (g.size() == 0) continue;
      Tensor& acc = store.entry(static_cast<int>(i)).grad;
      for (std::size_t k = 0; k < g.size(); ++k) {
        acc[k] += static_cast<float>(g[k]);
      }
    }
  }

 private:
  TapeT<S>* tape_;
  const ParamStore* store_;
  std::vector<typename TapeT<S>::Var> vars_;
};

template <typename S>
struct ForwardResult {
  using Var = typename TapeT<S>::Var;
  int num_literals = 0;      // real F (unpadded)
  int num_examples = 0;      // real M
  int padded_literals = 0;   // Fp
  int padded_examples = 0;   // Mp
  Var literals;              // const, M x Fp literal values (real rows only)
  Var h1;                    // Fp x d
  Var hbar;                  // 1 x d
  Var slots;                 // T x d
  Var z_raw;                 // T x Fp, pre-pruning
  Var z;                     // T x Fp, post-pruning (and padding mask)
  Var p;                     // T x 1
  Var w;                     // T x 1 (no dropout)
  Var w_active;              // T x 1 after dropout mask
  Var C;                     // M x T clause truths (valid if run_execution)
  Var yhat;                  // M x 1
};

// Builds the gate network for one episode on the tape. phi rows feed a
// 2-layer MLP; literal embeddings attend over example keys; FiLM-modulated
// copies feed a slot-query transformer decoder; bilinear literal gates are
// pruned per complementary pair; clause gates come from the slot summary.
template <typename S>
ForwardResult<S> model_forward(TapeT<S>& tape, const TapeParams<S>& params,
                               const ModelConfig& cfg, const ModelInput& input,
                               const ForwardOptions& opts = {});

// Initializes all parameters (deterministic in `seed`).
void init_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

// First-layer weight of the example-key branch matched to `num_literals`
// inputs: rows are copied for the trained span and drawn from
// N(0, std(trained)) per appended row, seeded by (ckpt_seed, row), when the
// episode is wider than the trained dimension.
Tensor adapt_input_dim(const Tensor& trained_w1, int num_literals,
                       std::uint64_t ckpt_seed);

struct GateValues {
  int num_literals = 0;
  Tensor z;      // T x F
  Tensor w;      // T x 1
  Tensor p;      // T x 1
};

// Gradient-free forward pass with slot-sequential buffers; used for
// induction, evaluation, and the scaling benchmark. Parameters are copied at
// construction and immutable afterwards, so concurrent use is safe.
class InferenceNet {
 public:
  InferenceNet(const ParamStore& store, ModelConfig cfg, std::uint64_t ckpt_seed);
  static InferenceNet from_checkpoint(const Checkpoint& ckpt);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  GateValues gates(const ModelInput& input) const;
  DnfRule extract_rule(const GateValues& gates, int num_variables) const;
  DnfRule induce(const Episode& episode, const std::vector<int>& support_rows = {}) const;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ParamStore params_;
};

// Diagnostic clause quality: mean clause truth on positives minus mean on
// negatives, from the gate values over the input rows.
std::vector<double> discrimination_scores(const GateValues& gates,
                                          const ModelInput& input);

// Post-pruning keep mask: for every slot and variable the weaker literal of
// each complementary pair is zeroed (ties keep the positive literal);
// columns at or beyond `real_literals` are zeroed too.
template <typename S>
TensorT<S> complementary_prune_mask(const TensorT<S>& z_raw, int real_literals) {
  TensorT<S> mask(z_raw.rows(), z_raw.cols());
  const int vars = real_literals / 2;
  for (int k = 0; k < z_raw.rows(); ++k) {
    for (int v = 0; v < vars; ++v) {
      const int j0 = 2 * v, j1 = 2 * v + 1;
      if (z_raw(k, j0) >= z_raw(k, j1)) {
        mask(k, j0) = S(1);
      } else {
        mask(k, j1) = S(1);
      }
    }
  }
  return mask;
}

}  // namespace ruleforge
