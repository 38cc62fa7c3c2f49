#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/model.hpp"
#include "ruleforge/tape.hpp"

namespace ruleforge {

struct LossWeights {
  float lambda_b = 0.01f;   // slot load balancing
  float lambda_r = 0.01f;   // clause diversity (repulsion)
  float lambda_e = 0.001f;  // gate sharpness (entropy) on the literal gates
  float lambda_e_w = 0.0f;  // entropy on the clause gates; disabled: it pins
                            // gradient-orphaned (never-firing) clauses at
                            // saturated w and blocks their suppression
  float lambda_m = 0.5f;    // max-margin coverage
  float lambda_cf = 0.1f;   // counterfactual block
  float lambda_o = 0.1f;    // overlap weight inside the CF block
  float lambda_c = 0.01f;   // CF balance weight inside the CF block
  float tau_pos = 0.7f;
  float tau_neg = 0.3f;
  float flip_threshold = 0.5f;  // selected vs ignored literals in CF flips
  float eps = 1e-7f;
};

struct LossBreakdown {
  double cov = 0, bal = 0, bal_switch = 0, bal_cv_norm = 0, bal_cv_raw = 0;
  double rep = 0, ent = 0, ent_w = 0, mm = 0;
  double nec = 0, spur = 0, ovl = 0, cf_bal = 0;
  double total = 0;

  void accumulate(const LossBreakdown& other);
  static std::string csv_header();  // "step,cov,..."
  std::string csv_row(std::int64_t step) const;
};

// Batch-level normalizers; all derivable from episode data before any
// forward pass, so sum-form episode losses can be scaled consistently
// across parallel chunks.
struct BatchCounts {
  std::int64_t examples = 0;
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  std::int64_t gate_entries = 0;    // T*F per episode (literal gates)
  std::int64_t clause_gates = 0;    // T per episode
  int episodes = 0;

  void add_episode(const ModelInput& input, int slots);
};

// Differentiable per-episode loss pieces in sum form (unnormalized).
template <typename S>
struct EpisodeLossVars {
  using Var = typename TapeT<S>::Var;
  Var cov_sum;      // sum of BCE terms over examples
  Var mm_pos_sum;   // sum over positives of relu(tau+ - Cmax)
  Var mm_neg_sum;   // sum over negatives of relu(Cmax - tau-)
  Var ent_sum;      // binary entropy summed over the (real) literal gates
  Var ent_w_sum;    // binary entropy summed over the clause gates
  Var rep_mean;     // mean pairwise cosine between slot gate rows
  Var nec_sum;      // sum over positives of sum_k r_k * C'_k
  Var spur_sum;     // sum over positives of |yhat - yhat'|
  Var ovl_sum;      // sum over positives of sum_{k<k'} C_k C_k'
  Var cfbal_sum;    // sum over positives of (ln T - H(r))
  int positives = 0;
  int negatives = 0;
  bool has_cf = false;
};

template <typename S>
EpisodeLossVars<S> episode_losses(TapeT<S>& tape, const ForwardResult<S>& fwd,
                                  const ModelInput& input, const LossWeights& lw,
                                  bool build_cf);

// Mixture-of-experts style balancing over the gate activations of a batch
// of episodes living on one tape: switch auxiliary (K * sum_k u_k f_k with
// hard argmax assignments), CV^2 on mean usage normalized by its mean, and
// an unnormalized CV^2 variant on the raw means.
template <typename S>
struct BalanceVars {
  using Var = typename TapeT<S>::Var;
  Var switch_aux;
  Var cv_norm;
  Var cv_raw;
  Var total;
};

template <typename S>
BalanceVars<S> balance_losses(TapeT<S>& tape,
                              std::span<const typename TapeT<S>::Var> w_per_episode,
                              const LossWeights& lw);

// Value-level balance computation (same formulas, no tape) over a row-major
// episodes x slots activation matrix.
struct BalanceValues {
  double switch_aux = 0, cv_norm = 0, cv_raw = 0, total = 0;
};
BalanceValues balance_losses_value(const std::vector<double>& w, int episodes, int slots,
                                   double eps = 1e-7);

}  // namespace ruleforge
