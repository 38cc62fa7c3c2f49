#include "ruleforge/losses.hpp"

#include <cmath>
#include <sstream>

namespace ruleforge {

void LossBreakdown::accumulate(const LossBreakdown& other) {
  cov += other.cov;
  bal += other.bal;
  bal_switch += other.bal_switch;
  bal_cv_norm += other.bal_cv_norm;
  bal_cv_raw += other.bal_cv_raw;
  rep += other.rep;
  ent += other.ent;
  ent_w += other.ent_w;
  mm += other.mm;
  nec += other.nec;
  spur += other.spur;
  ovl += other.ovl;
  cf_bal += other.cf_bal;
  total += other.total;
}

std::string LossBreakdown::csv_header() {
  return "step,cov,bal,bal_switch,bal_cv_norm,bal_cv_raw,rep,ent,ent_w,mm,nec,spur,ovl,cf_bal,total";
}

std::string LossBreakdown::csv_row(std::int64_t step) const {
  std::ostringstream out;
  out.precision(10);
  out << step << ',' << cov << ',' << bal << ',' << bal_switch << ',' << bal_cv_norm << ','
      << bal_cv_raw << ',' << rep << ',' << ent << ',' << ent_w << ',' << mm << ',' << nec
      << ',' << spur << ',' << ovl << ',' << cf_bal << ',' << total;
  return out.str();
}

void BatchCounts::add_episode(const ModelInput& input, int slots) {
  examples += input.num_examples;
  for (auto label : input.labels) (label ? positives : negatives)++;
  gate_entries += static_cast<std::int64_t>(slots) * input.num_literals;
  clause_gates += slots;
  episodes += 1;
}

namespace {

template <typename S>
using Var = typename TapeT<S>::Var;

// -(p_c log p_c + (1-p_c) log(1-p_c)) elementwise with epsilon clamping.
template <typename S>
Var<S> binary_entropy(TapeT<S>& t, Var<S> v, S eps) {
  Var<S> pc = t.clamp(v, eps, S(1) - eps);
  Var<S> qc = t.rsub_scalar(S(1), pc);
  Var<S> term = t.add(t.mul(pc, t.log_(pc)), t.mul(qc, t.log_(qc)));
  return t.scale(term, S(-1));
}

}  // namespace

template <typename S>
EpisodeLossVars<S> episode_losses(TapeT<S>& tape, const ForwardResult<S>& fwd,
                                  const ModelInput& input, const LossWeights& lw,
                                  bool build_cf) {
  const int M = fwd.num_examples;
  const int F = fwd.num_literals;
  const int T = tape.val(fwd.w).rows();
  const S eps = static_cast<S>(lw.eps);

  EpisodeLossVars<S> out;
  TensorT<S> pos_mask(M, 1), neg_mask(M, 1);
  for (int m = 0; m < M; ++m) {
    if (input.labels[static_cast<std::size_t>(m)]) {
      pos_mask(m, 0) = S(1);
      ++out.positives;
    } else {
      neg_mask(m, 0) = S(1);
      ++out.negatives;
    }
  }

  // Coverage: binary cross-entropy in sum form.
  Var<S> yc = tape.clamp(fwd.yhat, eps, S(1) - eps);
  Var<S> log_y = tape.log_(yc);
  Var<S> log_1my = tape.log_(tape.rsub_scalar(S(1), yc));
  Var<S> cov_pos = tape.sum_all(tape.mul_const(log_y, pos_mask));
  Var<S> cov_neg = tape.sum_all(tape.mul_const(log_1my, neg_mask));
  out.cov_sum = tape.scale(tape.add(cov_pos, cov_neg), S(-1));

  // Max-margin on the best clause truth.
  Var<S> c_max = tape.row_max(fwd.C);
  out.mm_pos_sum = tape.sum_all(
      tape.mul_const(tape.relu(tape.rsub_scalar(static_cast<S>(lw.tau_pos), c_max)), pos_mask));
  out.mm_neg_sum = tape.sum_all(
      tape.mul_const(tape.relu(tape.add_scalar(c_max, -static_cast<S>(lw.tau_neg))), neg_mask));

  // Gate sharpness: entropy over the real literal gates plus clause gates.
  Var<S> z_real = F < fwd.padded_literals ? tape.slice_cols(fwd.z, 0, F) : fwd.z;
  out.ent_sum = tape.sum_all(binary_entropy(tape, z_real, eps));
  out.ent_w_sum = tape.sum_all(binary_entropy(tape, fwd.w, eps));

  // Clause diversity: mean pairwise cosine similarity between slot gate rows.
  {
    Var<S> gram = tape.matmul(z_real, tape.transpose(z_real));  // T x T
    Var<S> norms = tape.sqrt_(tape.add_scalar(tape.row_sums(tape.mul(z_real, z_real)), eps));
    Var<S> outer = tape.add_scalar(tape.matmul(norms, tape.transpose(norms)), eps);
    Var<S> cosine = tape.div(gram, outer);
    TensorT<S> upper(T, T);
    for (int a = 0; a < T; ++a) {
      for (int b = a + 1; b < T; ++b) upper(a, b) = S(1);
    }
    const S pair_scale = S(2) / (static_cast<S>(T) * static_cast<S>(T - 1));
    out.rep_mean = tape.scale(tape.sum_all(tape.mul_const(cosine, upper)), pair_scale);
  }

  if (build_cf) {
    out.has_cf = true;
    const TensorT<S>& z_val = tape.val(fwd.z);
    // Responsibilities over slots per example.
    Var<S> r = tape.softmax_rows(fwd.C);  // M x T

    // Necessity: flip each slot's selected literals and re-execute it.
    std::vector<Var<S>> flipped_cols(static_cast<std::size_t>(T));
    std::vector<Var<S>> flipped_ignored_cols(static_cast<std::size_t>(T));
    const int Fp = fwd.padded_literals;
    for (int k = 0; k < T; ++k) {
      TensorT<S> one_minus_sel(M, Fp);   // 1 - l with selected literals flipped
      TensorT<S> one_minus_ign(M, Fp);   // 1 - l with ignored literals flipped
      for (int m = 0; m < M; ++m) {
        for (int j = 0; j < F; ++j) {
          const S lit = static_cast<S>(input.lit(m, j));
          const bool selected = z_val(k, j) >= static_cast<S>(lw.flip_threshold);
          one_minus_sel(m, j) = selected ? lit : S(1) - lit;
          one_minus_ign(m, j) = selected ? S(1) - lit : lit;
        }
      }
      Var<S> zk = tape.slice_rows(fwd.z, k, k + 1);
      flipped_cols[static_cast<std::size_t>(k)] = tape.prod_rows(
          tape.rsub_scalar(S(1), tape.mul_rowvec(tape.constant(std::move(one_minus_sel)), zk)));
      flipped_ignored_cols[static_cast<std::size_t>(k)] = tape.prod_rows(
          tape.rsub_scalar(S(1), tape.mul_rowvec(tape.constant(std::move(one_minus_ign)), zk)));
    }
    Var<S> c_prime = tape.stack_cols(std::span<const Var<S>>(flipped_cols));  // M x T
    out.nec_sum = tape.sum_all(tape.mul_const(tape.row_sums(tape.mul(r, c_prime)), pos_mask));

    // Spuriousness: flipping ignored literals must not move the prediction.
    Var<S> c_ign = tape.stack_cols(std::span<const Var<S>>(flipped_ignored_cols));
    Var<S> w_row = tape.transpose(fwd.w_active);
    Var<S> yhat_prime = tape.rsub_scalar(
        S(1), tape.prod_rows(tape.rsub_scalar(S(1), tape.mul_rowvec(c_ign, w_row))));
    out.spur_sum = tape.sum_all(tape.mul_const(tape.abs_(tape.sub(fwd.yhat, yhat_prime)), pos_mask));

    // Overlap: sum over clause pairs firing together on a positive.
    Var<S> row_sum = tape.row_sums(fwd.C);
    Var<S> pair_sum = tape.scale(
        tape.sub(tape.mul(row_sum, row_sum), tape.row_sums(tape.mul(fwd.C, fwd.C))), S(0.5));
    out.ovl_sum = tape.sum_all(tape.mul_const(pair_sum, pos_mask));

    // CF balance: ln T minus the responsibility entropy (kept nonnegative).
    Var<S> r_log = tape.log_(tape.clamp(r, eps, S(1)));
    Var<S> neg_entropy = tape.row_sums(tape.mul(r, r_log));  // -H(r), in [-ln T, 0]
    Var<S> shifted = tape.add_scalar(neg_entropy, static_cast<S>(std::log(static_cast<double>(T))));
    out.cfbal_sum = tape.sum_all(tape.mul_const(shifted, pos_mask));
  }
  return out;
}

template <typename S>
BalanceVars<S> balance_losses(TapeT<S>& tape,
                              std::span<const typename TapeT<S>::Var> w_per_episode,
                              const LossWeights& lw) {
  if (w_per_episode.empty()) throw std::invalid_argument("balance_losses: empty batch");
  const int B = static_cast<int>(w_per_episode.size());
  const int T = tape.val(w_per_episode[0]).rows();
  const S eps = static_cast<S>(lw.eps);

  // Mean routing probability (per-episode normalized gates).
  Var<S> norm_sum;
  Var<S> raw_sum;
  TensorT<S> f_counts(T, 1);
  for (int b = 0; b < B; ++b) {
    Var<S> wb = w_per_episode[static_cast<std::size_t>(b)];
    Var<S> nb = tape.div_bcast(wb, tape.add_scalar(tape.sum_all(wb), eps));
    norm_sum = b == 0 ? nb : tape.add(norm_sum, nb);
    raw_sum = b == 0 ? wb : tape.add(raw_sum, wb);
    const TensorT<S>& wv = tape.val(wb);
    int best = 0;
    for (int k = 1; k < T; ++k) {
      if (wv(k, 0) > wv(best, 0)) best = k;
    }
    f_counts(best, 0) += S(1) / static_cast<S>(B);
  }
  Var<S> u = tape.scale(norm_sum, S(1) / static_cast<S>(B));
  Var<S> wbar = tape.scale(raw_sum, S(1) / static_cast<S>(B));

  BalanceVars<S> out;
  out.switch_aux = tape.scale(tape.sum_all(tape.mul_const(u, std::move(f_counts))),
                              static_cast<S>(T));

  Var<S> mu = tape.mean_all(wbar);
  if (tape.val(mu)(0, 0) < S(1e-6)) {
    // All-zero usage: defined as zero.
    out.cv_norm = tape.constant_scalar(S(0));
    out.cv_raw = tape.constant_scalar(S(0));
  } else {
    Var<S> ratio_dev = tape.add_scalar(tape.div_bcast(wbar, mu), S(-1));
    out.cv_norm = tape.scale(tape.sum_all(tape.mul(ratio_dev, ratio_dev)), static_cast<S>(T));
    Var<S> dev = tape.sub_bcast(wbar, mu);
    out.cv_raw = tape.scale(tape.sum_all(tape.mul(dev, dev)), static_cast<S>(T));
  }
  out.total = tape.add(out.switch_aux, tape.add(out.cv_norm, out.cv_raw));
  return out;
}

BalanceValues balance_losses_value(const std::vector<double>& w, int episodes, int slots,
                                   double eps) {
  BalanceValues out;
  if (episodes <= 0 || slots <= 0) return out;
  std::vector<double> u(static_cast<std::size_t>(slots), 0.0);
  std::vector<double> f(static_cast<std::size_t>(slots), 0.0);
  std::vector<double> wbar(static_cast<std::size_t>(slots), 0.0);
  for (int b = 0; b < episodes; ++b) {
    const double* row = w.data() + static_cast<std::size_t>(b) * slots;
    double total = 0.0;
    int best = 0;
    for (int k = 0; k < slots; ++k) {
      total += row[k];
      wbar[static_cast<std::size_t>(k)] += row[k] / episodes;
      if (row[k] > row[best]) best = k;
    }
    for (int k = 0; k < slots; ++k) {
      u[static_cast<std::size_t>(k)] += row[k] / (total + eps) / episodes;
    }
    f[static_cast<std::size_t>(best)] += 1.0 / episodes;
  }
  double mu = 0.0;
  for (int k = 0; k < slots; ++k) {
    out.switch_aux += u[static_cast<std::size_t>(k)] * f[static_cast<std::size_t>(k)];
    mu += wbar[static_cast<std::size_t>(k)] / slots;
  }
  out.switch_aux *= slots;
  if (mu >= 1e-6) {
    for (int k = 0; k < slots; ++k) {
      const double r = wbar[static_cast<std::size_t>(k)] / mu - 1.0;
      out.cv_norm += r * r;
      const double d = wbar[static_cast<std::size_t>(k)] - mu;
      out.cv_raw += d * d;
    }
    out.cv_norm *= slots;
    out.cv_raw *= slots;
  }
  out.total = out.switch_aux + out.cv_norm + out.cv_raw;
  return out;
}

template EpisodeLossVars<float> episode_losses<float>(TapeT<float>&, const ForwardResult<float>&,
                                                      const ModelInput&, const LossWeights&, bool);
template EpisodeLossVars<double> episode_losses<double>(TapeT<double>&,
                                                        const ForwardResult<double>&,
                                                        const ModelInput&, const LossWeights&,
                                                        bool);
template BalanceVars<float> balance_losses<float>(TapeT<float>&,
                                                  std::span<const TapeT<float>::Var>,
                                                  const LossWeights&);
template BalanceVars<double> balance_losses<double>(TapeT<double>&,
                                                    std::span<const TapeT<double>::Var>,
                                                    const LossWeights&);

}  // namespace ruleforge
