#include "ruleforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ruleforge/episode.hpp"
#include "ruleforge/literal_stats.hpp"
#include "ruleforge/losses.hpp"
#include "ruleforge/model.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

namespace {

using DTape = TapeT<double>;
using DVar = DTape::Var;
using DTensor = TensorT<double>;

ModelConfig check_config() {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.slots = 4;
  cfg.heads = 4;
  cfg.decoder_layers = 2;
  cfg.key_bottleneck = 16;
  cfg.n_train = 6;
  return cfg;
}

struct EvalResult {
  double loss = 0.0;
  DVar loss_var;
  std::vector<std::uint8_t> decision_signature;  // flip sets, prune choices, argmaxes
};

EvalResult eval_loss(DTape& tape, const TapeParams<double>& params, const ModelConfig& cfg,
                     const ModelInput& input, const LossWeights& lw) {
  ForwardResult<double> fwd = model_forward(tape, params, cfg, input);
  EpisodeLossVars<double> terms = episode_losses(tape, fwd, input, lw, true);
  const double n_ex = input.num_examples;
  const double n_pos = terms.positives;
  const double n_neg = terms.negatives;
  const double gates = static_cast<double>(cfg.slots) * input.num_literals;
  const int pairs = cfg.slots * (cfg.slots - 1) / 2;

  DVar total = tape.scale(terms.cov_sum, 1.0 / n_ex);
  total = tape.add(total, tape.scale(tape.add(tape.scale(terms.mm_pos_sum, 1.0 / n_pos),
                                              tape.scale(terms.mm_neg_sum, 1.0 / n_neg)),
                                     static_cast<double>(lw.lambda_m)));
  total = tape.add(total, tape.scale(terms.ent_sum, lw.lambda_e / gates));
  total = tape.add(total, tape.scale(terms.rep_mean, static_cast<double>(lw.lambda_r)));
  DVar cf = tape.add(tape.add(tape.scale(terms.nec_sum, 1.0 / n_pos),
                              tape.scale(terms.spur_sum, 1.0 / n_pos)),
                     tape.add(tape.scale(terms.ovl_sum, lw.lambda_o / (n_pos * pairs)),
                              tape.scale(terms.cfbal_sum, lw.lambda_c / n_pos)));
  total = tape.add(total, tape.scale(cf, static_cast<double>(lw.lambda_cf)));
  {
    std::array<DVar, 1> ws{fwd.w_active};
    BalanceVars<double> bal = balance_losses(tape, std::span<const DVar>(ws), lw);
    total = tape.add(total, tape.scale(bal.total, static_cast<double>(lw.lambda_b)));
  }

  EvalResult out;
  out.loss = tape.val(total)(0, 0);
  out.loss_var = total;
  // Record every data-dependent discrete decision so finite differences can
  // reject perturbations that cross one (selection is stop-gradient).
  const DTensor& z_raw = tape.val(fwd.z_raw);
  const DTensor& z = tape.val(fwd.z);
  const DTensor& c = tape.val(fwd.C);
  const DTensor& w = tape.val(fwd.w_active);
  for (int k = 0; k < z.rows(); ++k) {
    for (int v = 0; v < z.cols() / 2; ++v) {  // pruning choice
      out.decision_signature.push_back(z_raw(k, 2 * v) >= z_raw(k, 2 * v + 1) ? 1 : 0);
    }
    for (int j = 0; j < z.cols(); ++j) {  // CF flip set
      out.decision_signature.push_back(
          z(k, j) >= static_cast<double>(lw.flip_threshold) ? 1 : 0);
    }
  }
  for (int m = 0; m < c.rows(); ++m) {  // max-margin argmax
    int best = 0;
    for (int k = 1; k < c.cols(); ++k) {
      if (c(m, k) > c(m, best)) best = k;
    }
    out.decision_signature.push_back(static_cast<std::uint8_t>(best));
  }
  {
    int best = 0;  // switch-aux hard assignment
    for (int k = 1; k < w.rows(); ++k) {
      if (w(k, 0) > w(best, 0)) best = k;
    }
    out.decision_signature.push_back(static_cast<std::uint8_t>(best));
  }
  return out;
}

bool condensed_operator_checks(std::uint64_t seed, std::ostringstream& log) {
  Rng rng = Rng::stream(seed, 0xC4EC4ull);
  bool ok = true;
  auto check = [&](const char* name, auto builder, DTensor input, double eps, double tol) {
    DTape tape;
    DVar leaf = tape.leaf(input, true);
    DVar out = builder(tape, leaf);
    tape.backward(out);
    const DTensor grad = tape.grad(leaf);
    for (std::size_t i = 0; i < input.size(); ++i) {
      auto eval = [&](double shift) {
        DTape t2;
        DTensor copy = input;
        copy[i] += shift;
        DVar l2 = t2.leaf(copy, false);
        return t2.val(builder(t2, l2))(0, 0);
      };
      const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      if (std::abs(fd - grad[i]) / scale > tol) {
        log << "operator check failed: " << name << " entry " << i << " fd=" << fd
            << " ad=" << grad[i] << "\n";
        ok = false;
      }
    }
  };

  DTensor a(3, 4);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.2 + 0.6 * rng.next_double();
  check("sigmoid", [](DTape& t, DVar x) { return t.sum_all(t.sigmoid(x)); }, a, 1e-6, 1e-4);
  check("tanh", [](DTape& t, DVar x) { return t.sum_all(t.tanh_(x)); }, a, 1e-6, 1e-4);
  check("log", [](DTape& t, DVar x) { return t.sum_all(t.log_(x)); }, a, 1e-6, 1e-4);
  check("prod_rows", [](DTape& t, DVar x) { return t.sum_all(t.prod_rows(x)); }, a, 1e-6, 1e-4);
  check("softmax", [](DTape& t, DVar x) {
    DTensor w(3, 4);
    for (int i = 0; i < 12; ++i) w[static_cast<std::size_t>(i)] = 0.1 * (i + 1);
    return t.sum_all(t.mul_const(t.softmax_rows(x), std::move(w)));
  }, a, 1e-6, 1e-4);
  check("matmul", [](DTape& t, DVar x) {
    return t.sum_all(t.matmul(x, t.transpose(x)));
  }, a, 1e-6, 1e-4);
  {
    DTensor g(1, 4), b(1, 4);
    for (int i = 0; i < 4; ++i) {
      g[static_cast<std::size_t>(i)] = 1.0 + 0.1 * i;
      b[static_cast<std::size_t>(i)] = 0.05 * i;
    }
    check("layer_norm", [g, b](DTape& t, DVar x) {
      return t.sum_all(t.layer_norm_rows(x, t.constant(g), t.constant(b)));
    }, a, 1e-6, 2e-4);
  }
  return ok;
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, int samples, std::string* log_out) {
  std::ostringstream log;
  GradCheckReport report;
  report.operators_ok = condensed_operator_checks(seed, log);

  // Tiny full model: N=6, M=16, T=4, d=32, full objective.
  ModelConfig cfg = check_config();
  ParamStore store;
  init_params(store, cfg, seed);
  GenConfig gen;
  gen.n_min = gen.n_max = 6;
  gen.m_min = gen.m_max = 16;
  gen.s_spurious = 0;
  gen.k_max = 2;
  gen.l_max = 2;
  gen.seed = seed ^ 0xE415C0DEull;
  Episode episode = gen_episode(gen, 1);
  LiteralStats stats = compute_stats(episode);
  ModelInput input = build_model_input(episode, stats);
  LossWeights lw;

  std::vector<DTensor> base_values;
  for (std::size_t i = 0; i < store.size(); ++i) {
    base_values.push_back(store.entry(static_cast<int>(i)).value.cast<double>());
  }

  auto eval_at = [&](int param, std::size_t entry, double delta, bool needs_grad,
                     std::vector<DTensor>* grads_out) {
    DTape tape;
    std::vector<DTensor> values = base_values;
    if (param >= 0) values[static_cast<std::size_t>(param)][entry] += delta;
    TapeParams<double> params(tape, store, values, needs_grad);
    EvalResult result = eval_loss(tape, params, cfg, input, lw);
    if (needs_grad && grads_out != nullptr) {
      tape.backward(result.loss_var);
      for (std::size_t i = 0; i < store.size(); ++i) {
        grads_out->push_back(params.grad(static_cast<int>(i)));
      }
    }
    return result;
  };

  std::vector<DTensor> grads;
  EvalResult base = eval_at(-1, 0, 0.0, true, &grads);
  log << "base loss " << base.loss << "\n";

  const double eps = 1e-3;
  Rng pick = Rng::stream(seed, 0x9D1CEull);
  std::vector<double> errors;
  int attempts = 0;
  int crossings = 0;
  while (static_cast<int>(errors.size()) < samples && attempts < samples * 5) {
    ++attempts;
    const int param = static_cast<int>(pick.next_below(store.size()));
    const std::size_t entry = pick.next_below(store.entry(param).value.size());
    EvalResult plus = eval_at(param, entry, eps, false, nullptr);
    EvalResult minus = eval_at(param, entry, -eps, false, nullptr);
    if (plus.decision_signature != base.decision_signature ||
        minus.decision_signature != base.decision_signature) {
      ++crossings;  // excluded: the perturbation crossed a selection threshold
      continue;
    }
    const double fd = (plus.loss - minus.loss) / (2.0 * eps);
    const double ad = grads[static_cast<std::size_t>(param)][entry];
    const double scale = std::max({std::abs(fd), std::abs(ad), 1e-6});
    errors.push_back(std::abs(fd - ad) / scale);
  }

  std::sort(errors.begin(), errors.end());
  report.checked = static_cast<int>(errors.size());
  if (!errors.empty()) {
    report.max_rel_error = errors.back();
    report.median_rel_error = errors[errors.size() / 2];
  }
  log << "full-model check: " << report.checked << " entries (" << crossings
      << " threshold crossings excluded), max rel " << report.max_rel_error
      << ", median rel " << report.median_rel_error << "\n";
  if (log_out != nullptr) *log_out = log.str();
  return report;
}

}  // namespace ruleforge
