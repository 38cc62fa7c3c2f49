#include <array>
#include <stdexcept>

#include "ruleforge/model.hpp"

namespace ruleforge {

void ModelConfig::validate() const {
  if (slots < 2) throw std::invalid_argument("ModelConfig: slots must be >= 2");
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("ModelConfig: heads must divide d");
  if (decoder_layers < 1) throw std::invalid_argument("ModelConfig: decoder_layers must be >= 1");
  if (n_train < 2) throw std::invalid_argument("ModelConfig: n_train must be >= 2");
  if (key_bottleneck < 1) throw std::invalid_argument("ModelConfig: key_bottleneck must be >= 1");
}

ModelInput build_model_input(const Episode& episode, const LiteralStats& stats,
                             const std::vector<int>& support_rows) {
  ModelInput input;
  input.num_literals = stats.num_literals;
  std::vector<int> rows = support_rows;
  if (rows.empty()) {
    rows.resize(static_cast<std::size_t>(episode.m));
    for (int i = 0; i < episode.m; ++i) rows[static_cast<std::size_t>(i)] = i;
  }
  input.num_examples = static_cast<int>(rows.size());
  input.phi = stats.phi;
  input.lits.resize(static_cast<std::size_t>(input.num_examples) * input.num_literals);
  input.labels.resize(static_cast<std::size_t>(input.num_examples));
  for (int r = 0; r < input.num_examples; ++r) {
    const int src = rows[static_cast<std::size_t>(r)];
    input.labels[static_cast<std::size_t>(r)] = episode.y[static_cast<std::size_t>(src)];
    for (int j = 0; j < input.num_literals; ++j) {
      input.lits[static_cast<std::size_t>(r) * input.num_literals + j] =
          episode.literal_value(src, j);
    }
  }
  return input;
}

namespace {

template <typename S>
using Var = typename TapeT<S>::Var;

template <typename S>
Var<S> linear(TapeT<S>& t, Var<S> x, Var<S> w, Var<S> b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

// Multi-head attention with shared projection weights named
// <prefix>.{wq,bq,wk,bk,wv,bv,wo,bo}. `key_keep` masks key columns.
template <typename S>
Var<S> multi_head_attention(TapeT<S>& t, const TapeParams<S>& P, const std::string& prefix,
                            Var<S> queries, Var<S> keys_values, int heads,
                            const std::vector<std::uint8_t>* key_keep) {
  Var<S> q = linear(t, queries, P.at(prefix + ".wq"), P.at(prefix + ".bq"));
  Var<S> k = linear(t, keys_values, P.at(prefix + ".wk"), P.at(prefix + ".bk"));
  Var<S> v = linear(t, keys_values, P.at(prefix + ".wv"), P.at(prefix + ".bv"));
  const int d = t.val(q).cols();
  const int dh = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<Var<S>> heads_out;
  heads_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<S> qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Var<S> kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Var<S> vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Var<S> scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt);
    Var<S> probs = key_keep != nullptr ? t.masked_softmax_rows(scores, *key_keep)
                                       : t.softmax_rows(scores);
    heads_out.push_back(t.matmul(probs, vh));
  }
  Var<S> cat = t.stack_cols(std::span<const Var<S>>(heads_out));
  return linear(t, cat, P.at(prefix + ".wo"), P.at(prefix + ".bo"));
}

}  // namespace

template <typename S>
ForwardResult<S> model_forward(TapeT<S>& tape, const TapeParams<S>& params,
                               const ModelConfig& cfg, const ModelInput& input,
                               const ForwardOptions& opts) {
  cfg.validate();
  const int F = input.num_literals;
  const int M = input.num_examples;
  const int Fp = std::max(F, opts.pad_literals);
  const int Mp = std::max(M, opts.pad_examples);
  const int T = cfg.slots;
  const int d = cfg.d;
  if (F < 2 || M < 1) throw std::invalid_argument("model_forward: empty episode");

  std::vector<std::uint8_t> lit_keep(static_cast<std::size_t>(Fp), 0);
  for (int j = 0; j < F; ++j) lit_keep[static_cast<std::size_t>(j)] = 1;
  std::vector<std::uint8_t> ex_keep(static_cast<std::size_t>(Mp), 0);
  for (int m = 0; m < M; ++m) ex_keep[static_cast<std::size_t>(m)] = 1;

  ForwardResult<S> out;
  out.num_literals = F;
  out.num_examples = M;
  out.padded_literals = Fp;
  out.padded_examples = Mp;

  // Literal statistics -> initial embeddings.
  TensorT<S> phi(Fp, LiteralStats::kFeatureCount);
  for (int j = 0; j < F; ++j) {
    for (int f = 0; f < LiteralStats::kFeatureCount; ++f) {
      phi(j, f) = static_cast<S>(input.phi[static_cast<std::size_t>(j) * LiteralStats::kFeatureCount + f]);
    }
  }
  Var<S> phi_v = tape.constant(std::move(phi));
  Var<S> h0 = linear(tape, tape.tanh_(linear(tape, phi_v, params.at("stats_mlp.w1"),
                                             params.at("stats_mlp.b1"))),
                     params.at("stats_mlp.w2"), params.at("stats_mlp.b2"));

  // Example keys: label branch plus bottlenecked literal-value branch.
  TensorT<S> yfeat(Mp, 3);
  for (int m = 0; m < M; ++m) {
    const S y = static_cast<S>(input.labels[static_cast<std::size_t>(m)]);
    yfeat(m, 0) = y;
    yfeat(m, 1) = S(1) - y;
    yfeat(m, 2) = S(1);
  }
  Var<S> key_y = linear(tape, tape.tanh_(linear(tape, tape.constant(std::move(yfeat)),
                                                params.at("key_y.w1"), params.at("key_y.b1"))),
                        params.at("key_y.w2"), params.at("key_y.b2"));

  const int trained_width = 2 * cfg.n_train;
  Var<S> key_x_in;
  Var<S> key_x_w1;
  if (opts.adapted_key_w1 != nullptr) {
    if (opts.adapted_key_w1->rows() < Fp) {
      throw std::invalid_argument("model_forward: adapted weight narrower than input");
    }
    TensorT<S> lit_in(Mp, Fp);
    for (int m = 0; m < M; ++m) {
      for (int j = 0; j < F; ++j) lit_in(m, j) = static_cast<S>(input.lit(m, j));
    }
    key_x_in = tape.constant(std::move(lit_in));
    TensorT<S> w = opts.adapted_key_w1->cast<S>();
    if (w.rows() != Fp) {
      TensorT<S> trimmed(Fp, w.cols());
      for (int r = 0; r < Fp; ++r) {
        for (int c = 0; c < w.cols(); ++c) trimmed(r, c) = w(r, c);
      }
      w = std::move(trimmed);
    }
    key_x_w1 = tape.constant(std::move(w));
  } else {
    if (Fp > trained_width) {
      throw std::invalid_argument(
          "model_forward: episode wider than the trained key branch; pass adapted_key_w1");
    }
    TensorT<S> lit_in(Mp, trained_width);  // zero-padded to the trained width
    for (int m = 0; m < M; ++m) {
      for (int j = 0; j < F; ++j) lit_in(m, j) = static_cast<S>(input.lit(m, j));
    }
    key_x_in = tape.constant(std::move(lit_in));
    key_x_w1 = params.at("key_x.w1");
  }
  Var<S> key_x = linear(tape, tape.tanh_(tape.add_rowvec(tape.matmul(key_x_in, key_x_w1),
                                                         params.at("key_x.b1"))),
                        params.at("key_x.w2"), params.at("key_x.b2"));
  Var<S> keys = tape.add(key_y, key_x);  // Mp x d

  // Example-conditioned residual attention.
  Var<S> h1 = tape.add(h0, multi_head_attention(tape, params, "enc", h0, keys,
                                                cfg.heads, &ex_keep));
  out.h1 = h1;

  Var<S> hbar = tape.scale(tape.col_sums(tape.slice_rows(h1, 0, F)), S(1) / static_cast<S>(F));
  out.hbar = hbar;

  // FiLM: one modulated view of the literal embeddings per slot.
  std::vector<Var<S>> film(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) {
    Var<S> gamma_k = tape.slice_rows(params.at("film.gamma"), k, k + 1);
    Var<S> beta_k = tape.slice_rows(params.at("film.beta"), k, k + 1);
    film[static_cast<std::size_t>(k)] =
        tape.add_rowvec(tape.mul_rowvec(h1, gamma_k), beta_k);
  }

  // Slot decoder: self-attention over slots, per-slot cross-attention to the
  // FiLM views, feed-forward; pre-normalized with a final layer norm.
  Var<S> x = tape.add_rowvec(params.at("slot.query"), hbar);
  for (int layer = 0; layer < cfg.decoder_layers; ++layer) {
    const std::string lp = "dec" + std::to_string(layer);
    Var<S> a = tape.layer_norm_rows(x, params.at(lp + ".ln1.g"), params.at(lp + ".ln1.b"));
    x = tape.add(x, multi_head_attention(tape, params, lp + ".self", a, a, cfg.heads, nullptr));

    Var<S> b = tape.layer_norm_rows(x, params.at(lp + ".ln2.g"), params.at(lp + ".ln2.b"));
    Var<S> q_all = linear(tape, b, params.at(lp + ".cross.wq"), params.at(lp + ".cross.bq"));
    const int dh = d / cfg.heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<Var<S>> slot_rows(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
      Var<S> keys_k = linear(tape, film[static_cast<std::size_t>(k)],
                             params.at(lp + ".cross.wk"), params.at(lp + ".cross.bk"));
      Var<S> values_k = linear(tape, film[static_cast<std::size_t>(k)],
                               params.at(lp + ".cross.wv"), params.at(lp + ".cross.bv"));
      Var<S> qk = tape.slice_rows(q_all, k, k + 1);
      std::vector<Var<S>> heads_out;
      heads_out.reserve(static_cast<std::size_t>(cfg.heads));
      for (int h = 0; h < cfg.heads; ++h) {
        Var<S> qh = tape.slice_cols(qk, h * dh, (h + 1) * dh);
        Var<S> kh = tape.slice_cols(keys_k, h * dh, (h + 1) * dh);
        Var<S> vh = tape.slice_cols(values_k, h * dh, (h + 1) * dh);
        Var<S> scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
        Var<S> probs = tape.masked_softmax_rows(scores, lit_keep);
        heads_out.push_back(tape.matmul(probs, vh));
      }
      slot_rows[static_cast<std::size_t>(k)] =
          tape.stack_cols(std::span<const Var<S>>(heads_out));
    }
    Var<S> cross_cat = tape.stack_rows(std::span<const Var<S>>(slot_rows));
    Var<S> cross_out = linear(tape, cross_cat, params.at(lp + ".cross.wo"),
                              params.at(lp + ".cross.bo"));
    x = tape.add(x, cross_out);

    Var<S> c = tape.layer_norm_rows(x, params.at(lp + ".ln3.g"), params.at(lp + ".ln3.b"));
    Var<S> ffn = linear(tape, tape.tanh_(linear(tape, c, params.at(lp + ".ffn.w1"),
                                                params.at(lp + ".ffn.b1"))),
                        params.at(lp + ".ffn.w2"), params.at(lp + ".ffn.b2"));
    x = tape.add(x, ffn);
  }
  Var<S> slots = tape.layer_norm_rows(x, params.at("dec.ln_final.g"),
                                      params.at("dec.ln_final.b"));
  out.slots = slots;

  // Literal gates: scaled bilinear score between slot state and FiLM view.
  Var<S> s_proj = tape.matmul(slots, params.at("gate.ws"));  // T x d
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
  std::vector<Var<S>> z_rows(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) {
    Var<S> h_proj = tape.matmul(film[static_cast<std::size_t>(k)], params.at("gate.wh"));
    Var<S> s_k = tape.transpose(tape.slice_rows(s_proj, k, k + 1));  // d x 1
    Var<S> dots = tape.matmul(h_proj, s_k);                           // Fp x 1
    Var<S> logits = tape.add_bcast(tape.scale(dots, inv_sqrt_d), params.at("gate.b"));
    z_rows[static_cast<std::size_t>(k)] = tape.transpose(tape.sigmoid(logits));  // 1 x Fp
  }
  Var<S> z_raw = tape.stack_rows(std::span<const Var<S>>(z_rows));  // T x Fp
  out.z_raw = z_raw;

  Var<S> z = tape.mul_const(z_raw, complementary_prune_mask(tape.val(z_raw), F));
  out.z = z;

  Var<S> p = tape.rsub_scalar(S(1), tape.prod_rows(tape.rsub_scalar(S(1), z)));  // T x 1
  out.p = p;

  // Clause gates from [mean embedding, weighted literal summary, slot state,
  // non-null probability].
  Var<S> hbar_rows = tape.matmul(tape.constant(TensorT<S>::full(T, 1, S(1))), hbar);  // T x d
  std::vector<Var<S>> summary_rows(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) {
    summary_rows[static_cast<std::size_t>(k)] =
        tape.matmul(tape.slice_rows(z, k, k + 1), film[static_cast<std::size_t>(k)]);  // 1 x d
  }
  Var<S> weighted_sum = tape.stack_rows(std::span<const Var<S>>(summary_rows));  // T x d
  Var<S> z_total = tape.add_scalar(tape.row_sums(z), S(1e-7));
  Var<S> h_tilde = tape.div_rows(weighted_sum, z_total);
  Var<S> gate_in = tape.stack_cols(std::array<Var<S>, 4>{hbar_rows, h_tilde, slots, p});
  Var<S> w_pre = linear(tape, tape.tanh_(linear(tape, gate_in, params.at("clause.w1"),
                                                params.at("clause.b1"))),
                        params.at("clause.w2"), params.at("clause.b2"));
  Var<S> w = tape.sigmoid(w_pre);  // T x 1
  out.w = w;

  if (opts.active_slots != nullptr) {
    TensorT<S> mask(T, 1);
    for (int k = 0; k < T; ++k) {
      mask(k, 0) = (*opts.active_slots)[static_cast<std::size_t>(k)] ? S(1) : S(0);
    }
    out.w_active = tape.mul_const(w, std::move(mask));
  } else {
    out.w_active = w;
  }

  // Soft execution over the (real) input rows.
  TensorT<S> lit_mat(M, Fp);
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < F; ++j) lit_mat(m, j) = static_cast<S>(input.lit(m, j));
  }
  out.literals = tape.constant(std::move(lit_mat));
  if (opts.run_execution) {
    Var<S> one_minus_l = tape.rsub_scalar(S(1), out.literals);  // M x Fp
    std::vector<Var<S>> c_cols(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
      Var<S> zk = tape.slice_rows(z, k, k + 1);  // 1 x Fp
      Var<S> factors = tape.rsub_scalar(S(1), tape.mul_rowvec(one_minus_l, zk));
      c_cols[static_cast<std::size_t>(k)] = tape.prod_rows(factors);  // M x 1
    }
    Var<S> C = tape.stack_cols(std::span<const Var<S>>(c_cols));  // M x T
    out.C = C;
    Var<S> w_row = tape.transpose(out.w_active);  // 1 x T
    Var<S> survive = tape.rsub_scalar(S(1), tape.mul_rowvec(C, w_row));
    out.yhat = tape.rsub_scalar(S(1), tape.prod_rows(survive));  // M x 1
  }
  return out;
}

template ForwardResult<float> model_forward<float>(TapeT<float>&, const TapeParams<float>&,
                                                   const ModelConfig&, const ModelInput&,
                                                   const ForwardOptions&);
template ForwardResult<double> model_forward<double>(TapeT<double>&, const TapeParams<double>&,
                                                     const ModelConfig&, const ModelInput&,
                                                     const ForwardOptions&);

}  // namespace ruleforge
