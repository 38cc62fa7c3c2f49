#include "ruleforge/model.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "ruleforge/rng.hpp"

namespace ruleforge {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

Map map(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }
CMap cmap(const Tensor& t) { return CMap(t.data(), t.rows(), t.cols()); }

Tensor gaussian(Rng& rng, int rows, int cols, float mean, float std) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = mean + std * static_cast<float>(rng.normal());
  }
  return t;
}

Tensor glorot(Rng& rng, int rows, int cols) {
  const float std = std::sqrt(2.0f / static_cast<float>(rows + cols));
  return gaussian(rng, rows, cols, 0.0f, std);
}

// Orthonormal rows via modified Gram-Schmidt (rows <= cols).
Tensor orthonormal_rows(Rng& rng, int rows, int cols) {
  Tensor t = gaussian(rng, rows, cols, 0.0f, 1.0f);
  for (int r = 0; r < rows; ++r) {
    for (int prev = 0; prev < r; ++prev) {
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += static_cast<double>(t(r, c)) * t(prev, c);
      for (int c = 0; c < cols; ++c) t(r, c) -= static_cast<float>(dot) * t(prev, c);
    }
    double norm = 0.0;
    for (int c = 0; c < cols; ++c) norm += static_cast<double>(t(r, c)) * t(r, c);
    const float inv = 1.0f / static_cast<float>(std::sqrt(norm));
    for (int c = 0; c < cols; ++c) t(r, c) *= inv;
  }
  return t;
}

}  // namespace

void init_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.d;
  const int T = cfg.slots;
  std::uint64_t ordinal = 0;
  auto rng_for = [&]() { return Rng::stream(seed, 0x1217ull, ordinal++); };
  auto weight = [&](const std::string& name, int rows, int cols) {
    Rng rng = rng_for();
    store.add(name, glorot(rng, rows, cols));
  };
  auto zeros = [&](const std::string& name, int rows, int cols) {
    store.add(name, Tensor(rows, cols));
  };
  auto constant = [&](const std::string& name, int rows, int cols, float value) {
    store.add(name, Tensor::full(rows, cols, value));
  };
  auto attention = [&](const std::string& prefix) {
    weight(prefix + ".wq", d, d);
    zeros(prefix + ".bq", 1, d);
    weight(prefix + ".wk", d, d);
    zeros(prefix + ".bk", 1, d);
    weight(prefix + ".wv", d, d);
    zeros(prefix + ".bv", 1, d);
    weight(prefix + ".wo", d, d);
    zeros(prefix + ".bo", 1, d);
  };

  weight("stats_mlp.w1", LiteralStats::kFeatureCount, d);
  zeros("stats_mlp.b1", 1, d);
  weight("stats_mlp.w2", d, d);
  zeros("stats_mlp.b2", 1, d);

  weight("key_y.w1", 3, d);
  zeros("key_y.b1", 1, d);
  weight("key_y.w2", d, d);
  zeros("key_y.b2", 1, d);

  weight("key_x.w1", 2 * cfg.n_train, cfg.key_bottleneck);
  zeros("key_x.b1", 1, cfg.key_bottleneck);
  weight("key_x.w2", cfg.key_bottleneck, d);
  zeros("key_x.b2", 1, d);

  attention("enc");

  {
    Rng rng = rng_for();
    store.add("film.gamma", gaussian(rng, T, d, 1.0f, 0.5f));
  }
  {
    Rng rng = rng_for();
    store.add("film.beta", orthonormal_rows(rng, T, d));
  }
  {
    // Wide spread so slots differentiate from the first steps; with a
    // near-identical start they herd into one blended clause and only
    // break apart late, after straggler-memorizing habits have formed.
    Rng rng = rng_for();
    store.add("slot.query", gaussian(rng, T, d, 0.0f, 0.5f));
  }

  for (int layer = 0; layer < cfg.decoder_layers; ++layer) {
    const std::string lp = "dec" + std::to_string(layer);
    constant(lp + ".ln1.g", 1, d, 1.0f);
    zeros(lp + ".ln1.b", 1, d);
    attention(lp + ".self");
    constant(lp + ".ln2.g", 1, d, 1.0f);
    zeros(lp + ".ln2.b", 1, d);
    attention(lp + ".cross");
    constant(lp + ".ln3.g", 1, d, 1.0f);
    zeros(lp + ".ln3.b", 1, d);
    weight(lp + ".ffn.w1", d, 4 * d);
    zeros(lp + ".ffn.b1", 1, 4 * d);
    weight(lp + ".ffn.w2", 4 * d, d);
    zeros(lp + ".ffn.b2", 1, d);
  }
  constant("dec.ln_final.g", 1, d, 1.0f);
  zeros("dec.ln_final.b", 1, d);

  weight("gate.ws", d, d);
  weight("gate.wh", d, d);
  constant("gate.b", 1, 1, -2.0f);  // sparse literal selection at the start

  weight("clause.w1", 3 * d + 1, d);
  zeros("clause.b1", 1, d);
  weight("clause.w2", d, 1);
  constant("clause.b2", 1, 1, -1.0f);
}

Tensor adapt_input_dim(const Tensor& trained_w1, int num_literals, std::uint64_t ckpt_seed) {
  const int trained = trained_w1.rows();
  if (num_literals <= trained) return trained_w1;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < trained_w1.size(); ++i) {
    sum += trained_w1[i];
    sum_sq += static_cast<double>(trained_w1[i]) * trained_w1[i];
  }
  const double n = static_cast<double>(trained_w1.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  const float std = static_cast<float>(std::sqrt(var));
  Tensor out(num_literals, trained_w1.cols());
  for (int r = 0; r < trained; ++r) {
    for (int c = 0; c < trained_w1.cols(); ++c) out(r, c) = trained_w1(r, c);
  }
  for (int r = trained; r < num_literals; ++r) {
    Rng rng = Rng::stream(ckpt_seed, 0xADA57ull, static_cast<std::uint64_t>(r));
    for (int c = 0; c < trained_w1.cols(); ++c) {
      out(r, c) = std * static_cast<float>(rng.normal());
    }
  }
  return out;
}

InferenceNet::InferenceNet(const ParamStore& store, ModelConfig cfg, std::uint64_t ckpt_seed)
    : cfg_(cfg), seed_(ckpt_seed) {
  cfg_.validate();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(static_cast<int>(i));
    params_.add(e.name, e.value);
  }
}

InferenceNet InferenceNet::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  if (ckpt.config.contains("model")) {
    const auto& m = ckpt.config.at("model");
    cfg.d = m.value("d", cfg.d);
    cfg.slots = m.value("slots", cfg.slots);
    cfg.n_train = m.value("n_train", cfg.n_train);
    cfg.heads = m.value("heads", cfg.heads);
    cfg.decoder_layers = m.value("decoder_layers", cfg.decoder_layers);
    cfg.key_bottleneck = m.value("key_bottleneck", cfg.key_bottleneck);
    cfg.tau_z = m.value("tau_z", cfg.tau_z);
    cfg.tau_w = m.value("tau_w", cfg.tau_w);
  }
  return InferenceNet(ckpt.params, cfg, ckpt.seed);
}

namespace {

// y = tanh(x W1 + b1) W2 + b2
Tensor mlp2(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2) {
  Tensor hidden(x.rows(), w1.cols());
  map(hidden).noalias() = cmap(x) * cmap(w1);
  for (int r = 0; r < hidden.rows(); ++r) {
    for (int c = 0; c < hidden.cols(); ++c) {
      hidden(r, c) = std::tanh(hidden(r, c) + b1(0, c));
    }
  }
  Tensor out(x.rows(), w2.cols());
  map(out).noalias() = cmap(hidden) * cmap(w2);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) out(r, c) += b2(0, c);
  }
  return out;
}

Tensor linear_t(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out(x.rows(), w.cols());
  map(out).noalias() = cmap(x) * cmap(w);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) out(r, c) += b(0, c);
  }
  return out;
}

void layer_norm_inplace(Tensor& x, const Tensor& gain, const Tensor& bias,
                        float eps = 1e-5f) {
  for (int r = 0; r < x.rows(); ++r) {
    float mean = 0.0f;
    for (int c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<float>(x.cols());
    float var = 0.0f;
    for (int c = 0; c < x.cols(); ++c) {
      const float d = x(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<float>(x.cols());
    const float inv = 1.0f / std::sqrt(var + eps);
    for (int c = 0; c < x.cols(); ++c) {
      x(r, c) = gain(0, c) * (x(r, c) - mean) * inv + bias(0, c);
    }
  }
}

Tensor layer_norm_copy(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  Tensor out = x;
  layer_norm_inplace(out, gain, bias);
  return out;
}

void softmax_rows_inplace(Tensor& x) {
  for (int r = 0; r < x.rows(); ++r) {
    float mx = x(r, 0);
    for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    float total = 0.0f;
    for (int c = 0; c < x.cols(); ++c) {
      x(r, c) = std::exp(x(r, c) - mx);
      total += x(r, c);
    }
    for (int c = 0; c < x.cols(); ++c) x(r, c) /= total;
  }
}

float sigmoid_f(float x) {
  if (x >= 0.0f) {
    const float e = std::exp(-x);
    return 1.0f / (1.0f + e);
  }
  const float e = std::exp(x);
  return e / (1.0f + e);
}

// Multi-head attention; queries (nq x d), keys/values (nk x d).
Tensor attention(const ParamStore& P, const std::string& prefix, const Tensor& queries,
                 const Tensor& keys_values, int heads) {
  const int d = queries.cols();
  const int dh = d / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor q = linear_t(queries, P.value(prefix + ".wq"), P.value(prefix + ".bq"));
  Tensor k = linear_t(keys_values, P.value(prefix + ".wk"), P.value(prefix + ".bk"));
  Tensor v = linear_t(keys_values, P.value(prefix + ".wv"), P.value(prefix + ".bv"));
  Tensor cat(queries.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Tensor scores(q.rows(), k.rows());
    map(scores).noalias() = cmap(q).middleCols(h * dh, dh) *
                            cmap(k).middleCols(h * dh, dh).transpose() * inv_sqrt;
    softmax_rows_inplace(scores);
    map(cat).middleCols(h * dh, dh).noalias() = cmap(scores) * cmap(v).middleCols(h * dh, dh);
  }
  return linear_t(cat, P.value(prefix + ".wo"), P.value(prefix + ".bo"));
}

// FiLM view of h1 for one slot.
Tensor film_view(const Tensor& h1, const Tensor& gamma, const Tensor& beta, int slot) {
  Tensor out(h1.rows(), h1.cols());
  for (int r = 0; r < h1.rows(); ++r) {
    for (int c = 0; c < h1.cols(); ++c) {
      out(r, c) = gamma(slot, c) * h1(r, c) + beta(slot, c);
    }
  }
  return out;
}

}  // namespace

GateValues InferenceNet::gates(const ModelInput& input) const {
  const ParamStore& P = params_;
  const int F = input.num_literals;
  const int M = input.num_examples;
  const int T = cfg_.slots;
  const int d = cfg_.d;
  const int heads = cfg_.heads;
  const int dh = d / heads;
  if (F < 2 || M < 1) throw std::invalid_argument("gates: empty input");

  // h0 from the statistics.
  Tensor phi(F, LiteralStats::kFeatureCount);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = static_cast<float>(input.phi[i]);
  Tensor h1 = mlp2(phi, P.value("stats_mlp.w1"), P.value("stats_mlp.b1"),
                   P.value("stats_mlp.w2"), P.value("stats_mlp.b2"));

  // Example keys.
  {
    Tensor yfeat(M, 3);
    for (int m = 0; m < M; ++m) {
      const float y = static_cast<float>(input.labels[static_cast<std::size_t>(m)]);
      yfeat(m, 0) = y;
      yfeat(m, 1) = 1.0f - y;
      yfeat(m, 2) = 1.0f;
    }
    Tensor keys = mlp2(yfeat, P.value("key_y.w1"), P.value("key_y.b1"),
                       P.value("key_y.w2"), P.value("key_y.b2"));
    {
      const Tensor& w1 = P.value("key_x.w1");
      const int trained_width = w1.rows();
      Tensor key_x;
      if (F <= trained_width) {
        Tensor lit_in(M, trained_width);
        for (int m = 0; m < M; ++m) {
          for (int j = 0; j < F; ++j) lit_in(m, j) = static_cast<float>(input.lit(m, j));
        }
        key_x = mlp2(lit_in, w1, P.value("key_x.b1"), P.value("key_x.w2"), P.value("key_x.b2"));
      } else {
        Tensor adapted = adapt_input_dim(w1, F, seed_);
        Tensor lit_in(M, F);
        for (int m = 0; m < M; ++m) {
          for (int j = 0; j < F; ++j) lit_in(m, j) = static_cast<float>(input.lit(m, j));
        }
        key_x = mlp2(lit_in, adapted, P.value("key_x.b1"), P.value("key_x.w2"),
                     P.value("key_x.b2"));
      }
      map(keys) += cmap(key_x);
    }
    // Residual attention from literal embeddings over example keys.
    Tensor attn = attention(P, "enc", h1, keys, heads);
    map(h1) += cmap(attn);
  }

  Tensor hbar(1, d);
  for (int c = 0; c < d; ++c) {
    float acc = 0.0f;
    for (int r = 0; r < F; ++r) acc += h1(r, c);
    hbar(0, c) = acc / static_cast<float>(F);
  }

  const Tensor& gamma = P.value("film.gamma");
  const Tensor& beta = P.value("film.beta");

  // Decoder over slot states; cross-attention runs slot-by-slot so only one
  // FiLM view and its projections are live at a time.
  Tensor x(T, d);
  {
    const Tensor& q = P.value("slot.query");
    for (int r = 0; r < T; ++r) {
      for (int c = 0; c < d; ++c) x(r, c) = q(r, c) + hbar(0, c);
    }
  }
  for (int layer = 0; layer < cfg_.decoder_layers; ++layer) {
    const std::string lp = "dec" + std::to_string(layer);
    {
      Tensor a = layer_norm_copy(x, P.value(lp + ".ln1.g"), P.value(lp + ".ln1.b"));
      Tensor self_out = attention(P, lp + ".self", a, a, heads);
      map(x) += cmap(self_out);
    }
    {
      Tensor b = layer_norm_copy(x, P.value(lp + ".ln2.g"), P.value(lp + ".ln2.b"));
      Tensor q_all = linear_t(b, P.value(lp + ".cross.wq"), P.value(lp + ".cross.bq"));
      const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
      Tensor cross(T, d);
      for (int k = 0; k < T; ++k) {
        Tensor hk = film_view(h1, gamma, beta, k);
        Tensor keys_k = linear_t(hk, P.value(lp + ".cross.wk"), P.value(lp + ".cross.bk"));
        Tensor values_k = linear_t(hk, P.value(lp + ".cross.wv"), P.value(lp + ".cross.bv"));
        for (int h = 0; h < heads; ++h) {
          Tensor scores(1, F);
          map(scores).noalias() = cmap(q_all).block(k, h * dh, 1, dh) *
                                  cmap(keys_k).middleCols(h * dh, dh).transpose() * inv_sqrt;
          softmax_rows_inplace(scores);
          map(cross).block(k, h * dh, 1, dh).noalias() =
              cmap(scores) * cmap(values_k).middleCols(h * dh, dh);
        }
      }
      Tensor cross_out = linear_t(cross, P.value(lp + ".cross.wo"), P.value(lp + ".cross.bo"));
      map(x) += cmap(cross_out);
    }
    {
      Tensor c = layer_norm_copy(x, P.value(lp + ".ln3.g"), P.value(lp + ".ln3.b"));
      Tensor ffn = mlp2(c, P.value(lp + ".ffn.w1"), P.value(lp + ".ffn.b1"),
                        P.value(lp + ".ffn.w2"), P.value(lp + ".ffn.b2"));
      map(x) += cmap(ffn);
    }
  }
  layer_norm_inplace(x, P.value("dec.ln_final.g"), P.value("dec.ln_final.b"));

  // Literal gates, pruning, non-null probability, clause gates.
  Tensor s_proj(T, d);
  map(s_proj).noalias() = cmap(x) * cmap(P.value("gate.ws"));
  const float gate_bias = P.value("gate.b")(0, 0);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

  GateValues out;
  out.num_literals = F;
  out.z = Tensor(T, F);
  out.p = Tensor(T, 1);
  Tensor h_tilde(T, d);
  for (int k = 0; k < T; ++k) {
    Tensor hk = film_view(h1, gamma, beta, k);
    Tensor h_proj(F, d);
    map(h_proj).noalias() = cmap(hk) * cmap(P.value("gate.wh"));
    for (int j = 0; j < F; ++j) {
      float dot = 0.0f;
      for (int c = 0; c < d; ++c) dot += h_proj(j, c) * s_proj(k, c);
      out.z(k, j) = sigmoid_f(dot * inv_sqrt_d + gate_bias);
    }
    for (int v = 0; v < F / 2; ++v) {  // complementary-pair pruning
      if (out.z(k, 2 * v) >= out.z(k, 2 * v + 1)) {
        out.z(k, 2 * v + 1) = 0.0f;
      } else {
        out.z(k, 2 * v) = 0.0f;
      }
    }
    float none = 1.0f;
    float z_sum = 0.0f;
    for (int j = 0; j < F; ++j) {
      none *= 1.0f - out.z(k, j);
      z_sum += out.z(k, j);
    }
    out.p(k, 0) = 1.0f - none;
    for (int c = 0; c < d; ++c) {
      float acc = 0.0f;
      for (int j = 0; j < F; ++j) acc += out.z(k, j) * hk(j, c);
      h_tilde(k, c) = acc / (z_sum + 1e-7f);
    }
  }

  Tensor gate_in(T, 3 * d + 1);
  for (int k = 0; k < T; ++k) {
    for (int c = 0; c < d; ++c) {
      gate_in(k, c) = hbar(0, c);
      gate_in(k, d + c) = h_tilde(k, c);
      gate_in(k, 2 * d + c) = x(k, c);
    }
    gate_in(k, 3 * d) = out.p(k, 0);
  }
  Tensor w_pre = mlp2(gate_in, P.value("clause.w1"), P.value("clause.b1"),
                      P.value("clause.w2"), P.value("clause.b2"));
  out.w = Tensor(T, 1);
  for (int k = 0; k < T; ++k) out.w(k, 0) = sigmoid_f(w_pre(k, 0));
  return out;
}

DnfRule InferenceNet::extract_rule(const GateValues& gates, int num_variables) const {
  std::vector<std::vector<Literal>> clauses;
  for (int k = 0; k < gates.w.rows(); ++k) {
    if (gates.w(k, 0) < cfg_.tau_w) continue;
    std::vector<Literal> literals;
    for (int j = 0; j < gates.num_literals; ++j) {
      if (gates.z(k, j) >= cfg_.tau_z) {
        literals.push_back({j / 2, (j % 2) == 1});
      }
    }
    if (!literals.empty()) clauses.push_back(std::move(literals));
  }
  return DnfRule::from_literal_lists(clauses, num_variables);
}

DnfRule InferenceNet::induce(const Episode& episode, const std::vector<int>& support_rows) const {
  LiteralStats stats = compute_stats(episode, support_rows);
  ModelInput input = build_model_input(episode, stats, support_rows);
  GateValues g = gates(input);
  return extract_rule(g, episode.width());
}

std::vector<double> discrimination_scores(const GateValues& gates, const ModelInput& input) {
  const int T = gates.w.rows();
  const int F = gates.num_literals;
  std::vector<double> pos_mean(static_cast<std::size_t>(T), 0.0);
  std::vector<double> neg_mean(static_cast<std::size_t>(T), 0.0);
  int n_pos = 0, n_neg = 0;
  for (int m = 0; m < input.num_examples; ++m) {
    const bool positive = input.labels[static_cast<std::size_t>(m)] != 0;
    (positive ? n_pos : n_neg)++;
    for (int k = 0; k < T; ++k) {
      double truth = 1.0;
      for (int j = 0; j < F; ++j) {
        truth *= 1.0 - static_cast<double>(gates.z(k, j)) * (1.0 - input.lit(m, j));
      }
      (positive ? pos_mean : neg_mean)[static_cast<std::size_t>(k)] += truth;
    }
  }
  std::vector<double> scores(static_cast<std::size_t>(T), 0.0);
  for (int k = 0; k < T; ++k) {
    const double p = n_pos > 0 ? pos_mean[static_cast<std::size_t>(k)] / n_pos : 0.0;
    const double n = n_neg > 0 ? neg_mean[static_cast<std::size_t>(k)] / n_neg : 0.0;
    scores[static_cast<std::size_t>(k)] = p - n;
  }
  return scores;
}

}  // namespace ruleforge
