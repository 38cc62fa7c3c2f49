#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "ruleforge/tensor.hpp"

namespace ruleforge {

// Reverse-mode tape over dense 2-D tensors. One tape per computation; not
// copyable or movable (backward closures capture `this`). Instantiated with
// float for training/inference and double for the gradient-check harness.
template <typename S>
class TapeT {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  std::size_t num_nodes() const { return nodes_.size(); }

  const TensorT<S>& val(Var v) const { return nodes_[check(v)].value; }
  const TensorT<S>& grad(Var v) const { return nodes_[check(v)].grad; }
  bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

  Var leaf(TensorT<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, {});
  }
  Var constant(TensorT<S> value) { return leaf(std::move(value), false); }
  Var constant_scalar(S value) { return constant(TensorT<S>::scalar(value)); }

  // ---- elementwise binary ----

  Var add(Var a, Var b) {
    return binary_elementwise(
        a, b, [](S x, S y) { return x + y; },
        [](S, S, S, S g, S& da, S& db) {
          da += g;
          db += g;
        });
  }

  Var sub(Var a, Var b) {
    return binary_elementwise(
        a, b, [](S x, S y) { return x - y; },
        [](S, S, S, S g, S& da, S& db) {
          da += g;
          db -= g;
        });
  }

  Var mul(Var a, Var b) {
    return binary_elementwise(
        a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S, S g, S& da, S& db) {
          da += g * y;
          db += g * x;
        });
  }

  Var div(Var a, Var b) {
    return binary_elementwise(
        a, b, [](S x, S y) { return x / y; },
        [](S x, S y, S, S g, S& da, S& db) {
          da += g / y;
          db -= g * x / (y * y);
        });
  }

  // ---- scalar-constant ----

  Var scale(Var a, S c) {
    return unary_elementwise(
        a, [c](S x) { return c * x; }, [c](S, S, S g) { return c * g; });
  }
  Var add_scalar(Var a, S c) {
    return unary_elementwise(
        a, [c](S x) { return x + c; }, [](S, S, S g) { return g; });
  }
  // c - x
  Var rsub_scalar(S c, Var a) {
    return unary_elementwise(
        a, [c](S x) { return c - x; }, [](S, S, S g) { return -g; });
  }

  // ---- (1x1)-node broadcast ----

  Var mul_bcast(Var a, Var s) { return bcast_op(a, s, BcastKind::kMul); }
  Var div_bcast(Var a, Var s) { return bcast_op(a, s, BcastKind::kDiv); }
  Var sub_bcast(Var a, Var s) { return bcast_op(a, s, BcastKind::kSub); }
  Var add_bcast(Var a, Var s) { return bcast_op(a, s, BcastKind::kAdd); }

  // ---- elementwise unary ----

  Var sigmoid(Var a) {
    return unary_elementwise(
        a,
        [](S x) {
          if (x >= S(0)) {
            S e = std::exp(-x);
            return S(1) / (S(1) + e);
          }
          S e = std::exp(x);
          return e / (S(1) + e);
        },
        [](S, S y, S g) { return g * y * (S(1) - y); });
  }

  Var tanh_(Var a) {
    return unary_elementwise(
        a, [](S x) { return std::tanh(x); },
        [](S, S y, S g) { return g * (S(1) - y * y); });
  }

  Var exp_(Var a) {
    return unary_elementwise(
        a, [](S x) { return std::exp(x); }, [](S, S y, S g) { return g * y; });
  }

  Var log_(Var a) {
    return unary_elementwise(
        a, [](S x) { return std::log(x); }, [](S x, S, S g) { return g / x; });
  }

  Var sqrt_(Var a) {
    return unary_elementwise(
        a, [](S x) { return std::sqrt(x); },
        [](S, S y, S g) { return g / (S(2) * y); });
  }

  Var relu(Var a) {
    return unary_elementwise(
        a, [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S, S g) { return x > S(0) ? g : S(0); });
  }

  Var abs_(Var a) {
    return unary_elementwise(
        a, [](S x) { return std::abs(x); },
        [](S x, S, S g) { return x >= S(0) ? g : -g; });
  }

  // Gradient passes inside the closed range, zero outside.
  Var clamp(Var a, S lo, S hi) {
    return unary_elementwise(
        a, [lo, hi](S x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](S x, S, S g) { return (x >= lo && x <= hi) ? g : S(0); });
  }

  // Elementwise multiply by a constant tensor (masks, flips).
  Var mul_const(Var a, TensorT<S> mask) {
    const TensorT<S>& av = val(a);
    if (!av.same_shape(mask)) throw std::invalid_argument("mul_const: shape mismatch");
    TensorT<S> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
    Var m = constant(std::move(mask));
    return make_node(std::move(out), {a, m},
                     [this, a, m](const TensorT<S>& g, const TensorT<S>&) {
      if (needs_grad(a)) {
        TensorT<S>& ga = grad_ref(a);
        const TensorT<S>& mv = val(m);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mv[i];
      }
    });
  }

  // ---- matrix ops ----

  Var matmul(Var a, Var b) {
    const TensorT<S>& av = val(a);
    const TensorT<S>& bv = val(b);
    if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
    TensorT<S> out(av.rows(), bv.cols());
    map(out).noalias() = cmap(av) * cmap(bv);
    return make_node(std::move(out), {a, b},
                     [this, a, b](const TensorT<S>& g, const TensorT<S>&) {
      CMapMat gm(g.data(), g.rows(), g.cols());
      if (needs_grad(a)) {
        map(grad_ref(a)).noalias() += gm * cmap(val(b)).transpose();
      }
      if (needs_grad(b)) {
        map(grad_ref(b)).noalias() += cmap(val(a)).transpose() * gm;
      }
    });
  }

  Var transpose(Var a) {
    const TensorT<S>& av = val(a);
    TensorT<S> out(av.cols(), av.rows());
    map(out) = cmap(av).transpose();
    return make_node(std::move(out), {a},
                     [this, a](const TensorT<S>& g, const TensorT<S>&) {
      if (needs_grad(a)) map(grad_ref(a)) += cmap(g).transpose();
    });
  }

  // X + v broadcast over rows; v is (1 x cols).
  Var add_rowvec(Var x, Var v) {
    const TensorT<S>& xv = val(x);
    const TensorT<S>& vv = val(v);
    if (vv.rows() != 1 || vv.cols() != xv.cols()) {
      throw std::invalid_argument("add_rowvec: vector shape mismatch");
    }
    TensorT<S> out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      for (int c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) + vv(0, c);
    }
    return make_node(std::move(out), {x, v},
                     [this, x, v](const TensorT<S>& g, const TensorT<S>&) {
      if (needs_grad(x)) {
        TensorT<S>& gx = grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (needs_grad(v)) {
        TensorT<S>& gv = grad_ref(v);
        for (int r = 0; r < g.rows(); ++r) {
          for (int c = 0; c < g.cols(); ++c) gv(0, c) += g(r, c);
        }
      }
    });
  }

  // X * v broadcast over rows; v is (1 x cols).
  Var mul_rowvec(Var x, Var v) {
    const TensorT<S>& xv = val(x);
    const TensorT<S>& vv = val(v);
    if (vv.rows() != 1 || vv.cols() != xv.cols()) {
      throw std::invalid_argument("mul_rowvec: vector shape mismatch");
    }
    TensorT<S> out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      for (int c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) * vv(0, c);
    }
    return make_node(std::move(out), {x, v},
                     [this, x, v](const TensorT<S>& g, const TensorT<S>&) {
      const TensorT<S>& xv2 = val(x);
      const TensorT<S>& vv2 = val(v);
      if (needs_grad(x)) {
        TensorT<S>& gx = grad_ref(x);
        for (int r = 0; r < g.rows(); ++r) {
          for (int c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c) * vv2(0, c);
        }
      }
      if (needs_grad(v)) {
        TensorT<S>& gv = grad_ref(v);
        for (int r = 0; r < g.rows(); ++r) {
          for (int c = 0; c < g.cols(); ++c) gv(0, c) += g(r, c) * xv2(r, c);
        }
      }
    });
  }

  // Row i of X divided by v_i; v is (rows x 1).
  Var div_rows(Var x, Var v) {
    const TensorT<S>& xv = val(x);
    const TensorT<S>& vv = val(v);
    if (vv.cols() != 1 || vv.rows() != xv.rows()) {
      throw std::invalid_argument("div_rows: vector shape mismatch");
    }
    TensorT<S> out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      for (int c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / vv(r, 0);
    }
    return make_node(std::move(out), {x, v},
                     [this, x, v](const TensorT<S>& g, const TensorT<S>&) {
      const TensorT<S>& xv2 = val(x);
      const TensorT<S>& vv2 = val(v);
      if (needs_grad(x)) {
        TensorT<S>& gx = grad_ref(x);
        for (int r = 0; r < g.rows(); ++r) {
          for (int c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c) / vv2(r, 0);
        }
      }
      if (needs_grad(v)) {
        TensorT<S>& gv = grad_ref(v);
        for (int r = 0; r < g.rows(); ++r) {
          S acc = S(0);
          for (int c = 0; c < g.cols(); ++c) acc += g(r, c) * xv2(r, c);
          gv(r, 0) -= acc / (vv2(r, 0) * vv2(r, 0));
        }
      }
    });
  }

  // ---- reductions ----

  Var row_sums(Var x) {  // (rows x 1)
    const TensorT<S>& xv = val(x);
    TensorT<S> out(xv.rows(), 1);
    for (int r = 0; r < xv.rows(); ++r) {
      S acc = S(0);
      for (int c = 0; c < xv.cols(); ++c) acc += xv(r, c);
      out(r, 0) = acc;
    }
    return make_node(std::move(out), {x},
                     [this, x](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(x)) return;
      TensorT<S>& gx = grad_ref(x);
      for (int r = 0; r < gx.rows(); ++r) {
        for (int c = 0; c < gx.cols(); ++c) gx(r, c) += g(r, 0);
      }
    });
  }

  Var col_sums(Var x) {  // (1 x cols)
    const TensorT<S>& xv = val(x);
    TensorT<S> out(1, xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      for (int c = 0; c < xv.cols(); ++c) out(0, c) += xv(r, c);
    }
    return make_node(std::move(out), {x},
                     [this, x](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(x)) return;
      TensorT<S>& gx = grad_ref(x);
      for (int r = 0; r < gx.rows(); ++r) {
        for (int c = 0; c < gx.cols(); ++c) gx(r, c) += g(0, c);
      }
    });
  }

  Var sum_all(Var x) {
    const TensorT<S>& xv = val(x);
    S acc = S(0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    return make_node(TensorT<S>::scalar(acc), {x},
                     [this, x](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(x)) return;
      TensorT<S>& gx = grad_ref(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
    });
  }

  Var mean_all(Var x) {
    const std::size_t n = val(x).size();
    return scale(sum_all(x), S(1) / static_cast<S>(n));
  }

  // Per-row product with zero-safe backward via prefix/suffix products.
  Var prod_rows(Var x) {  // (rows x 1)
    const TensorT<S>& xv = val(x);
    TensorT<S> out(xv.rows(), 1);
    for (int r = 0; r < xv.rows(); ++r) {
      S acc = S(1);
      for (int c = 0; c < xv.cols(); ++c) acc *= xv(r, c);
      out(r, 0) = acc;
    }
    return make_node(std::move(out), {x},
                     [this, x](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(x)) return;
      const TensorT<S>& xv2 = val(x);
      TensorT<S>& gx = grad_ref(x);
      const int cols = xv2.cols();
      std::vector<S> suffix(static_cast<std::size_t>(cols) + 1);
      for (int r = 0; r < xv2.rows(); ++r) {
        suffix[static_cast<std::size_t>(cols)] = S(1);
        for (int c = cols - 1; c >= 0; --c) {
          suffix[static_cast<std::size_t>(c)] =
              suffix[static_cast<std::size_t>(c) + 1] * xv2(r, c);
        }
        S prefix = S(1);
        for (int c = 0; c < cols; ++c) {
          gx(r, c) += g(r, 0) * prefix * suffix[static_cast<std::size_t>(c) + 1];
          prefix *= xv2(r, c);
        }
      }
    });
  }

  // Per-row max; subgradient flows to the first argmax.
  Var row_max(Var x) {  // (rows x 1)
    const TensorT<S>& xv = val(x);
    TensorT<S> out(xv.rows(), 1);
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(xv.rows()));
    for (int r = 0; r < xv.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < xv.cols(); ++c) {
        if (xv(r, c) > xv(r, best)) best = c;
      }
      (*argmax)[static_cast<std::size_t>(r)] = best;
      out(r, 0) = xv(r, best);
    }
    return make_node(std::move(out), {x},
                     [this, x, argmax](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(x)) return;
      TensorT<S>& gx = grad_ref(x);
      for (int r = 0; r < gx.rows(); ++r) {
        gx(r, (*argmax)[static_cast<std::size_t>(r)]) += g(r, 0);
      }
    });
  }

  Var softmax_rows(Var x) {
    const TensorT<S>& xv = val(x);
    TensorT<S> out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      S mx = xv(r, 0);
      for (int c = 1; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
      S total = S(0);
      for (int c = 0; c < xv.cols(); ++c) {
        out(r, c) = std::exp(xv(r, c) - mx);
        total += out(r, c);
      }
      for (int c = 0; c < xv.cols(); ++c) out(r, c) /= total;
    }
    return softmax_backward_node(x, std::move(out));
  }

  // Softmax over unmasked columns; masked columns get exactly zero
  // probability and zero gradient. Rows are all zeros when no column is
  // kept.
  Var masked_softmax_rows(Var x, const std::vector<std::uint8_t>& keep) {
    const TensorT<S>& xv = val(x);
    if (keep.size() != static_cast<std::size_t>(xv.cols())) {
      throw std::invalid_argument("masked_softmax_rows: mask length mismatch");
    }
    TensorT<S> out(xv.rows(), xv.cols());
    bool any = false;
    for (std::uint8_t k : keep) any = any || (k != 0);
    if (any) {
      for (int r = 0; r < xv.rows(); ++r) {
        S mx = -std::numeric_limits<S>::infinity();
        for (int c = 0; c < xv.cols(); ++c) {
          if (keep[static_cast<std::size_t>(c)]) mx = std::max(mx, xv(r, c));
        }
        S total = S(0);
        for (int c = 0; c < xv.cols(); ++c) {
          if (keep[static_cast<std::size_t>(c)]) {
            out(r, c) = std::exp(xv(r, c) - mx);
            total += out(r, c);
          } else {
            out(r, c) = S(0);
          }
        }
        for (int c = 0; c < xv.cols(); ++c) out(r, c) /= total;
      }
    }
    return softmax_backward_node(x, std::move(out));
  }

  // ---- shape ops ----

  Var reshape(Var a, int rows, int cols) {
    const TensorT<S>& av = val(a);
    if (static_cast<std::size_t>(rows) * cols != av.size()) {
      throw std::invalid_argument("reshape: element count mismatch");
    }
    TensorT<S> out(rows, cols);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i];
    return make_node(std::move(out), {a},
                     [this, a](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(a)) return;
      TensorT<S>& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  Var slice_rows(Var a, int r0, int r1) {
    const TensorT<S>& av = val(a);
    if (r0 < 0 || r1 > av.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    TensorT<S> out(r1 - r0, av.cols());
    for (int r = r0; r < r1; ++r) {
      for (int c = 0; c < av.cols(); ++c) out(r - r0, c) = av(r, c);
    }
    return make_node(std::move(out), {a},
                     [this, a, r0](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(a)) return;
      TensorT<S>& ga = grad_ref(a);
      for (int r = 0; r < g.rows(); ++r) {
        for (int c = 0; c < g.cols(); ++c) ga(r + r0, c) += g(r, c);
      }
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const TensorT<S>& av = val(a);
    if (c0 < 0 || c1 > av.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    TensorT<S> out(av.rows(), c1 - c0);
    for (int r = 0; r < av.rows(); ++r) {
      for (int c = c0; c < c1; ++c) out(r, c - c0) = av(r, c);
    }
    return make_node(std::move(out), {a},
                     [this, a, c0](const TensorT<S>& g, const TensorT<S>&) {
      if (!needs_grad(a)) return;
      TensorT<S>& ga = grad_ref(a);
      for (int r = 0; r < g.rows(); ++r) {
        for (int c = 0; c < g.cols(); ++c) ga(r, c + c0) += g(r, c);
      }
    });
  }

  Var stack_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_rows: empty");
    int rows = 0;
    const int cols = val(parts[0]).cols();
    for (Var p : parts) {
      if (val(p).cols() != cols) throw std::invalid_argument("stack_rows: column mismatch");
      rows += val(p).rows();
    }
    TensorT<S> out(rows, cols);
    int at = 0;
    for (Var p : parts) {
      const TensorT<S>& pv = val(p);
      for (int r = 0; r < pv.rows(); ++r) {
        for (int c = 0; c < cols; ++c) out(at + r, c) = pv(r, c);
      }
      at += pv.rows();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return make_node(std::move(out), owned,
                     [this, owned](const TensorT<S>& g, const TensorT<S>&) {
      int at2 = 0;
      for (Var p : owned) {
        const int pr = val(p).rows();
        if (needs_grad(p)) {
          TensorT<S>& gp = grad_ref(p);
          for (int r = 0; r < pr; ++r) {
            for (int c = 0; c < g.cols(); ++c) gp(r, c) += g(at2 + r, c);
          }
        }
        at2 += pr;
      }
    });
  }

  Var stack_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_cols: empty");
    int cols = 0;
    const int rows = val(parts[0]).rows();
    for (Var p : parts) {
      if (val(p).rows() != rows) throw std::invalid_argument("stack_cols: row mismatch");
      cols += val(p).cols();
    }
    TensorT<S> out(rows, cols);
    int at = 0;
    for (Var p : parts) {
      const TensorT<S>& pv = val(p);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < pv.cols(); ++c) out(r, at + c) = pv(r, c);
      }
      at += pv.cols();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return make_node(std::move(out), owned,
                     [this, owned](const TensorT<S>& g, const TensorT<S>&) {
      int at2 = 0;
      for (Var p : owned) {
        const int pc = val(p).cols();
        if (needs_grad(p)) {
          TensorT<S>& gp = grad_ref(p);
          for (int r = 0; r < g.rows(); ++r) {
            for (int c = 0; c < pc; ++c) gp(r, c) += g(r, at2 + c);
          }
        }
        at2 += pc;
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    std::array<Var, 2> parts{a, b};
    return stack_cols(std::span<const Var>(parts));
  }
  Var concat_rows(Var a, Var b) {
    std::array<Var, 2> parts{a, b};
    return stack_rows(std::span<const Var>(parts));
  }

  // ---- layer norm over rows ----

  Var layer_norm_rows(Var x, Var gain, Var bias, S eps = S(1e-5)) {
    const TensorT<S>& xv = val(x);
    const TensorT<S>& gv = val(gain);
    const TensorT<S>& bv = val(bias);
    if (gv.rows() != 1 || bv.rows() != 1 || gv.cols() != xv.cols() || bv.cols() != xv.cols()) {
      throw std::invalid_argument("layer_norm_rows: gain/bias shape mismatch");
    }
    const int rows = xv.rows(), cols = xv.cols();
    TensorT<S> out(rows, cols);
    auto xhat = std::make_shared<TensorT<S>>(rows, cols);
    auto inv_sigma = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      S mean = S(0);
      for (int c = 0; c < cols; ++c) mean += xv(r, c);
      mean /= static_cast<S>(cols);
      S var = S(0);
      for (int c = 0; c < cols; ++c) {
        S d = xv(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<S>(cols);
      S is = S(1) / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<std::size_t>(r)] = is;
      for (int c = 0; c < cols; ++c) {
        S xh = (xv(r, c) - mean) * is;
        (*xhat)(r, c) = xh;
        out(r, c) = gv(0, c) * xh + bv(0, c);
      }
    }
    return make_node(std::move(out), {x, gain, bias},
                     [this, x, gain, bias, xhat, inv_sigma](const TensorT<S>& g,
                                                            const TensorT<S>&) {
      const TensorT<S>& gv2 = val(gain);
      const int rows2 = g.rows(), cols2 = g.cols();
      if (needs_grad(gain)) {
        TensorT<S>& gg = grad_ref(gain);
        for (int r = 0; r < rows2; ++r) {
          for (int c = 0; c < cols2; ++c) gg(0, c) += g(r, c) * (*xhat)(r, c);
        }
      }
      if (needs_grad(bias)) {
        TensorT<S>& gb = grad_ref(bias);
        for (int r = 0; r < rows2; ++r) {
          for (int c = 0; c < cols2; ++c) gb(0, c) += g(r, c);
        }
      }
      if (needs_grad(x)) {
        TensorT<S>& gx = grad_ref(x);
        for (int r = 0; r < rows2; ++r) {
          S mean_t = S(0), mean_tx = S(0);
          for (int c = 0; c < cols2; ++c) {
            S t = g(r, c) * gv2(0, c);
            mean_t += t;
            mean_tx += t * (*xhat)(r, c);
          }
          mean_t /= static_cast<S>(cols2);
          mean_tx /= static_cast<S>(cols2);
          const S is = (*inv_sigma)[static_cast<std::size_t>(r)];
          for (int c = 0; c < cols2; ++c) {
            S t = g(r, c) * gv2(0, c);
            gx(r, c) += is * (t - mean_t - (*xhat)(r, c) * mean_tx);
          }
        }
      }
    });
  }

  // ---- backward ----

  void backward(Var loss) {
    const TensorT<S>& lv = val(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw std::invalid_argument("backward: loss must be scalar");
    }
    for (int i = 0; i <= loss.id; ++i) {
      Node& node = nodes_[static_cast<std::size_t>(i)];
      if (node.needs_grad) {
        node.grad = TensorT<S>(node.value.rows(), node.value.cols());
      }
    }
    if (!nodes_[static_cast<std::size_t>(loss.id)].needs_grad) return;
    nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& node = nodes_[static_cast<std::size_t>(i)];
      if (node.needs_grad && node.back) node.back(node.grad, node.value);
    }
  }

 private:
  using BackFn = std::function<void(const TensorT<S>& grad, const TensorT<S>& value)>;

  struct Node {
    TensorT<S> value;
    TensorT<S> grad;
    BackFn back;
    bool needs_grad = false;
  };

  int check(Var v) const {
    assert(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size());
    return v.id;
  }

  TensorT<S>& grad_ref(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  MapMat map(TensorT<S>& t) { return MapMat(t.data(), t.rows(), t.cols()); }
  CMapMat cmap(const TensorT<S>& t) const {
    return CMapMat(t.data(), t.rows(), t.cols());
  }

  Var push(TensorT<S> value, bool needs_grad, BackFn back) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make_node(TensorT<S> value, std::initializer_list<Var> parents, BackFn back) {
    bool needs = false;
    for (Var p : parents) needs = needs || needs_grad(p);
    return push(std::move(value), needs, needs ? std::move(back) : nullptr);
  }

  Var make_node(TensorT<S> value, const std::vector<Var>& parents, BackFn back) {
    bool needs = false;
    for (Var p : parents) needs = needs || needs_grad(p);
    return push(std::move(value), needs, needs ? std::move(back) : nullptr);
  }

  // bwd(x, y, g) -> contribution to dx given input x, output y, out-grad g.
  template <typename F, typename B>
  Var unary_elementwise(Var a, F fwd, B bwd) {
    const TensorT<S>& av = val(a);
    TensorT<S> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make_node(std::move(out), {a},
                     [this, a, bwd](const TensorT<S>& g, const TensorT<S>& y) {
      if (!needs_grad(a)) return;
      const TensorT<S>& av2 = val(a);
      TensorT<S>& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += bwd(av2[i], y[i], g[i]);
    });
  }

  // bwd(x, y, out_value, g, da, db) accumulates into da/db.
  template <typename F, typename B>
  Var binary_elementwise(Var a, Var b, F fwd, B bwd) {
    const TensorT<S>& av = val(a);
    const TensorT<S>& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("elementwise: shape mismatch");
    TensorT<S> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_node(std::move(out), {a, b},
                     [this, a, b, bwd](const TensorT<S>& g, const TensorT<S>& y) {
      const TensorT<S>& av2 = val(a);
      const TensorT<S>& bv2 = val(b);
      const bool ga_needed = needs_grad(a);
      const bool gb_needed = needs_grad(b);
      TensorT<S> dummy(1, 1);
      TensorT<S>& ga = ga_needed ? grad_ref(a) : dummy;
      TensorT<S>& gb = gb_needed ? grad_ref(b) : dummy;
      for (std::size_t i = 0; i < g.size(); ++i) {
        S da = S(0), db = S(0);
        bwd(av2[i], bv2[i], y[i], g[i], da, db);
        if (ga_needed) ga[i] += da;
        if (gb_needed) gb[i] += db;
      }
    });
  }

  enum class BcastKind { kAdd, kSub, kMul, kDiv };

  Var bcast_op(Var a, Var s, BcastKind kind) {
    const TensorT<S>& av = val(a);
    const TensorT<S>& sv = val(s);
    if (sv.rows() != 1 || sv.cols() != 1) {
      throw std::invalid_argument("bcast op: scalar operand must be 1x1");
    }
    const S c = sv(0, 0);
    TensorT<S> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) {
      switch (kind) {
        case BcastKind::kAdd: out[i] = av[i] + c; break;
        case BcastKind::kSub: out[i] = av[i] - c; break;
        case BcastKind::kMul: out[i] = av[i] * c; break;
        case BcastKind::kDiv: out[i] = av[i] / c; break;
      }
    }
    return make_node(std::move(out), {a, s},
                     [this, a, s, kind](const TensorT<S>& g, const TensorT<S>&) {
      const TensorT<S>& av2 = val(a);
      const S c2 = val(s)(0, 0);
      if (needs_grad(a)) {
        TensorT<S>& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BcastKind::kAdd:
            case BcastKind::kSub: ga[i] += g[i]; break;
            case BcastKind::kMul: ga[i] += g[i] * c2; break;
            case BcastKind::kDiv: ga[i] += g[i] / c2; break;
          }
        }
      }
      if (needs_grad(s)) {
        TensorT<S>& gs = grad_ref(s);
        S acc = S(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BcastKind::kAdd: acc += g[i]; break;
            case BcastKind::kSub: acc -= g[i]; break;
            case BcastKind::kMul: acc += g[i] * av2[i]; break;
            case BcastKind::kDiv: acc -= g[i] * av2[i] / (c2 * c2); break;
          }
        }
        gs(0, 0) += acc;
      }
    });
  }

  Var softmax_backward_node(Var x, TensorT<S> probs) {
    return make_node(std::move(probs), {x},
                     [this, x](const TensorT<S>& g, const TensorT<S>& p) {
      if (!needs_grad(x)) return;
      TensorT<S>& gx = grad_ref(x);
      for (int r = 0; r < p.rows(); ++r) {
        S inner = S(0);
        for (int c = 0; c < p.cols(); ++c) inner += g(r, c) * p(r, c);
        for (int c = 0; c < p.cols(); ++c) {
          gx(r, c) += p(r, c) * (g(r, c) - inner);
        }
      }
    });
  }

  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
};

using Tape = TapeT<float>;

}  // namespace ruleforge
