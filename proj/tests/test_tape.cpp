#include "ruleforge/tape.hpp"

#include <cmath>
#include <functional>

#include "doctest.h"
#include "ruleforge/rng.hpp"

using namespace ruleforge;

namespace {

using DTape = TapeT<double>;
using DVar = DTape::Var;
using DTensor = TensorT<double>;

DTensor random_tensor(Rng& rng, int rows, int cols, double lo, double hi) {
  DTensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = lo + (hi - lo) * rng.next_double();
  }
  return t;
}

// Central finite differences at 64-bit against the tape gradient for a
// scalar-valued graph builder. rel tol 1e-4 with a small absolute floor.
void check_gradients(const std::vector<DTensor>& inputs,
                     const std::function<DVar(DTape&, const std::vector<DVar>&)>& build,
                     double eps = 1e-6, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  DTape tape;
  std::vector<DVar> leaves;
  for (const DTensor& input : inputs) leaves.push_back(tape.leaf(input, true));
  DVar loss = build(tape, leaves);
  tape.backward(loss);

  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const DTensor& grad = tape.grad(leaves[which]);
    for (std::size_t i = 0; i < inputs[which].size(); ++i) {
      auto eval_at = [&](double shift) {
        DTape t2;
        std::vector<DVar> l2;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          DTensor copy = inputs[k];
          if (k == which) copy[i] += shift;
          l2.push_back(t2.leaf(copy, false));
        }
        return t2.val(build(t2, l2))(0, 0);
      };
      const double fd = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      const double ad = grad[i];
      const double err = std::abs(fd - ad);
      const double scale = std::max({std::abs(fd), std::abs(ad), abs_floor});
      INFO("input ", which, " entry ", i, " fd=", fd, " ad=", ad);
      CHECK(err / scale < rel_tol);
    }
  }
}

// Weighted sum to reduce any tensor to a scalar with nondegenerate cotangent.
DVar weighted(DTape& t, DVar x, std::uint64_t salt = 77) {
  const auto& v = t.val(x);
  Rng rng = Rng::stream(salt, v.size());
  DTensor weights(v.rows(), v.cols());
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = 0.25 + rng.next_double();
  return t.sum_all(t.mul_const(x, std::move(weights)));
}

}  // namespace

TEST_CASE("finite differences: elementwise binary ops") {
  Rng rng = Rng::stream(100, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 3, 4, 0.2, 1.5),
                                 random_tensor(rng, 3, 4, 0.3, 1.7)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar sum = t.add(v[0], v[1]);
    DVar diff = t.sub(v[0], v[1]);
    DVar prod = t.mul(v[0], v[1]);
    DVar quot = t.div(v[0], v[1]);
    return weighted(t, t.add(t.add(sum, diff), t.add(prod, quot)));
  });
}

TEST_CASE("finite differences: scalar and broadcast ops") {
  Rng rng = Rng::stream(101, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 2, 5, -1.0, 1.0),
                                 random_tensor(rng, 1, 1, 0.5, 1.5)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar a = t.rsub_scalar(2.0, t.add_scalar(t.scale(v[0], 1.7), 0.3));
    // Distinct weights per branch so the scalar's gradient cannot cancel.
    DVar out = weighted(t, t.add_bcast(a, v[1]), 1);
    out = t.add(out, weighted(t, t.mul_bcast(a, v[1]), 2));
    out = t.add(out, weighted(t, t.div_bcast(a, v[1]), 3));
    out = t.add(out, weighted(t, t.sub_bcast(a, v[1]), 4));
    return out;
  });
}

TEST_CASE("finite differences: nonlinearities") {
  Rng rng = Rng::stream(102, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 4, 3, 0.15, 0.85)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar s = t.sigmoid(v[0]);
    DVar th = t.tanh_(v[0]);
    DVar e = t.exp_(v[0]);
    DVar l = t.log_(v[0]);
    DVar r = t.sqrt_(v[0]);
    DVar c = t.clamp(v[0], 0.05, 0.95);
    return weighted(t, t.add(t.add(s, th), t.add(t.add(e, l), t.add(r, c))));
  });
  // relu and abs away from their kinks.
  std::vector<DTensor> signed_inputs = {random_tensor(rng, 4, 3, 0.2, 1.0)};
  signed_inputs[0](1, 1) = -0.7;
  signed_inputs[0](2, 0) = -0.4;
  check_gradients(signed_inputs, [](DTape& t, const std::vector<DVar>& v) {
    return weighted(t, t.add(t.relu(v[0]), t.abs_(v[0])));
  });
}

TEST_CASE("analytic spot checks") {
  DTape t;
  DVar x = t.leaf(DTensor::scalar(0.0), true);
  DVar s = t.sigmoid(x);
  CHECK(t.val(s)(0, 0) == doctest::Approx(0.5));
  t.backward(s);
  CHECK(t.grad(x)(0, 0) == doctest::Approx(0.25));

  // d/dx (x*y) at (2,3) -> (3,2)
  DTape t2;
  DVar a = t2.leaf(DTensor::scalar(2.0), true);
  DVar b = t2.leaf(DTensor::scalar(3.0), true);
  DVar p = t2.mul(a, b);
  t2.backward(p);
  CHECK(t2.grad(a)(0, 0) == doctest::Approx(3.0));
  CHECK(t2.grad(b)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("softmax of a uniform vector is uniform") {
  DTape t;
  DVar x = t.constant(DTensor::full(1, 5, 0.37));
  DVar s = t.softmax_rows(x);
  for (int c = 0; c < 5; ++c) CHECK(t.val(s)(0, c) == doctest::Approx(0.2));
}

TEST_CASE("finite differences: matmul, transpose, row/col ops") {
  Rng rng = Rng::stream(103, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 3, 4, -1.0, 1.0),
                                 random_tensor(rng, 4, 2, -1.0, 1.0),
                                 random_tensor(rng, 1, 2, 0.5, 1.5),
                                 random_tensor(rng, 3, 1, 0.5, 1.5)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar mm = t.matmul(v[0], v[1]);           // 3x2
    DVar tr = t.transpose(t.transpose(mm));   // 3x2
    DVar av = t.add_rowvec(tr, v[2]);
    DVar mv = t.mul_rowvec(av, v[2]);
    DVar dv = t.div_rows(mv, v[3]);
    return weighted(t, dv);
  });
}

TEST_CASE("finite differences: reductions and shape ops") {
  Rng rng = Rng::stream(104, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 3, 4, 0.3, 1.2)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar rs = t.row_sums(v[0]);
    DVar cs = t.col_sums(v[0]);
    DVar pr = t.prod_rows(v[0]);
    DVar sm = t.softmax_rows(v[0]);
    DVar sl = t.slice_cols(t.slice_rows(v[0], 0, 2), 1, 3);
    DVar rp = t.reshape(v[0], 4, 3);
    DVar top = t.add(weighted(t, rs, 1), t.add(weighted(t, cs, 2), weighted(t, pr, 3)));
    top = t.add(top, t.add(weighted(t, sm, 4), t.add(weighted(t, sl, 5), weighted(t, rp, 6))));
    return top;
  });
}

TEST_CASE("finite differences: stacking and layer norm") {
  Rng rng = Rng::stream(105, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 2, 3, -1.0, 1.0),
                                 random_tensor(rng, 2, 3, -1.0, 1.0),
                                 random_tensor(rng, 1, 3, 0.6, 1.4),
                                 random_tensor(rng, 1, 3, -0.2, 0.2)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DVar rows = t.concat_rows(v[0], v[1]);   // 4x3
    DVar cols = t.concat_cols(v[0], v[1]);   // 2x6
    DVar ln = t.layer_norm_rows(rows, v[2], v[3]);
    return t.add(weighted(t, ln, 8), weighted(t, cols, 9));
  });
}

TEST_CASE("prod_rows handles exact zeros") {
  DTape t;
  DTensor x(1, 3);
  x(0, 0) = 0.0;
  x(0, 1) = 2.0;
  x(0, 2) = 3.0;
  DVar v = t.leaf(x, true);
  DVar p = t.prod_rows(v);
  CHECK(t.val(p)(0, 0) == 0.0);
  t.backward(t.sum_all(p));
  CHECK(t.grad(v)(0, 0) == doctest::Approx(6.0));  // product of the others
  CHECK(t.grad(v)(0, 1) == doctest::Approx(0.0));
  CHECK(t.grad(v)(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("row_max forwards the max and routes gradient to the argmax") {
  Rng rng = Rng::stream(106, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 3, 4, 0.0, 1.0)};
  inputs[0](0, 2) += 2.0;  // clear argmax per row
  inputs[0](1, 0) += 2.0;
  inputs[0](2, 3) += 2.0;
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    return weighted(t, t.row_max(v[0]));
  });
}

TEST_CASE("masked softmax: single unmasked key returns that value row exactly") {
  DTape t;
  Rng rng = Rng::stream(107, 0);
  DTensor scores = random_tensor(rng, 2, 4, -1.0, 1.0);
  DTensor values = random_tensor(rng, 4, 3, -1.0, 1.0);
  std::vector<std::uint8_t> keep = {0, 0, 1, 0};
  DVar sv = t.leaf(scores, true);
  DVar vv = t.leaf(values, true);
  DVar probs = t.masked_softmax_rows(sv, keep);
  DVar out = t.matmul(probs, vv);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(t.val(out)(r, c) == values(2, c));
  }
  // Gradient w.r.t. masked keys' scores and values is exactly zero.
  t.backward(weighted(t, out));
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (c != 2) CHECK(t.grad(sv)(r, c) == 0.0);
    }
  }
  for (int r = 0; r < 4; ++r) {
    if (r == 2) continue;
    for (int c = 0; c < 3; ++c) CHECK(t.grad(vv)(r, c) == 0.0);
  }
}

TEST_CASE("finite differences: masked softmax over kept columns") {
  Rng rng = Rng::stream(108, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 2, 5, -1.0, 1.0)};
  std::vector<std::uint8_t> keep = {1, 0, 1, 1, 0};
  check_gradients(inputs, [keep](DTape& t, const std::vector<DVar>& v) {
    return weighted(t, t.masked_softmax_rows(v[0], keep));
  });
}

TEST_CASE("backward requires a scalar loss") {
  DTape t;
  DVar x = t.leaf(DTensor::full(2, 2, 1.0), true);
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("mul_const applies a constant mask") {
  Rng rng = Rng::stream(109, 0);
  std::vector<DTensor> inputs = {random_tensor(rng, 2, 3, -1.0, 1.0)};
  check_gradients(inputs, [](DTape& t, const std::vector<DVar>& v) {
    DTensor mask(2, 3);
    mask(0, 0) = 1.0;
    mask(1, 2) = 2.0;
    return weighted(t, t.mul_const(v[0], std::move(mask)));
  });
}
