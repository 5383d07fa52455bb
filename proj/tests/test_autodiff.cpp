#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtnet/autodiff.hpp"
#include "mtnet/errors.hpp"
#include "test_util.hpp"

using namespace mtnet;
using namespace mtnet::ad;

TEST_CASE("softmax of a zero row is uniform") {
  Tape t;
  Var x = t.constant(Tensor(1, 4));
  Var y = softmax_rows(x);
  for (Real v : y.value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  Tape t;
  Var y = softmax_rows(t.constant(test::random_tensor(20, 9, rng, 5.0)));
  for (std::size_t r = 0; r < 20; ++r) {
    Real s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += y.value()[r * 9 + c];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("layer norm of a constant row returns the bias") {
  Tape t;
  Var x = t.constant(Tensor(1, 3, 2.5));
  Var gain = t.constant(Tensor::row({2.0, 3.0, 4.0}));
  Var bias = t.constant(Tensor::row({0.1, -0.2, 0.3}));
  Var y = layer_norm_rows(x, gain, bias);
  CHECK(y.value()[0] == doctest::Approx(0.1));
  CHECK(y.value()[1] == doctest::Approx(-0.2));
  CHECK(y.value()[2] == doctest::Approx(0.3));
}

TEST_CASE("matmul by identity is unchanged") {
  Tape t;
  Var a = t.constant(Tensor(2, 2, {1, 2, 3, 4}));
  Var y = matmul(a, t.constant(Tensor::identity(2)));
  CHECK(std::vector<Real>(y.value().begin(), y.value().end()) == std::vector<Real>{1, 2, 3, 4});
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tape t;
  Var a = t.constant(Tensor(2, 3));
  Var b = t.constant(Tensor(4, 5));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("backward of sum and of a square") {
  Tape t;
  Var x = t.variable(Tensor::row({1.0, -2.0, 3.5}));
  t.backward(sum(x));
  for (Real g : t.grad(x)) CHECK(g == 1.0);

  Tape t2;
  Var y = t2.variable(Tensor::row({1.0, -2.0, 3.5}));
  t2.backward(sum(mul(y, y)));
  CHECK(t2.grad(y)[0] == 2.0);
  CHECK(t2.grad(y)[1] == -4.0);
  CHECK(t2.grad(y)[2] == 7.0);
}

TEST_CASE("fan-out accumulates gradients") {
  Tape t;
  Var x = t.variable(Tensor::row({2.0}));
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
  t.backward(sum(y));
  CHECK(t.grad(x)[0] == doctest::Approx(7.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  Var x = t.variable(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("backward through concat splits the gradient exactly") {
  Rng rng(11);
  Tape t;
  Var a = t.variable(test::random_tensor(2, 3, rng));
  Var b = t.variable(test::random_tensor(2, 2, rng));
  Var c = concat_cols({a, b});
  Tensor w = test::random_tensor(2, 5, rng);
  t.backward(sum(mul(c, t.constant(w))));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(t.grad(a)[r * 3 + k] == w(r, k));
    for (std::size_t k = 0; k < 2; ++k) CHECK(t.grad(b)[r * 2 + k] == w(r, 3 + k));
  }
}

TEST_CASE("dropout is identity in eval mode and unbiased in train mode") {
  Rng rng(5);
  Tape t;
  Var x = t.constant(Tensor::row({1.0, -2.0, 0.5, 4.0}));
  Var y = dropout(x, 0.4, rng, false);
  CHECK(y.index() == x.index());

  // Mean of y / x over 10,000 masks, pooled over 64 entries.
  Tensor ones(1, 64);
  for (std::size_t i = 0; i < 64; ++i) ones[i] = (i % 2 == 0) ? 1.5 : -0.5;
  Var z = t.constant(ones);
  double ratio = 0.0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    Var d = dropout(z, 0.4, rng, true);
    for (std::size_t k = 0; k < 64; ++k) ratio += d.value()[k] / ones[k];
  }
  ratio /= trials * 64.0;
  CHECK(std::abs(ratio - 1.0) < 0.01);
}

TEST_CASE("grad_check on a linear function is exact") {
  Rng rng(1);
  Tensor w = test::random_tensor(3, 1, rng);
  auto fn = [&](Tape& t, std::span<const Var> in) { return sum(matmul(in[0], t.constant(w))); };
  const auto report = grad_check(fn, {test::random_tensor(2, 3, rng)});
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("every primitive passes grad_check at 1e-6 in isolation") {
  Rng rng(17);
  GradCheckOptions opts;
  opts.tol = 1e-6;
  // Random weights make each scalar reduction exercise every output entry.
  const Tensor w34 = test::random_tensor(3, 4, rng);
  auto weighted = [&](Tape& t, Var v, const Tensor& w) { return sum(mul(v, t.constant(w))); };
  const Tensor a34 = test::random_tensor(3, 4, rng);
  const Tensor b34 = test::random_tensor(3, 4, rng);
  const Tensor b45 = test::random_tensor(4, 5, rng);
  const Tensor row4 = test::random_tensor(1, 4, rng);
  const Tensor pos34 = test::random_tensor(3, 4, rng, 0.4, 1.0);  // strictly positive

  struct Case {
    const char* name;
    TapeFn fn;
    std::vector<Tensor> inputs;
  };
  const Tensor w35 = test::random_tensor(3, 5, rng);
  const Tensor w43 = test::random_tensor(4, 3, rng);
  const Tensor w37 = test::random_tensor(3, 7, rng);
  const Tensor w64 = test::random_tensor(6, 4, rng);
  const Tensor w32 = test::random_tensor(3, 2, rng);
  const Tensor w24 = test::random_tensor(2, 4, rng);
  std::vector<Case> cases = {
      {"matmul", [&](Tape& t, std::span<const Var> v) { return weighted(t, matmul(v[0], v[1]), w35); },
       {a34, b45}},
      {"transpose", [&](Tape& t, std::span<const Var> v) { return weighted(t, transpose(v[0]), w43); },
       {a34}},
      {"add", [&](Tape& t, std::span<const Var> v) { return weighted(t, add(v[0], v[1]), w34); },
       {a34, b34}},
      {"add_broadcast",
       [&](Tape& t, std::span<const Var> v) { return weighted(t, add(v[0], v[1]), w34); },
       {a34, row4}},
      {"sub", [&](Tape& t, std::span<const Var> v) { return weighted(t, sub(v[0], v[1]), w34); },
       {a34, b34}},
      {"mul", [&](Tape& t, std::span<const Var> v) { return weighted(t, mul(v[0], v[1]), w34); },
       {a34, b34}},
      {"scale", [&](Tape& t, std::span<const Var> v) { return weighted(t, scale(v[0], -1.7), w34); },
       {a34}},
      {"concat_cols",
       [&](Tape& t, std::span<const Var> v) {
         return weighted(t, concat_cols({v[0], v[1]}), w37);
       },
       {a34, test::random_tensor(3, 3, rng)}},
      {"concat_rows",
       [&](Tape& t, std::span<const Var> v) {
         std::vector<Var> parts{v[0], v[1]};
         return weighted(t, concat_rows(parts), w64);
       },
       {a34, test::random_tensor(3, 4, rng)}},
      {"slice_rows",
       [&](Tape& t, std::span<const Var> v) { return weighted(t, slice_rows(v[0], 1, 2), w24); },
       {a34}},
      {"slice_cols",
       [&](Tape& t, std::span<const Var> v) { return weighted(t, slice_cols(v[0], 1, 2), w32); },
       {a34}},
      {"softmax_rows",
       [&](Tape& t, std::span<const Var> v) { return weighted(t, softmax_rows(v[0]), w34); },
       {a34}},
      {"layer_norm_rows",
       [&](Tape& t, std::span<const Var> v) {
         return weighted(t, layer_norm_rows(v[0], v[1], v[2]), w34);
       },
       {a34, row4, test::random_tensor(1, 4, rng)}},
      {"sigmoid", [&](Tape& t, std::span<const Var> v) { return weighted(t, sigmoid(v[0]), w34); },
       {a34}},
      {"tanh", [&](Tape& t, std::span<const Var> v) { return weighted(t, tanh(v[0]), w34); },
       {a34}},
      {"relu", [&](Tape& t, std::span<const Var> v) { return weighted(t, relu(v[0]), w34); },
       {a34}},
      {"exp", [&](Tape& t, std::span<const Var> v) { return weighted(t, exp(v[0]), w34); },
       {a34}},
      {"log", [&](Tape& t, std::span<const Var> v) { return weighted(t, log(v[0]), w34); },
       {pos34}},
      {"gather_rows",
       [&](Tape& t, std::span<const Var> v) {
         const std::vector<std::size_t> idx{2, 0, 2};
         return weighted(t, gather_rows(v[0], idx), w34);
       },
       {a34}},
      {"masked_fill",
       [&](Tape& t, std::span<const Var> v) {
         std::vector<std::uint8_t> m(12, 0);
         m[1] = m[7] = 1;
         return weighted(t, masked_fill(v[0], m, -3.0), w34);
       },
       {a34}},
      {"dropout",
       [&](Tape& t, std::span<const Var> v) {
         Rng local(99);  // same mask on every evaluation
         return weighted(t, dropout(v[0], 0.3, local, true), w34);
       },
       {a34}},
      {"sum", [&](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[0])); }, {a34}},
      {"mean", [&](Tape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }, {a34}},
      {"cross_entropy_logits",
       [&](Tape&, std::span<const Var> v) {
         const std::vector<std::size_t> tg{3, 0, 1};
         return cross_entropy_logits(v[0], tg);
       },
       {a34}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto report = grad_check(c.fn, c.inputs, opts);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("cross entropy of uniform logits is log of the class count") {
  Tape t;
  const std::vector<std::size_t> target{2};
  Var l = cross_entropy_logits(t.constant(Tensor(1, 5)), target);
  CHECK(std::abs(l.item() - std::log(5.0)) < 1e-12);
}

TEST_CASE("gather out of range is a data error") {
  Tape t;
  const std::vector<std::size_t> idx{3};
  CHECK_THROWS_AS(gather_rows(t.constant(Tensor(3, 2)), idx), DataError);
}

TEST_CASE("parameters alias their storage and accumulate into sinks") {
  ParamStore store;
  const ParamId w = store.add("w", Tensor::row({1.0, 2.0}));
  CHECK_THROWS(store.add("w", Tensor::row({0.0})));
  GradBuffers sinks(store);
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    Var p = t.param(store[w], sinks[w]);
    t.backward(sum(mul(p, p)));
  }
  CHECK(sinks[w][0] == 4.0);  // two passes of 2 * 1
  CHECK(sinks[w][1] == 8.0);
  CHECK(store[w].grad()[0] == 0.0);
}

TEST_CASE("inference tapes record no gradients") {
  Tape t(false);
  Var x = t.variable(Tensor::row({1.0}));
  Var y = sum(mul(x, x));
  CHECK_FALSE(t.needs_grad(y.index()));
  CHECK(t.op_counts().at("mul") == 1);
}
