// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "bifp/autodiff.hpp"
#include "bifp/error.hpp"
#include "oracles.hpp"

using namespace bifp;
using ad::Tape;
using ad::Tensor;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> g;
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = g(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Gradient of `build(tape, params)` w.r.t. every parameter versus central
// differences of the same expression.
double fd_error(std::vector<Tensor>& params, const std::function<ad::Var(Tape&, std::vector<ad::Var>&)>& build) {
  std::vector<double> analytic;
  {
    Tape tape;
    std::vector<ad::Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    tape.backward(build(tape, vars));
    for (auto& p : params) analytic.insert(analytic.end(), p.grad()->begin(), p.grad()->end());
  }
  std::vector<double> flat;
  for (auto& p : params) flat.insert(flat.end(), p.values().begin(), p.values().end());
  auto f = [&](std::span<const double> x) {
    std::vector<Tensor> copies;
    std::size_t at = 0;
    for (auto& p : params) {
      std::vector<double> v(x.begin() + static_cast<std::ptrdiff_t>(at),
                            x.begin() + static_cast<std::ptrdiff_t>(at + p.size()));
      at += p.size();
      copies.emplace_back(p.shape(), std::move(v));
    }
    Tape tape;
    std::vector<ad::Var> vars;
    for (auto& c : copies) vars.push_back(tape.parameter(c));
    return build(tape, vars).item();
  };
  return oracle::max_relative_error(analytic, oracle::central_gradient(f, flat));
}

}  // namespace

TEST_CASE("forward ops on hand examples", "[autodiff]") {
  Tape tape;
  auto a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor::matrix(2, 1, {1, 0}));
  auto c = ad::matmul(a, b);
  CHECK(c.shape() == ad::Shape{2, 1});
  CHECK(c.value()[0] == 1.0);
  CHECK(c.value()[1] == 3.0);

  auto r = ad::relu(tape.constant(Tensor::vector({-1, 0, 2})));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);

  CHECK(ad::sigmoid(tape.constant(Tensor::scalar(0.0))).item() == 0.5);
}

TEST_CASE("backward on hand examples", "[autodiff]") {
  SECTION("mean of squares") {
    Tensor w = Tensor::vector({3.0}, true);
    Tape tape;
    auto v = tape.parameter(w);
    tape.backward(ad::mean(ad::multiply(v, v)));
    REQUIRE(w.grad());
    CHECK((*w.grad())[0] == 6.0);
  }
  SECTION("sigmoid slope at zero") {
    Tensor w = Tensor::matrix(1, 1, {0.0}, true);
    Tape tape;
    auto y = ad::sigmoid(ad::matmul(tape.parameter(w), tape.constant(Tensor::matrix(1, 1, {1.0}))));
    tape.backward(ad::sum(y));
    CHECK((*w.grad())[0] == 0.25);
  }
}

TEST_CASE("random two-layer net matches finite differences", "[autodiff]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> p = {random_tensor({6, 4}, rng), random_tensor({6}, rng), random_tensor({1, 6}, rng),
                             random_tensor({1}, rng)};
    const Tensor x = random_tensor({8, 4}, rng, false);
    std::vector<double> labels(8);
    for (std::size_t i = 0; i < 8; ++i) labels[i] = i % 2 ? 1.0 : -1.0;
    const double err = fd_error(p, [&](Tape& t, std::vector<ad::Var>& v) {
      auto h = ad::sigmoid(ad::add(ad::matmul_transposed(t.constant(x), v[0]), v[1]));
      auto f = ad::reshape(ad::add(ad::matmul_transposed(h, v[2]), v[3]), {8});
      return ad::logistic_loss(f, t.constant(Tensor::vector(labels)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("every op agrees with finite differences", "[autodiff]") {
  std::mt19937_64 rng(5);
  std::vector<Tensor> p = {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({3, 4}, rng)};
  SECTION("matmul and relu") {
    std::vector<Tensor> q = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    CHECK(fd_error(q, [](Tape&, std::vector<ad::Var>& v) { return ad::sum(ad::relu(ad::matmul(v[0], v[1]))); }) <
          1e-4);
  }
  SECTION("broadcast add, subtract, scale, shift") {
    CHECK(fd_error(p, [](Tape&, std::vector<ad::Var>& v) {
            auto s = ad::subtract(ad::add(v[0], v[1]), ad::scale(v[2], 0.5));
            return ad::mean(ad::multiply(ad::shift(s, 0.3), s));
          }) < 1e-4);
  }
  SECTION("concat and reshape") {
    CHECK(fd_error(p, [](Tape&, std::vector<ad::Var>& v) {
            std::vector<ad::Var> parts{v[0], ad::reshape(v[1], {1, 4}), v[2]};
            auto c = ad::reshape(ad::concat(parts), {28});
            return ad::sum(ad::multiply(ad::sigmoid(c), c));
          }) < 1e-4);
  }
  SECTION("straight-through mask") {
    Tensor mask = Tensor::matrix(3, 4, {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0});
    // Forward uses the hard mask; the score gradient is out_grad * weight,
    // which is the derivative of sum(weight * scores) w.r.t. the scores.
    Tensor w = p[0], s = p[2];
    w.set_requires_grad(true);
    s.set_requires_grad(true);
    Tape tape;
    auto out = ad::straight_through_mask(tape.parameter(w), tape.parameter(s), tape.constant(mask));
    for (std::size_t i = 0; i < 12; ++i) CHECK(out.value()[i] == w[i] * mask[i]);
    tape.backward(ad::sum(out));
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK((*w.grad())[i] == mask[i]);
      CHECK((*s.grad())[i] == w[i]);
    }
  }
  SECTION("logistic loss is stable for large margins") {
    Tape tape;
    auto l = ad::logistic_loss(tape.constant(Tensor::vector({800.0, -800.0})), tape.constant(Tensor::vector({1, 1})));
    CHECK(l.item() == Catch::Approx(400.0));
  }
}

TEST_CASE("shape errors name both shapes", "[autodiff]") {
  Tape tape;
  auto a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto b = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_MATCHES(ad::matmul(a, b), ShapeError,
                       MessageMatches(ContainsSubstring("[2 x 3]") && ContainsSubstring("[2 x 2]")));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("non-finite inputs are rejected", "[autodiff]") {
  Tape tape;
  CHECK_THROWS_AS(tape.constant(Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()})), NonFiniteError);
  Tensor inf = Tensor::vector({std::numeric_limits<double>::infinity()}, true);
  CHECK_THROWS_AS(tape.parameter(inf), NonFiniteError);
  auto big = tape.constant(Tensor::vector({1e300}));
  CHECK_THROWS_AS(ad::multiply(big, big), NonFiniteError);
}

TEST_CASE("tape contract", "[autodiff]") {
  Tensor w = Tensor::vector({1.0, 2.0}, true);
  Tensor unused = Tensor::vector({5.0}, true);
  unused.set_grad({42.0});

  SECTION("backward twice is rejected") {
    Tape tape;
    auto loss = ad::sum(ad::multiply(tape.parameter(w), tape.parameter(w)));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), TapeError);
  }
  SECTION("non-scalar loss is rejected") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.parameter(w)), TapeError);
  }
  SECTION("variables from another tape are rejected") {
    Tape t1, t2;
    auto a = t1.parameter(w);
    auto b = t2.parameter(w);
    CHECK_THROWS_AS(ad::add(a, b), TapeError);
    CHECK_THROWS_AS(t2.backward(ad::sum(a)), TapeError);
  }
  SECTION("grads overwrite and unreachable tensors stay untouched") {
    for (int round = 0; round < 2; ++round) {
      Tape tape;
      tape.parameter(unused);
      tape.backward(ad::sum(ad::scale(tape.parameter(w), 3.0)));
      CHECK((*w.grad())[0] == 3.0);
      CHECK((*w.grad())[1] == 3.0);
    }
    CHECK((*unused.grad())[0] == 42.0);
  }
  SECTION("a tensor bound twice accumulates both paths") {
    Tape tape;
    auto a = tape.parameter(w);
    auto b = tape.parameter(w);
    tape.backward(ad::sum(ad::add(a, ad::scale(b, 2.0))));
    CHECK((*w.grad())[0] == 3.0);
  }
  SECTION("tensors without requires_grad get no grad") {
    Tensor frozen = Tensor::vector({1.0});
    Tape tape;
    tape.backward(ad::sum(ad::add(tape.parameter(frozen), tape.parameter(unused))));
    CHECK_FALSE(frozen.grad());
  }
}

TEST_CASE("backward is deterministic", "[autodiff]") {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor({16, 8}, rng), v = random_tensor({1, 16}, rng);
  const Tensor x = random_tensor({32, 8}, rng, false);
  auto run = [&] {
    Tape tape;
    auto h = ad::relu(ad::matmul_transposed(tape.constant(x), tape.parameter(w)));
    tape.backward(ad::mean(ad::sigmoid(ad::matmul_transposed(h, tape.parameter(v)))));
    auto g = *w.grad();
    g.insert(g.end(), v.grad()->begin(), v.grad()->end());
    return g;
  };
  CHECK(run() == run());
}
