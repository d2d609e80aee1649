// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "bifp/error.hpp"
#include "bifp/fairness.hpp"
#include "oracles.hpp"

using namespace bifp;
using ad::Tensor;
using data::Group;
using data::GroupedDataset;
using fairness::SurrogateSpec;

namespace {

const data::Standardizer kIdentity2{{0.0, 0.0}, {1.0, 1.0}};

// Column 0 holds the logits of a "dense" model and column 1 those of a
// "pruned" model; reader(c) is a linear model returning column c.
GroupedDataset two_column(const std::vector<double>& a, const std::vector<double>& b, std::vector<int> y,
                          std::vector<Group> s) {
  std::vector<double> x;
  for (std::size_t i = 0; i < a.size(); ++i) {
    x.push_back(a[i]);
    x.push_back(b[i]);
  }
  return {Tensor::matrix(a.size(), 2, std::move(x)), std::move(y), std::move(s), data::SplitTag::full, kIdentity2};
}

model::MaskedModel reader(std::size_t column) {
  model::MaskedLayer L;
  L.weight = Tensor::matrix(1, 2, {column == 0 ? 1.0 : 0.0, column == 1 ? 1.0 : 0.0});
  L.bias = Tensor::zeros({1});
  L.mask_scores = Tensor::filled({1, 2}, 1.0);
  L.binary_mask = Tensor::filled({1, 2}, 1.0);
  return model::MaskedModel({L});
}

// Logits that make `correct` of `total` samples with label +1 right.
std::vector<double> hits(std::size_t correct, std::size_t total) {
  std::vector<double> f(total, -1.0);
  for (std::size_t i = 0; i < correct; ++i) f[i] = 1.0;
  return f;
}

double surrogate(const std::vector<double>& f, const GroupedDataset& d, const SurrogateSpec& spec) {
  ad::Tape tape;
  return fairness::fairness_surrogate(tape.constant(Tensor::vector(f)), d, data::GroupStats::of(d), spec).item();
}

model::MaskedModel random_model(std::uint64_t seed, std::size_t d) {
  const std::vector<std::size_t> widths{d, 6, 1};
  auto m = model::MaskedModel::mlp(widths, model::MaskMode::unstructured, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& L : m.layers())
    for (auto& b : L.bias.values()) b = g(rng);
  return m;
}

}  // namespace

TEST_CASE("accuracy examples", "[fairness]") {
  const std::vector<double> f{2.0, -1.0, 0.5};
  const std::vector<int> y{1, 1, 1};
  CHECK(fairness::accuracy(f, y) == Catch::Approx(2.0 / 3.0));
  const std::vector<int> right{1, -1, 1};
  CHECK(fairness::accuracy(f, right) == 1.0);
  CHECK_THROWS_AS(fairness::accuracy(std::vector<double>{}, std::vector<int>{}), DataError);
  // A zero logit predicts -1.
  CHECK(fairness::accuracy(std::vector<double>{0.0}, std::vector<int>{-1}) == 1.0);
}

TEST_CASE("group accuracy matches a brute-force recount", "[fairness]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = oracle::random_dataset(60, 4, seed);
    const auto m = random_model(seed, 4);
    const auto acc = fairness::group_accuracy(m, d);
    const auto want = oracle::recount(m.logits(d.features()), d.labels(), d.groups());
    CHECK(acc.pos == want.pos);
    CHECK(acc.neg == want.neg);
    CHECK(acc.overall == want.overall);
    CHECK(fairness::accuracy(m, d) == want.overall);
  }
}

TEST_CASE("performance fairness", "[fairness]") {
  // 5 samples per group, all labelled +1; s+ gets 4 right, s- gets 3.
  std::vector<Group> s(10, Group::favorable);
  std::fill(s.begin() + 5, s.end(), Group::unfavorable);
  auto f = hits(4, 5);
  const auto g = hits(3, 5);
  f.insert(f.end(), g.begin(), g.end());
  const auto d = two_column(f, f, std::vector<int>(10, 1), s);
  CHECK(fairness::performance_fairness(reader(0), d) == Catch::Approx(0.2));

  SECTION("identical behavior on both groups") {
    auto same = hits(3, 5);
    same.insert(same.end(), same.begin(), same.end());
    CHECK(fairness::performance_fairness(reader(0), two_column(same, same, std::vector<int>(10, 1), s)) == 0.0);
  }
  SECTION("mirroring the groups keeps the gap") {
    auto swapped = s;
    for (auto& x : swapped) x = x == Group::favorable ? Group::unfavorable : Group::favorable;
    CHECK(fairness::performance_fairness(reader(0), two_column(f, f, std::vector<int>(10, 1), swapped)) ==
          Catch::Approx(0.2));
  }
  SECTION("single group is rejected") {
    CHECK_THROWS_AS(fairness::performance_fairness(
                        reader(0), two_column({1.0}, {1.0}, {1}, {Group::favorable})),
                    DataError);
  }
}

TEST_CASE("degradation fairness", "[fairness]") {
  // Ten samples per group, label +1. Dense: 9/10 and 9/10 right; pruned:
  // 8/10 and 6/10 right.
  std::vector<Group> s(20, Group::favorable);
  std::fill(s.begin() + 10, s.end(), Group::unfavorable);
  auto dense = hits(9, 10), pruned = hits(8, 10);
  const auto dn = hits(9, 10), pn = hits(6, 10);
  dense.insert(dense.end(), dn.begin(), dn.end());
  pruned.insert(pruned.end(), pn.begin(), pn.end());
  const auto d = two_column(dense, pruned, std::vector<int>(20, 1), s);

  const auto r = fairness::degradation_fairness(reader(0), reader(1), d);
  CHECK(r.degradation_pos == Catch::Approx(0.1));
  CHECK(r.degradation_neg == Catch::Approx(0.3));
  CHECK(r.degradation_gap == Catch::Approx(0.2));
  CHECK(r.perf_gap == Catch::Approx(0.2));

  const auto same = fairness::degradation_fairness(reader(0), reader(0), d);
  CHECK(same.degradation_pos == 0.0);
  CHECK(same.degradation_neg == 0.0);
  CHECK(same.degradation_gap == 0.0);

  const std::vector<std::size_t> other{2, 3, 1};
  CHECK_THROWS_AS(fairness::degradation_fairness(
                      reader(0), model::MaskedModel::mlp(other, model::MaskMode::unstructured, 0), d),
                  ShapeError);
}

TEST_CASE("degradation fairness composes four accuracy calls", "[fairness][property]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = oracle::random_dataset(80, 3, seed + 7);
    const auto a = random_model(seed, 3), b = random_model(seed + 99, 3);
    const auto r = fairness::degradation_fairness(a, b, d);
    const auto before = oracle::recount(a.logits(d.features()), d.labels(), d.groups());
    const auto after = oracle::recount(b.logits(d.features()), d.labels(), d.groups());
    CHECK(r.acc_pos == after.pos);
    CHECK(r.acc_neg == after.neg);
    CHECK(r.degradation_gap == std::abs((before.pos - after.pos) - (before.neg - after.neg)));
    CHECK(r.perf_gap == std::abs(after.pos - after.neg));
  }
}

TEST_CASE("surrogate examples", "[fairness]") {
  SECTION("indicator equals the signed gap on a 20-sample set") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto d = oracle::random_dataset(20, 3, seed);
      const auto m = random_model(seed, 3);
      const auto f = m.logits(d.features());
      const auto want = oracle::recount(f, d.labels(), d.groups());
      CHECK(std::abs(surrogate(f, d, {SurrogateSpec::Kind::indicator}) - (want.pos - want.neg)) <= 1e-12);
    }
  }
  SECTION("group-swapped copies with the same logits give zero") {
    const auto base = oracle::random_dataset(10, 2, 3);
    std::vector<double> x, f;
    std::vector<int> y;
    std::vector<Group> s;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    std::vector<double> logits(10);
    for (auto& v : logits) v = g(rng);
    for (int copy = 0; copy < 2; ++copy)
      for (std::size_t i = 0; i < 10; ++i) {
        x.push_back(0.0);
        y.push_back(base.labels()[i]);
        s.push_back(copy == 0 ? Group::favorable : Group::unfavorable);
        f.push_back(logits[i]);
      }
    const GroupedDataset d(Tensor::matrix(20, 1, x), y, s, data::SplitTag::full,
                           data::Standardizer{{0.0}, {1.0}});
    CHECK(std::abs(surrogate(f, d, {})) < 1e-12);
  }
  SECTION("saturates at one") {
    const GroupedDataset d(Tensor::matrix(2, 1, {0.0, 0.0}), {1, 1}, {Group::favorable, Group::unfavorable},
                           data::SplitTag::full, data::Standardizer{{0.0}, {1.0}});
    CHECK(surrogate({50.0, -50.0}, d, {}) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("errors") {
    const GroupedDataset one(Tensor::matrix(2, 1, {0.0, 1.0}), {1, -1}, {Group::favorable, Group::favorable},
                             data::SplitTag::full, data::Standardizer{{0.0}, {1.0}});
    CHECK_THROWS_AS(surrogate({1.0, 1.0}, one, {}), DataError);
    const auto d = oracle::random_dataset(6, 2, 0);
    CHECK_THROWS_AS(surrogate(std::vector<double>(6, 0.0), d, {SurrogateSpec::Kind::sigmoid, 0.0}), ConfigError);
    CHECK_THROWS_AS(surrogate(std::vector<double>(5, 0.0), d, {}), ShapeError);
  }
}

TEST_CASE("surrogate properties", "[fairness][property]") {
  SECTION("sharper sigmoids approach the signed gap") {
    // Each sample's error |u(k z) - 1[z > 0]| shrinks monotonically in k,
    // so their weighted sum, which bounds |F - gap|, does too. Errors of
    // different samples carry opposite signs, so |F - gap| itself only
    // vanishes in the limit, not step by step.
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto d = oracle::random_dataset(30, 3, seed + 40);
      const auto f = random_model(seed, 3).logits(d.features());
      const auto c = oracle::recount(f, d.labels(), d.groups());
      const auto stats = data::GroupStats::of(d);
      double previous_bound = std::numeric_limits<double>::infinity();
      for (double kappa : {1.0, 4.0, 16.0, 64.0}) {
        const double err = std::abs(surrogate(f, d, {SurrogateSpec::Kind::sigmoid, kappa}) - (c.pos - c.neg));
        double bound = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const bool pos = d.groups()[i] == Group::favorable;
          const double z = (pos ? 1.0 : -1.0) * d.labels()[i] * f[i];
          const double hard = pos ? (fairness::predict(f[i]) == d.labels()[i]) : (fairness::predict(f[i]) != d.labels()[i]);
          bound += std::abs(1.0 / (1.0 + std::exp(-kappa * z)) - hard) / (pos ? stats.p_pos : stats.p_neg);
        }
        bound /= static_cast<double>(d.size());
        CHECK(bound <= previous_bound);
        CHECK(err <= bound + 1e-12);
        previous_bound = bound;
      }
      CHECK(std::abs(surrogate(f, d, {SurrogateSpec::Kind::sigmoid, 1e6}) - (c.pos - c.neg)) < 1e-9);
    }
  }
  SECTION("value matches the independent formula") {
    const auto d = oracle::random_dataset(25, 3, 4);
    const auto f = random_model(4, 3).logits(d.features());
    const auto stats = data::GroupStats::of(d);
    CHECK(surrogate(f, d, {}) == Catch::Approx(oracle::surrogate(f, d, stats.p_pos, stats.p_neg, 4.0)).epsilon(1e-12));
  }
  SECTION("gradient in the weights matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto m = random_model(seed, 3);
      const auto d = oracle::random_dataset(24, 3, seed + 9);
      ad::Tape tape;
      auto f = m.forward(tape, tape.constant(d.features()), {.weights = true});
      const auto F = fairness::fairness_surrogate(f, d, data::GroupStats::of(d), {});
      tape.backward(ad::multiply(F, F));
      std::vector<double> got;
      for (const auto& L : m.layers()) got.insert(got.end(), L.weight.grad()->begin(), L.weight.grad()->end());
      auto net = oracle::net_of(m);
      const auto want = oracle::central_gradient(
          [&](std::span<const double> w) {
            auto n = net;
            oracle::set_weights(n, w);
            return oracle::composite(n, d, 1.0) - oracle::logistic_loss(oracle::logits(n, d.features()), d.labels());
          },
          oracle::flatten_weights(net));
      CHECK(oracle::max_relative_error(got, want) < 1e-4);
    }
  }
  SECTION("invariant to order and duplication") {
    const auto d = oracle::random_dataset(30, 3, 12);
    const auto f = random_model(12, 3).logits(d.features());
    const double base = surrogate(f, d, {});

    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = (i * 7) % order.size();
    std::vector<double> shuffled;
    for (auto i : order) shuffled.push_back(f[i]);
    CHECK(surrogate(shuffled, d.subset(order), {}) == Catch::Approx(base).margin(1e-12));

    std::vector<std::size_t> twice(2 * d.size());
    for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = i % d.size();
    std::vector<double> doubled(f);
    doubled.insert(doubled.end(), f.begin(), f.end());
    CHECK(surrogate(doubled, d.subset(twice), {}) == Catch::Approx(base).margin(1e-12));
  }
}
