#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msr/classifier.hpp"
#include "support/gradcheck.hpp"

using namespace msr;
using msr::testing::random_tensor;

namespace {

std::vector<double> random_distribution(std::size_t k, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& x : p) total += (x = g(rng) + 1e-300);
  for (double& x : p) x /= total;
  return p;
}

}  // namespace

TEST_CASE("forward of a zero network is uniform") {
  Architecture arch{5, {4}, 3};
  auto params = ParamSet::zeros(arch);
  std::mt19937_64 rng(1);
  auto probs = forward(params, random_tensor(6, 5, rng));
  for (double p : probs.values()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("single linear layer closed form") {
  Architecture arch{2, {}, 2};
  auto params = ParamSet::zeros(arch).with_tensors(
      {ad::Tensor::zeros(2, 2), ad::Tensor(1, 2, {std::log(2.0), 0.0})});
  auto probs = forward(params, ad::Tensor(1, 2, {0.3, -0.7}));
  CHECK(probs.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(probs.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("rows are distributions and argmax follows logits") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch{6, {8, 5}, 4};
    auto params = ParamSet::initialize(arch, rng);
    auto x = random_tensor(10, 6, rng, -3, 3);
    auto probs = forward(params, x);
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      auto r = probs.row(i);
      CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      for (double p : r) CHECK((p >= 0.0 && p <= 1.0));
    }
    CHECK(argmax_rows(probs) == argmax_rows(logits(params, x)));
  }
}

TEST_CASE("forward rejects mismatched feature width") {
  std::mt19937_64 rng(3);
  auto params = ParamSet::initialize(Architecture{4, {3}, 2}, rng);
  CHECK_THROWS_AS(forward(params, ad::Tensor::zeros(2, 5)), ad::ShapeError);
  CHECK_THROWS_AS(ParamSet::zeros(Architecture{4, {3}, 1}), std::invalid_argument);
}

TEST_CASE("cross entropy values") {
  const double ln2 = std::log(2.0);
  auto one_hot0 = ad::Tensor(1, 2, {1.0, 0.0});
  CHECK(cross_entropy(one_hot0, ad::Tensor(1, 2, {0.5, 0.5})).item() ==
        doctest::Approx(ln2).epsilon(1e-15));
  CHECK(cross_entropy(one_hot0, one_hot0).item() == 0.0);
  // -(0.7 ln 0.6 + 0.3 ln 0.4), evaluated independently.
  CHECK(cross_entropy(ad::Tensor(1, 2, {0.7, 0.3}), ad::Tensor(1, 2, {0.6, 0.4})).item() ==
        doctest::Approx(0.63246515619844).epsilon(1e-13));
  CHECK_THROWS_AS(cross_entropy(ad::Tensor::zeros(2, 2), ad::Tensor::zeros(2, 3)), ad::ShapeError);
}

TEST_CASE("cross entropy clamps zero probabilities") {
  auto loss = cross_entropy(ad::Tensor(1, 2, {1.0, 0.0}), ad::Tensor(1, 2, {0.0, 1.0}));
  CHECK(loss.item() == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("Gibbs inequality on random distributions") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t k = 2 + trial % 5;
    auto p = random_distribution(k, rng);
    auto q = random_distribution(k, rng);
    ad::Tensor tp(1, k, p), tq(1, k, q);
    double h = entropy(p);
    CHECK(cross_entropy(tp, tq).item() >= h - 1e-9);
    CHECK(cross_entropy(tp, tp).item() == doctest::Approx(h).epsilon(1e-9));
  }
}

TEST_CASE("weighted cross entropy averages over the full batch") {
  ad::Tensor target(2, 2, {1, 0, 0, 1});
  ad::Tensor pred(2, 2, {0.5, 0.5, 0.25, 0.75});
  std::vector<double> w{1.0, 0.0};
  CHECK(weighted_cross_entropy(target, pred, w).item() ==
        doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-15));
  std::vector<double> ones{1.0, 1.0};
  CHECK(weighted_cross_entropy(target, pred, ones).item() ==
        doctest::Approx(cross_entropy(target, pred).item()).epsilon(1e-15));
}

TEST_CASE("soft targets pass gradient to the teacher side") {
  std::mt19937_64 rng(5);
  auto x = random_tensor(4, 3, rng);
  auto teacher = ParamSet::initialize(Architecture{3, {4}, 3}, rng);
  auto student = ParamSet::initialize(Architecture{3, {5}, 3}, rng);
  std::vector<ad::Tensor> inputs(teacher.tensors().begin(), teacher.tensors().end());
  inputs.insert(inputs.end(), student.tensors().begin(), student.tensors().end());
  auto f = [&](std::span<const ad::Tensor> t) {
    auto tp = teacher.with_tensors({t.begin(), t.begin() + 4});
    auto sp = student.with_tensors({t.begin() + 4, t.end()});
    return cross_entropy(forward(tp, x), forward(sp, x));
  };
  CHECK(testing::max_gradient_error(f, inputs) <= 1e-5);
}

TEST_CASE("confidence values") {
  std::vector<double> uniform2{0.5, 0.5};
  CHECK(confidence(uniform2) == 0.0);
  std::vector<double> onehot4{0.0, 0.0, 1.0, 0.0};
  CHECK(confidence(onehot4) == 1.0);
  std::vector<double> peaked{0.97, 0.01, 0.01, 0.01};
  // 1 - H/ln 4 with H = -sum p ln p, evaluated independently.
  CHECK(confidence(peaked) == doctest::Approx(0.8790296335733946).epsilon(1e-13));
}

TEST_CASE("confidence of uniform rows is exactly zero") {
  for (std::size_t k = 2; k <= 12; ++k) {
    std::vector<double> u(k, 1.0 / static_cast<double>(k));
    CAPTURE(k);
    CHECK(confidence(u) == 0.0);
  }
}

TEST_CASE("confidence is permutation invariant") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_distribution(5, rng);
    double c = confidence(p);
    CHECK((c >= 0.0 && c <= 1.0));
    std::shuffle(p.begin(), p.end(), rng);
    CHECK(confidence(p) == doctest::Approx(c).epsilon(1e-14));
  }
}

TEST_CASE("param set json round trip keeps order and values") {
  std::mt19937_64 rng(7);
  auto params = ParamSet::initialize(Architecture{3, {4, 2}, 3}, rng);
  auto j = params.to_json();
  CHECK(j.begin().key() == "W1");
  auto back = ParamSet::from_json(nlohmann::ordered_json::parse(j.dump()));
  CHECK(back.architecture() == params.architecture());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(std::equal(back[i].values().begin(), back[i].values().end(), params[i].values().begin()));
  }
  j.erase("b2");
  CHECK_THROWS(ParamSet::from_json(j));
}
