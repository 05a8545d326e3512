#include <doctest.h>

#include <cmath>
#include <random>
#include <string>

#include "msr/autodiff.hpp"
#include "support/gradcheck.hpp"

using namespace msr;
using msr::testing::max_gradient_error;
using msr::testing::max_second_order_error;
using msr::testing::random_tensor;

namespace {

struct OpCase {
  std::string name;
  std::vector<ad::Tensor> inputs;
  std::function<ad::Tensor(std::span<const ad::Tensor>)> op;
};

std::vector<OpCase> op_cases(std::mt19937_64& rng) {
  std::vector<OpCase> cases;
  auto r = [&](std::size_t n, std::size_t m, double lo = -1.0, double hi = 1.0) {
    return random_tensor(n, m, rng, lo, hi);
  };
  static const std::vector<std::size_t> pick{2, 0, 2};
  static const std::vector<std::size_t> spread{1, 1, 0};

  cases.push_back({"matmul", {r(3, 4), r(4, 2)}, [](auto x) { return ad::matmul(x[0], x[1]); }});
  cases.push_back({"transpose", {r(3, 2)}, [](auto x) { return ad::transpose(x[0]); }});
  cases.push_back({"add", {r(3, 3), r(3, 3)}, [](auto x) { return ad::add(x[0], x[1]); }});
  cases.push_back({"add_bias", {r(3, 4), r(1, 4)}, [](auto x) { return ad::add_bias(x[0], x[1]); }});
  cases.push_back({"sub", {r(3, 3), r(3, 3)}, [](auto x) { return ad::sub(x[0], x[1]); }});
  cases.push_back({"mul", {r(3, 3), r(3, 3)}, [](auto x) { return ad::mul(x[0], x[1]); }});
  cases.push_back({"div", {r(3, 3), r(3, 3, 1.0, 2.0)}, [](auto x) { return ad::div(x[0], x[1]); }});
  cases.push_back({"scale", {r(2, 3)}, [](auto x) { return ad::scale(x[0], 2.5); }});
  cases.push_back({"tanh", {r(3, 3)}, [](auto x) { return ad::tanh(x[0]); }});
  cases.push_back({"log", {r(3, 3, 0.5, 2.0)}, [](auto x) { return ad::log(x[0]); }});
  cases.push_back({"exp", {r(3, 3)}, [](auto x) { return ad::exp(x[0]); }});
  cases.push_back({"softmax", {r(3, 4, -2.0, 2.0)}, [](auto x) { return ad::softmax_rows(x[0]); }});
  cases.push_back({"sum", {r(3, 2)}, [](auto x) { return ad::sum(x[0]); }});
  cases.push_back({"mean", {r(3, 2)}, [](auto x) { return ad::mean(x[0]); }});
  cases.push_back({"fill", {r(1, 1)}, [](auto x) { return ad::fill(x[0], 3, 2); }});
  cases.push_back({"row_sum", {r(3, 4)}, [](auto x) { return ad::row_sum(x[0]); }});
  cases.push_back({"col_sum", {r(3, 4)}, [](auto x) { return ad::col_sum(x[0]); }});
  cases.push_back({"broadcast_cols", {r(3, 1)}, [](auto x) { return ad::broadcast_cols(x[0], 4); }});
  cases.push_back({"broadcast_rows", {r(1, 4)}, [](auto x) { return ad::broadcast_rows(x[0], 3); }});
  cases.push_back({"select_rows", {r(3, 2)}, [](auto x) { return ad::select_rows(x[0], pick); }});
  cases.push_back({"scatter_rows", {r(3, 2)}, [](auto x) { return ad::scatter_rows(x[0], spread, 4); }});
  // Keep inputs away from the kink at the floor.
  std::vector<double> v{-0.8, 0.6, -0.3, 0.9, 0.4, -0.5};
  cases.push_back({"max_const", {ad::Tensor(2, 3, v)}, [](auto x) { return ad::max_const(x[0], 0.1); }});
  return cases;
}

// Weighted readout so every output entry matters.
ad::Tensor readout(const ad::Tensor& y, const ad::Tensor& weights) {
  return ad::sum(ad::mul(y, weights));
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  auto s = ad::softmax_rows(ad::Tensor(1, 2, {0.0, 0.0}));
  CHECK(s.at(0, 0) == 0.5);
  CHECK(s.at(0, 1) == 0.5);

  ad::Tensor eye(2, 2, {1, 0, 0, 1});
  ad::Tensor m(2, 2, {3, 4, 5, 6});
  auto p = ad::matmul(eye, m);
  CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{3, 4, 5, 6});

  auto l = ad::log(ad::exp(ad::Tensor::scalar(1.5)));
  CHECK(l.item() == doctest::Approx(1.5).epsilon(1e-15));

  auto big = ad::softmax_rows(ad::Tensor(1, 3, {1000.0, 1000.0, 0.0}));
  CHECK(big.at(0, 0) == doctest::Approx(0.5));
  CHECK(big.at(0, 2) == 0.0);
}

TEST_CASE("first and second derivative of x^2") {
  ad::Tape tape;
  auto x = tape.leaf(ad::Tensor::scalar(3.0));
  auto y = ad::mul(x, x);
  auto dy = tape.grad(y, {x}, true)[0];
  CHECK(dy.item() == 6.0);
  CHECK(dy.tracked());
  auto d2y = tape.grad(dy, {x})[0];
  CHECK(d2y.item() == 2.0);
  CHECK_FALSE(d2y.tracked());
}

TEST_CASE("every op: reverse mode matches central differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    for (auto& c : op_cases(rng)) {
      CAPTURE(c.name);
      ad::Tensor probe = c.op(c.inputs);
      ad::Tensor w = random_tensor(probe.rows(), probe.cols(), rng);
      auto f = [&](std::span<const ad::Tensor> x) { return readout(c.op(x), w); };
      CHECK(max_gradient_error(f, c.inputs) <= 1e-5);
    }
  }
}

TEST_CASE("every op: gradient of gradient matches central differences") {
  std::mt19937_64 rng(12);
  for (auto& c : op_cases(rng)) {
    CAPTURE(c.name);
    ad::Tensor probe = c.op(c.inputs);
    ad::Tensor w = random_tensor(probe.rows(), probe.cols(), rng);
    // Square the output so linear ops also have a nonzero second derivative.
    auto f = [&](std::span<const ad::Tensor> x) {
      ad::Tensor y = c.op(x);
      return readout(ad::mul(y, y), w);
    };
    std::vector<ad::Tensor> dirs;
    for (const auto& t : c.inputs) dirs.push_back(random_tensor(t.rows(), t.cols(), rng));
    CHECK(max_second_order_error(f, c.inputs, dirs) <= 1e-4);
  }
}

TEST_CASE("mixed second derivative through two parameter blocks") {
  // L(theta, phi) = sum(tanh(x theta) * softmax(x phi)); check
  // d/dtheta <dL/dphi, v>.
  std::mt19937_64 rng(5);
  ad::Tensor x = random_tensor(4, 3, rng);
  ad::Tensor theta = random_tensor(3, 3, rng);
  ad::Tensor phi = random_tensor(3, 3, rng);
  ad::Tensor v = random_tensor(3, 3, rng);

  auto inner = [&](const ad::Tensor& t, const ad::Tensor& p) {
    return ad::sum(ad::mul(ad::tanh(ad::matmul(x, t)), ad::softmax_rows(ad::matmul(x, p))));
  };

  ad::Tape tape;
  auto t = tape.leaf(theta);
  auto p = tape.leaf(phi);
  auto g = tape.grad(inner(t, p), {p}, true)[0];
  auto s = ad::sum(ad::mul(g, v));
  auto analytic = tape.grad(s, {t})[0];

  const double h = 1e-5;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto at = [&](double delta) {
      ad::Tape local;
      auto pp = local.leaf(phi);
      auto gg = local.grad(inner(testing::perturbed(theta, j, delta), pp), {pp})[0];
      return ad::sum(ad::mul(gg, v)).item();
    };
    double numeric = (at(h) - at(-h)) / (2 * h);
    CHECK(testing::relative_error(analytic.values()[j], numeric) <= 1e-4);
  }
}

TEST_CASE("shape errors") {
  ad::Tensor a = ad::Tensor::zeros(2, 3);
  ad::Tensor b = ad::Tensor::zeros(2, 2);
  CHECK_THROWS_AS(ad::matmul(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::add(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::mul(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::add_bias(a, ad::Tensor::zeros(1, 2)), ad::ShapeError);
  CHECK_THROWS_AS(ad::broadcast_cols(a, 4), ad::ShapeError);
  CHECK_THROWS_AS(ad::Tensor(2, 2, {1.0}), ad::ShapeError);
  std::vector<std::size_t> bad{5};
  CHECK_THROWS_AS(ad::select_rows(a, bad), ad::ShapeError);
}

TEST_CASE("non-finite results are rejected") {
  CHECK_THROWS_AS(ad::log(ad::Tensor::scalar(0.0)), ad::NumericError);
  CHECK_THROWS_AS(ad::log(ad::Tensor::scalar(-1.0)), ad::NumericError);
  CHECK_THROWS_AS(ad::exp(ad::Tensor::scalar(1e6)), ad::NumericError);
  CHECK_THROWS_AS(ad::div(ad::Tensor::scalar(1.0), ad::Tensor::scalar(0.0)), ad::NumericError);
}

TEST_CASE("grad preconditions") {
  ad::Tape tape;
  ad::Tape other;
  auto x = tape.leaf(ad::Tensor(1, 2, {1.0, 2.0}));
  auto y = ad::mul(x, x);
  CHECK_THROWS_AS(tape.grad(y, {x}), ad::ShapeError);  // not scalar
  auto z = other.leaf(ad::Tensor::scalar(1.0));
  CHECK_THROWS_AS(tape.grad(ad::sum(y), {z}), ad::ShapeError);  // foreign wrt
  CHECK_THROWS_AS(tape.grad(ad::sum(y), {ad::Tensor::scalar(1.0)}), ad::ShapeError);
  CHECK_THROWS_AS(ad::add(ad::sum(y), z), ad::ShapeError);  // mixing tapes

  // An unrelated leaf gets a zero gradient.
  auto unused = tape.leaf(ad::Tensor::zeros(2, 2));
  auto g = tape.grad(ad::sum(y), {unused});
  CHECK(g[0].rows() == 2);
  CHECK(g[0].values()[3] == 0.0);
}

TEST_CASE("gradient wrt an intermediate node") {
  ad::Tape tape;
  auto x = tape.leaf(ad::Tensor::scalar(2.0));
  auto y = ad::scale(x, 3.0);
  auto z = ad::mul(y, y);
  auto g = tape.grad(z, {y, x});
  CHECK(g[0].item() == doctest::Approx(12.0));
  CHECK(g[1].item() == doctest::Approx(36.0));
}

TEST_CASE("tape is topologically ordered") {
  std::mt19937_64 rng(3);
  ad::Tape tape;
  auto w = tape.leaf(random_tensor(3, 3, rng));
  auto x = random_tensor(2, 3, rng);
  auto y = ad::sum(ad::softmax_rows(ad::matmul(x, w)));
  auto g = tape.grad(y, {w}, true)[0];
  tape.grad(ad::sum(ad::mul(g, g)), {w});
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (std::size_t in : tape.inputs(i)) CHECK(in < i);
  }
  CHECK(tape.kind(w.node()) == ad::OpKind::Leaf);
}

TEST_CASE("replay is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    ad::Tape tape;
    auto w = tape.leaf(random_tensor(4, 3, rng));
    auto x = random_tensor(5, 4, rng);
    auto loss = ad::mean(ad::log(ad::softmax_rows(ad::tanh(ad::matmul(x, w)))));
    auto g = tape.grad(loss, {w}, true)[0];
    auto gg = tape.grad(ad::sum(ad::mul(g, g)), {w})[0];
    std::vector<double> out{loss.item()};
    out.insert(out.end(), g.values().begin(), g.values().end());
    out.insert(out.end(), gg.values().begin(), gg.values().end());
    return out;
  };
  CHECK(run() == run());
}
