#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "msr/eval_metrics.hpp"
#include "msr/synth_bench.hpp"

using namespace msr;

namespace {

// Recount straight from the category definitions.
std::array<std::size_t, 5> brute_force(const std::vector<int>& p, const std::vector<int>& w,
                                       const std::vector<int>& g) {
  std::array<std::size_t, 5> c{};  // robust, A, B, clean, C
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (w[i] < 0) continue;
    bool weak_wrong = w[i] != g[i];
    if (weak_wrong && p[i] == g[i]) ++c[0];
    if (weak_wrong && p[i] == w[i]) ++c[1];
    if (weak_wrong && p[i] != w[i] && p[i] != g[i]) ++c[2];
    if (!weak_wrong && p[i] == g[i]) ++c[3];
    if (!weak_wrong && p[i] != g[i]) ++c[4];
  }
  return c;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("decomposition hand example") {
  std::vector<int> pred{0, 1, 2, 0}, weak{0, 1, 0, 1}, gold{0, 1, 2, 2};
  auto d = error_decomposition(pred, weak, gold);
  CHECK(d.correct_on_clean == 2);
  CHECK(d.robust == 1);
  CHECK(d.type_b == 1);
  CHECK(d.type_a == 0);
  CHECK(d.type_c == 0);
  CHECK(d.robust_rate() == 0.5);
  CHECK(d.type_c_rate() == 0.0);
}

TEST_CASE("decomposition limits") {
  std::vector<int> gold{0, 1, 2, 0, 1}, weak{1, 1, 0, 0, 2};
  auto perfect = error_decomposition(gold, weak, gold);
  CHECK(perfect.type_a + perfect.type_b + perfect.type_c == 0);
  CHECK(perfect.robust == perfect.weak_wrong);
  auto memorizer = error_decomposition(weak, weak, gold);
  CHECK(memorizer.type_a == memorizer.weak_wrong);
  CHECK(memorizer.type_c == 0);
}

TEST_CASE("decomposition excludes rows without weak labels and checks lengths") {
  std::vector<int> pred{0, 1}, weak{-1, 1}, gold{1, 1};
  auto d = error_decomposition(pred, weak, gold);
  CHECK(d.no_weak == 1);
  CHECK(d.weak_right == 1);
  CHECK_FALSE(d.type_a_rate().has_value());
  std::vector<int> shorter{0};
  CHECK_THROWS_AS(error_decomposition(shorter, weak, gold), std::invalid_argument);
}

TEST_CASE("decomposition branch sums on random triples") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> k(2, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = k(rng);
    std::uniform_int_distribution<int> label(0, classes - 1), weak_label(-1, classes - 1);
    std::vector<int> p(1000), w(1000), g(1000);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = label(rng);
      w[i] = weak_label(rng);
      g[i] = label(rng);
    }
    auto d = error_decomposition(p, w, g);
    auto b = brute_force(p, w, g);
    CHECK(d.robust == b[0]);
    CHECK(d.type_a == b[1]);
    CHECK(d.type_b == b[2]);
    CHECK(d.correct_on_clean == b[3]);
    CHECK(d.type_c == b[4]);
    CHECK(d.robust + d.type_a + d.type_b == d.weak_wrong);
    CHECK(d.correct_on_clean + d.type_c == d.weak_right);
    CHECK(d.weak_wrong + d.weak_right + d.no_weak == d.rows);
  }
}

TEST_CASE("decomposition csv and json") {
  std::vector<int> pred{0, 1, 2, 0}, weak{0, 1, 0, 1}, gold{0, 1, 2, 2};
  auto d = error_decomposition(pred, weak, gold);
  std::ostringstream out;
  d.write_csv(out);
  CHECK(out.str().rfind("category,count,rate,denominator\nrobust,1,0.5,weak_wrong\n", 0) == 0);
  CHECK(d.to_json()["counts"]["type_b"] == 1);
}

TEST_CASE("confidence curve") {
  ad::Tensor probs(3, 2, {0.9, 0.1, 0.5, 0.5, 0.2, 0.8});
  std::vector<int> gold{0, 0, 0};
  std::vector<double> taus{0.0, 0.5, 1.0};
  auto c = confidence_accuracy_curve(probs, gold, taus);
  CHECK(c[0].keep_rate == 1.0);
  // argmax of the tied row is class 0.
  CHECK(*c[0].accuracy == doctest::Approx(2.0 / 3.0));
  // 1 - H/ln2: 0.531 for [0.9,0.1], 0 for [0.5,0.5], 0.278 for [0.2,0.8].
  CHECK(c[1].kept == 1);
  CHECK(*c[1].accuracy == 1.0);
  CHECK(c[2].kept == 0);
  CHECK_FALSE(c[2].accuracy.has_value());

  std::ostringstream out;
  write_curve_csv(c, out);
  CHECK(out.str() == "tau,kept,keep_rate,accuracy\n0,3,1,0.6666666666666666\n0.5,1,0.3333333333333333,1\n1,0,0,\n");
  CHECK_THROWS_AS(confidence_accuracy_curve(ad::Tensor(1, 2, {0.7, 0.7}), std::vector<int>{0}, taus),
                  std::invalid_argument);
}

TEST_CASE("confidence curve matches an independent filter pass") {
  std::mt19937_64 rng(2);
  std::gamma_distribution<double> gam(0.7, 1.0);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<double> v;
  std::vector<int> gold;
  for (int i = 0; i < 500; ++i) {
    double t = 0;
    std::array<double, 4> r{};
    for (double& x : r) t += (x = gam(rng) + 1e-9);
    for (double x : r) v.push_back(x / t);
    gold.push_back(cls(rng));
  }
  ad::Tensor probs(500, 4, v);
  std::vector<double> taus{0.0, 0.1, 0.3, 0.6, 0.9};
  auto c = confidence_accuracy_curve(probs, gold, taus);
  auto pred = argmax_rows(probs);
  for (std::size_t t = 0; t < taus.size(); ++t) {
    std::vector<int> kp, kg;
    for (std::size_t i = 0; i < 500; ++i) {
      auto r = probs.row(i);
      double h = 0;
      for (double p : r) h -= p * std::log(p);
      if (1.0 - h / std::log(4.0) >= taus[t] - 1e-13) {
        kp.push_back(pred[i]);
        kg.push_back(gold[i]);
      }
    }
    CHECK(c[t].kept == kp.size());
    if (!kp.empty()) CHECK(*c[t].accuracy == accuracy(kp, kg));
  }
  CHECK(*c[0].accuracy == accuracy(pred, gold));
}

TEST_CASE("representation export") {
  SynthSpec spec;
  spec.samples = 200;
  auto ds = generate(spec);
  std::mt19937_64 rng(3);
  auto params = ParamSet::initialize(Architecture{ds.dim, {7, 5}, ds.classes}, rng);
  std::ostringstream a, b;
  export_representations(params, ds, a);
  export_representations(params, ds, b);
  CHECK(a.str() == b.str());
  CHECK(lines(a.str()) == ds.size() + 1);
  auto header = a.str().substr(0, a.str().find('\n'));
  CHECK(header == "id,split,h0,h1,h2,h3,h4,pred,confidence,gold");
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0 / 3.0) == "0.3333333333333333");
  CHECK_THROWS(export_representations(params, ds, std::filesystem::path("/nonexistent/dir/x.csv")));
}
