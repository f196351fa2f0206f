#include <doctest.h>

#include <cmath>

#include "immcognito/errors.hpp"
#include "immcognito/loss.hpp"
#include "immcognito/rng.hpp"
#include "oracles.hpp"

using namespace immcognito;

namespace {

Mat cloud(std::initializer_list<std::array<double, 3>> pts) {
  Mat m(static_cast<long>(pts.size()), 3);
  long r = 0;
  for (const auto& p : pts) {
    for (int c = 0; c < 3; ++c) m(r, c) = p[c];
    ++r;
  }
  return m;
}

Mat probs(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<long>(rows.size()), static_cast<long>(rows.begin()->size()));
  long r = 0;
  for (const auto& row : rows) {
    long c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST_CASE("chamfer hand cases") {
  CHECK(chamfer(cloud({{1, 2, 3}, {4, 5, 6}}), cloud({{1, 2, 3}, {4, 5, 6}})) == 0.0);
  CHECK(chamfer(cloud({{0, 0, 0}}), cloud({{1, 0, 0}})) == 2.0);
  CHECK(chamfer(cloud({{0, 0, 0}, {2, 0, 0}}), cloud({{1, 0, 0}})) == 3.0);
}

TEST_CASE("chamfer matches brute force, is symmetric and permutation invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const long n = 1 + static_cast<long>(uniform01(rng) * 64);
    const long m = 1 + static_cast<long>(uniform01(rng) * 64);
    const Mat p = oracle::random_coords(rng, n), q = oracle::random_coords(rng, m);
    const double got = chamfer(p, q);
    const double want = oracle::chamfer(p, q);
    CHECK(std::abs(got - want) <= 1e-9 * std::abs(want));
    CHECK(chamfer(q, p) == got);
    Mat shuffled = p;
    for (long i = n - 1; i > 0; --i) {
      const long j = static_cast<long>(uniform01(rng) * static_cast<double>(i + 1));
      shuffled.row(i).swap(shuffled.row(j));
    }
    CHECK(chamfer(shuffled, q) == got);
  }
}

TEST_CASE("chamfer gradient matches central differences") {
  Rng rng(32);
  const Mat p = oracle::random_coords(rng, 7);
  Mat q = oracle::random_coords(rng, 5);
  Mat grad;
  chamfer_with_gradient(p, q, &grad);
  const Mat fd = oracle::central_difference(q, [&] { return chamfer(p, q); }, 1e-6);
  CHECK((grad - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gesture loss") {
  CHECK(gesture_loss(probs({{1, 0}, {0, 1}}), std::vector<int>{0, 1}) == 0.0);
  CHECK(gesture_loss(probs({{0.25, 0.25, 0.25, 0.25}}), std::vector<int>{2}) == doctest::Approx(std::log(4.0)));
  CHECK(gesture_loss(probs({{0.5, 0.5}, {0.25, 0.75}}), std::vector<int>{0, 0}) ==
        doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("identity nll") {
  CHECK(deid_nll(probs({{1, 0}}), std::vector<int>{0}) == 0.0);
  const double e2 = std::exp(-2.0);
  CHECK(deid_nll(probs({{e2, 1 - e2}}), std::vector<int>{0}) == doctest::Approx(2.0).epsilon(1e-14));
  const double e1 = std::exp(-1.0), e3 = std::exp(-3.0);
  CHECK(deid_nll(probs({{e1, 1 - e1}, {1 - e3, e3}}), std::vector<int>{0, 1}) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("probability floor keeps the loss finite") {
  const double v = mean_nll(probs({{0.0, 1.0}}), std::vector<int>{0});
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(kProbabilityFloor)));
}

TEST_CASE("stabilized identity term") {
  CHECK(deid_stabilized(0.0, 2.0) == 2.0);
  CHECK(deid_stabilized(std::exp(1.0) - 1.0, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(deid_stabilized_slope(0.0) == -1.0);
  CHECK(deid_stabilized_slope(9.0) == doctest::Approx(-0.1).epsilon(1e-15));
  for (double x : {0.0, 0.3, 5.0, 100.0}) {
    CHECK(deid_stabilized(x, 2.0) <= 2.0);
    CHECK(deid_stabilized(x + 1e-3, 2.0) < deid_stabilized(x, 2.0));
    // The slope does not depend on delta.
    CHECK(deid_stabilized(x, 7.0) - deid_stabilized(x, 2.0) == doctest::Approx(5.0));
  }
}

TEST_CASE("gate and combined loss") {
  LossWeights w;
  w.alpha = 1.0;
  w.beta = 2.0;
  w.gamma = 1.0;
  w.tau = 0.3;
  CHECK(combined_loss(1.0, 0.5, 1.5, w, 0.5) == 1.0 + 1.0 + 1.5);
  CHECK(combined_loss(1.0, 0.5, 1.5, w, 0.1) == 1.0 + 1.0);
  CHECK(deid_gate(0.3, 0.3));
  CHECK_FALSE(deid_gate(0.29, 0.3));

  int calls = 0;
  auto term = [&] {
    ++calls;
    return 1.0;
  };
  combined_loss(1.0, 1.0, term, w, 0.1);
  CHECK(calls == 0);
  w.gamma = 0.0;
  combined_loss(1.0, 1.0, term, w, 0.9);
  CHECK(calls == 0);
  w.gamma = 1.0;
  combined_loss(1.0, 1.0, term, w, 0.9);
  CHECK(calls == 1);
}

TEST_CASE("default tau is twice chance") {
  CHECK(default_tau(8) == 0.25);
  CHECK(default_tau(4) == 0.5);
}

TEST_CASE("weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
