#include "doctest.h"
#include "oracles.hpp"

#include "vgfm/eval.hpp"

#include <cmath>

using namespace vgfm;
using namespace vgfm::eval;

TEST_CASE("w1 metric") {
  Rng rng(1);
  const Matrix x = oracle::normal_matrix(rng, 5, 2);
  CHECK(w1_metric(x, Vector::Ones(5), Snapshot(0, x)) < 1e-14);
  Matrix a(1, 2), b(1, 2);
  a << 0.0, 0.0;
  b << 0.0, 1.7;
  CHECK(w1_metric(a, Vector::Ones(1), Snapshot(0, b)) == doctest::Approx(1.7));

  // Uniform 5-point instance against the assignment brute force.
  const Matrix y = oracle::normal_matrix(rng, 5, 2);
  Matrix C(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) C(i, j) = (x.row(i) - y.row(j)).norm();
  CHECK(w1_metric(x, Vector::Ones(5), Snapshot(0, y)) == doctest::Approx(oracle::brute_force_assignment(C)).epsilon(1e-12));

  // Metric properties on random weighted triples.
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix p = oracle::normal_matrix(rng, 6, 3), q = oracle::normal_matrix(rng, 7, 3), r = oracle::normal_matrix(rng, 4, 3);
    const Vector wp = oracle::uniform_matrix(rng, 6, 1, 0.1, 1.0).col(0);
    const Vector wq = oracle::uniform_matrix(rng, 7, 1, 0.1, 1.0).col(0);
    const Vector wr = oracle::uniform_matrix(rng, 4, 1, 0.1, 1.0).col(0);
    const double pq = w1_metric(p, wp, Snapshot(0, q, wq));
    const double qp = w1_metric(q, wq, Snapshot(0, p, wp));
    const double pr = w1_metric(p, wp, Snapshot(0, r, wr));
    const double rq = w1_metric(r, wr, Snapshot(0, q, wq));
    CHECK(std::abs(pq - qp) < 1e-8);
    CHECK(pq <= pr + rq + 1e-8);
  }
}

TEST_CASE("relative mass error") {
  CHECK(rme_metric(200.0, 200.0, 100.0) == 0.0);
  CHECK(rme_metric(190.0, 200.0, 100.0) == doctest::Approx(0.05));
  CHECK(rme_metric(190.0 * 8, 200.0 * 8, 100.0 * 8) == rme_metric(190.0, 200.0, 100.0));
  CHECK_THROWS_AS(rme_metric(1.0, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(rme_metric(1.0, 1.0, 0.0), ValidationError);
}

TEST_CASE("pearson and growth correlation") {
  Rng rng(2);
  const Vector x = oracle::normal_matrix(rng, 20, 1).col(0);
  CHECK(pearson(x, x) == doctest::Approx(1.0));
  CHECK(pearson(x, -x) == doctest::Approx(-1.0));
  const Vector y = oracle::normal_matrix(rng, 20, 1).col(0);
  const double r = pearson(x, y);
  CHECK(pearson(3.0 * x.array() + 2.0, y) == doctest::Approx(r).epsilon(1e-12));
  CHECK(pearson(-3.0 * x.array() + 2.0, y) == doctest::Approx(-r).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(Vector::Ones(5), y.head(5)), ValidationError);
  CHECK_THROWS_AS(pearson(x.head(2), y.head(2)), ValidationError);

  // A growth net whose output is a linear function of x1: truth = that function.
  nets::NetworkParams g = nets::init_network(2, 1, 2, 2, 0);
  g.weights[0] << 1.0, 0.0, 0.0, -1.0, 0.0, 0.0;
  g.biases[0].setZero();
  g.weights[1] << 1.0, -1.0;
  g.biases[1] << 0.5;
  const Matrix pts = oracle::normal_matrix(rng, 30, 2);
  const Vector truth = 1.01 * pts.col(0).array() + 0.5;
  const auto rs = growth_correlation(g, {0.5}, {pts}, {truth});
  CHECK(rs[0] == doctest::Approx(1.0));
}

TEST_CASE("free-run evaluation and mass curve of a zero model") {
  Rng rng(3);
  const Matrix x0 = oracle::normal_matrix(rng, 10, 2);
  const Matrix x1 = oracle::normal_matrix(rng, 20, 2);
  const Dataset ds({Snapshot(0, x0), Snapshot(1, x0), Snapshot(2, x1)});
  const nets::NetworkParams zv = nets::init_network(2, 2, 3, 4, 0).zeros_like();
  const nets::NetworkParams zg = nets::init_network(2, 1, 3, 4, 0).zeros_like();
  const auto rows = evaluate(zv, zg, ds, 10);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].w1 < 1e-14);
  CHECK(rows[0].rme == 0.0);
  CHECK(rows[1].rme == doctest::Approx(0.5));
  CHECK(rows[1].w1 == doctest::Approx(w1_metric(x0, Vector::Ones(10), Snapshot(2, x1))));

  const auto mass = mass_curve(zv, zg, ds, 10);
  REQUIRE(mass.size() == 3);
  for (const auto& m : mass) CHECK(m.m_pred == doctest::Approx(1.0));
  CHECK(mass[2].m_obs == 2.0);

  CHECK(format_metric_csv(rows).rfind("time,w1,rme\n", 0) == 0);
  CHECK(format_mass_csv(mass).rfind("time,m_obs,m_pred\n", 0) == 0);

  const MetricRow h = holdout_metric(zv, zg, ds, 1, 10);
  CHECK(h.w1 < 1e-14);
  CHECK(copy_previous_w1(ds, 1) < 1e-14);
  CHECK_THROWS_AS(holdout_metric(zv, zg, ds, 2, 10), ValidationError);
}
