#include "doctest.h"
#include "oracles.hpp"

#include "vgfm/ot.hpp"

#include <map>

using namespace vgfm;
using namespace vgfm::ot;

namespace {

CostMatrix cost_of(const Matrix& m) {
  CostMatrix c;
  c.entries = m;
  return c;
}

Vector random_simplex(Rng& rng, int n) {
  Vector w(n);
  for (int i = 0; i < n; ++i) w(i) = rng.uniform(0.05, 1.0);
  return w / w.sum();
}

}  // namespace

TEST_CASE("squared cost") {
  Matrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 0, 0;
  CHECK(squared_cost(a, b).entries(0, 0) == 0.0);
  b << 3, 4;
  CHECK(squared_cost(a, b).entries(0, 0) == doctest::Approx(25.0).epsilon(1e-15));

  Rng rng(1);
  const Matrix x = oracle::normal_matrix(rng, 5, 3), y = oracle::normal_matrix(rng, 7, 3);
  const CostMatrix c = squared_cost(x, y);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (x(i, k) - y(j, k)) * (x(i, k) - y(j, k));
      CHECK(c.entries(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  const CostMatrix cn = squared_cost(x, y, true);
  CHECK(cn.normalized);
  CHECK(cn.entries.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(squared_cost(x, oracle::normal_matrix(rng, 2, 2)), ValidationError);
}

TEST_CASE("semi-relaxed sinkhorn trivial cases") {
  Matrix c1(1, 1);
  c1 << 3.7;
  const TransportPlan p1 = semi_relaxed_sinkhorn(cost_of(c1), 0.1, 1.0);
  CHECK(p1.matrix(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  const TransportPlan p4 = semi_relaxed_sinkhorn(cost_of(Matrix::Constant(4, 4, 0.7)), 0.2, 3.0);
  for (Eigen::Index k = 0; k < 16; ++k) CHECK(p4.matrix.data()[k] == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(p4.converged);
}

TEST_CASE("semi-relaxed sinkhorn matches the mirror descent oracle") {
  Rng rng(11);
  {
    const Matrix C = oracle::uniform_matrix(rng, 3, 2);
    const TransportPlan p = semi_relaxed_sinkhorn(cost_of(C), 0.05, 1.0);
    const Matrix ref = oracle::mirror_descent_semi_relaxed(C, 0.05, 1.0);
    CHECK(std::abs(oracle::semi_relaxed_objective(C, p.matrix, 0.05, 1.0) -
                   oracle::semi_relaxed_objective(C, ref, 0.05, 1.0)) < 1e-5);
  }
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6)), m = 1 + static_cast<int>(rng.below(6));
    const double eps = rng.uniform(0.1, 1.0), tau = rng.uniform(0.5, 5.0);
    const Matrix C = oracle::uniform_matrix(rng, n, m);
    const TransportPlan p = semi_relaxed_sinkhorn(cost_of(C), eps, tau);
    const Matrix ref = oracle::mirror_descent_semi_relaxed(C, eps, tau);
    CHECK(p.converged);
    CHECK((p.col_marginal.array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(std::abs(oracle::semi_relaxed_objective(C, p.matrix, eps, tau) -
                   oracle::semi_relaxed_objective(C, ref, eps, tau)) < 1e-5);
    CHECK(semi_relaxed_objective(C, p.matrix, eps, tau) ==
          doctest::Approx(oracle::semi_relaxed_objective(C, p.matrix, eps, tau)).epsilon(1e-12));
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("semi-relaxed sinkhorn handles larger unbalanced instances") {
  Rng rng(5);
  const Matrix x = oracle::normal_matrix(rng, 300, 2), y = oracle::normal_matrix(rng, 500, 2);
  const TransportPlan p = semi_relaxed_sinkhorn(squared_cost(x, y), 0.01, 10.0);
  CHECK(p.converged);
  CHECK((p.col_marginal.array() - 1.0).abs().maxCoeff() < 1e-9);
  CHECK(p.row_marginal.sum() == doctest::Approx(500.0).epsilon(1e-9));
}

TEST_CASE("semi-relaxed sinkhorn reports overflow or unconverged status instead of garbage") {
  Matrix C(2, 2);
  C << 0, 1e6, 1e6, 0;
  SinkhornOptions o;
  o.max_iter = 3;
  const TransportPlan p = semi_relaxed_sinkhorn(cost_of(C), 1e-3, 1.0, o);
  CHECK(p.matrix.allFinite());
  CHECK_THROWS_AS(semi_relaxed_sinkhorn(cost_of(C), 0.0, 1.0), ValidationError);
}

TEST_CASE("balanced sinkhorn") {
  Matrix c1(1, 1);
  c1 << 2.0;
  CHECK(balanced_sinkhorn(cost_of(c1), 0.1).matrix(0, 0) == doctest::Approx(1.0));

  Matrix C = Matrix::Constant(5, 5, 10.0);
  C.diagonal().setZero();
  const TransportPlan p = balanced_sinkhorn(cost_of(C), 0.1);
  Matrix off = p.matrix;
  off.diagonal().setZero();
  CHECK(off.maxCoeff() < 1e-3);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5)), m = 2 + static_cast<int>(rng.below(5));
    const Matrix Cr = oracle::uniform_matrix(rng, n, m);
    const double eps = rng.uniform(0.05, 1.0);
    const TransportPlan b = balanced_sinkhorn(cost_of(Cr), eps);
    const TransportPlan s = semi_relaxed_sinkhorn(cost_of(Cr), eps, 1e6);
    CHECK((b.row_marginal.array() - double(m) / n).abs().maxCoeff() < 1e-8);
    CHECK((b.matrix - s.matrix).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("exact emd trivial cases") {
  Rng rng(2);
  const Matrix x = oracle::normal_matrix(rng, 6, 2);
  const Vector w = random_simplex(rng, 6);
  CHECK(exact_emd(w, w, distance_cost(x, x)).value == doctest::Approx(0.0).epsilon(1e-14));

  Matrix c(1, 1);
  c << 2.5;
  CHECK(exact_emd(Vector::Ones(1), Vector::Ones(1), cost_of(c)).value == 2.5);

  Vector bad = w;
  bad(0) += 1e-3;
  CHECK_THROWS_AS(exact_emd(w, bad, distance_cost(x, x)), ValidationError);
}

TEST_CASE("exact emd equals the permutation optimum") {
  Rng rng(17);
  for (int n = 1; n <= 5; ++n)
    for (int trial = 0; trial < 30; ++trial) {
      const Matrix C = oracle::uniform_matrix(rng, n, n, 0.0, 10.0);
      const Vector u = Vector::Constant(n, 1.0 / n);
      const EmdResult r = exact_emd(u, u, cost_of(C));
      CHECK(r.value == doctest::Approx(oracle::brute_force_assignment(C)).epsilon(1e-12));
    }
  // Integer costs with many ties.
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4;
    Matrix C(n, n);
    for (Eigen::Index k = 0; k < C.size(); ++k) C.data()[k] = static_cast<double>(rng.below(3));
    const Vector u = Vector::Constant(n, 1.0 / n);
    CHECK(exact_emd(u, u, cost_of(C)).value == doctest::Approx(oracle::brute_force_assignment(C)).epsilon(1e-12));
  }
}

TEST_CASE("exact emd satisfies its dual certificate on weighted instances") {
  Rng rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(40)), m = 1 + static_cast<int>(rng.below(40));
    const Matrix x = oracle::normal_matrix(rng, n, 3), y = oracle::normal_matrix(rng, m, 3);
    const Vector a = random_simplex(rng, n), b = random_simplex(rng, m);
    const CostMatrix C = distance_cost(x, y);
    const EmdResult r = exact_emd(a, b, C);
    CHECK((r.plan.row_marginal - a).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.plan.col_marginal - b).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.plan.matrix.array() >= 0).all());
    double primal = (r.plan.matrix.array() * C.entries.array()).sum();
    CHECK(primal == doctest::Approx(r.value).epsilon(1e-12));
    double worst = 0, slack_on_support = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const double red = C.entries(i, j) - r.alpha(i) - r.beta(j);
        worst = std::min(worst, red);
        if (r.plan.matrix(i, j) > 1e-12) slack_on_support = std::max(slack_on_support, std::abs(red));
      }
    CHECK(worst > -1e-9);
    CHECK(slack_on_support < 1e-9);
    CHECK(a.dot(r.alpha) + b.dot(r.beta) == doctest::Approx(r.value).epsilon(1e-9));
  }
}

TEST_CASE("exact emd on larger clouds") {
  Rng rng(29);
  const int n = 400, m = 700;
  const Matrix x = oracle::normal_matrix(rng, n, 5), y = oracle::normal_matrix(rng, m, 5);
  const Vector a = random_simplex(rng, n), b = random_simplex(rng, m);
  const EmdResult r = exact_emd(a, b, distance_cost(x, y));
  const CostMatrix C = distance_cost(x, y);
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) worst = std::min(worst, C.entries(i, j) - r.alpha(i) - r.beta(j));
  CHECK(worst > -1e-9);
  CHECK(a.dot(r.alpha) + b.dot(r.beta) == doctest::Approx(r.value).epsilon(1e-9));
}

TEST_CASE("emd_1d agrees with the cdf integral and exact_emd") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(15)), m = 1 + static_cast<int>(rng.below(15));
    const Matrix x = oracle::normal_matrix(rng, n, 1), y = oracle::normal_matrix(rng, m, 1);
    const Vector a = random_simplex(rng, n), b = random_simplex(rng, m);
    std::vector<std::pair<double, double>> A, B;
    for (int i = 0; i < n; ++i) A.emplace_back(x(i, 0), a(i));
    for (int j = 0; j < m; ++j) B.emplace_back(y(j, 0), b(j));
    const double ref = oracle::w1_line(A, B);
    CHECK(emd_1d(x.col(0), a, y.col(0), b) == doctest::Approx(ref).epsilon(1e-10));
    CHECK(exact_emd(a, b, distance_cost(x, y)).value == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("entropic transport marginals") {
  Rng rng(37);
  const Matrix C = oracle::uniform_matrix(rng, 8, 6);
  const Vector a = random_simplex(rng, 8), b = random_simplex(rng, 6);
  const EntropicSolution s = entropic_transport(C, a, b, 0.01);
  CHECK(s.converged);
  CHECK((s.plan.rowwise().sum() - a).cwiseAbs().sum() < 1e-7);
  CHECK((s.plan.colwise().sum().transpose() - b).cwiseAbs().sum() < 1e-8);
}

TEST_CASE("sinkhorn divergence") {
  Rng rng(41);
  WeightedPoints a{oracle::normal_matrix(rng, 12, 2), random_simplex(rng, 12)};
  WeightedPoints b{oracle::normal_matrix(rng, 9, 2) + Matrix::Constant(9, 2, 0.5), random_simplex(rng, 9)};
  CHECK(std::abs(sinkhorn_divergence(a, a, 0.05).value) < 1e-6);
  const double ab = sinkhorn_divergence(a, b, 0.05).value;
  const double ba = sinkhorn_divergence(b, a, 0.05).value;
  CHECK(ab > -1e-8);
  CHECK(std::abs(ab - ba) < 1e-8);

  // Approaches the exact transport value as eps shrinks.
  WeightedPoints p{oracle::normal_matrix(rng, 3, 2), Vector::Constant(3, 1.0 / 3)};
  WeightedPoints q{oracle::normal_matrix(rng, 3, 2), Vector::Constant(3, 1.0 / 3)};
  const double w = exact_emd(p.weights, q.weights, distance_cost(p.points, q.points)).value;
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double eps : {0.1, 0.01, 0.001}) {
    const double gap = std::abs(sinkhorn_divergence(p, q, eps).value - w);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-2);
}

TEST_CASE("sinkhorn divergence gradients match finite differences") {
  Rng rng(43);
  const int n = 5, m = 6;
  WeightedPoints a{oracle::normal_matrix(rng, n, 2), random_simplex(rng, n)};
  const WeightedPoints b{oracle::normal_matrix(rng, m, 2), random_simplex(rng, m)};
  const double eps = 0.1;
  EntropicOptions opts;
  opts.tol = 1e-13;
  const DivergenceResult r = sinkhorn_divergence(a, b, eps, opts);
  CHECK(r.converged);

  Vector flat = Eigen::Map<const Vector>(a.points.data(), a.points.size());
  auto f_points = [&](const Vector& v) {
    WeightedPoints q{Eigen::Map<const Matrix>(v.data(), n, 2), a.weights};
    return sinkhorn_divergence(q, b, eps, opts).value;
  };
  const Vector fd = oracle::finite_difference(f_points, flat);
  const Vector an = Eigen::Map<const Vector>(r.grad_points.data(), r.grad_points.size());
  CHECK(oracle::max_relative_error(an, fd) < 1e-4);

  // Weight gradient is defined up to an additive constant (the simplex
  // constraint); compare along directions that keep the total mass.
  for (int k = 1; k < n; ++k) {
    auto f_w = [&](const Vector& v) {
      WeightedPoints q{a.points, a.weights};
      q.weights(0) -= v(0);
      q.weights(k) += v(0);
      return sinkhorn_divergence(q, b, eps, opts).value;
    };
    const double fdk = oracle::finite_difference(f_w, Vector::Zero(1), 1e-6)(0);
    const double ank = r.grad_weights(k) - r.grad_weights(0);
    CHECK(std::abs(fdk - ank) < 1e-4 * std::max(1.0, std::abs(fdk)));
  }
}

TEST_CASE("pair sampling") {
  Matrix one(1, 1);
  one << 1.0;
  const PairSample s1 = sample_pairs(TransportPlan(one, 0, 0), 50, 1);
  for (auto& p : s1.pairs) CHECK((p.first == 0 && p.second == 0));

  Matrix diag = Matrix::Zero(4, 4);
  diag.diagonal() << 0.1, 0.5, 0.3, 0.1;
  for (auto& p : sample_pairs(TransportPlan(diag, 0, 0), 1000, 2).pairs) CHECK(p.first == p.second);

  Matrix P(3, 3);
  P << 0.2, 0.05, 0.0, 0.1, 0.3, 0.05, 0.0, 0.1, 0.2;
  const int draws = 100000;
  const PairSample s = sample_pairs(TransportPlan(P, 0, 0), draws, 3);
  std::map<std::pair<int, int>, int> counts;
  for (auto& p : s.pairs) counts[p]++;
  const double total = P.sum();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double prob = P(i, j) / total;
      const double expected = prob * draws;
      const double sd = std::sqrt(draws * prob * (1 - prob));
      const int c = counts[{i, j}];
      if (prob == 0) CHECK(c == 0);
      else CHECK(std::abs(c - expected) < 3 * sd);
    }

  const PairSample again = sample_pairs(TransportPlan(P, 0, 0), draws, 3);
  CHECK(again.pairs == s.pairs);

  Matrix Z(3, 2);
  Z << 0.5, 0.5, 0, 0, 0.5, 0.5;
  const PairSample sz = sample_pairs(TransportPlan(Z, 0, 0), 1000, 4);
  CHECK(sz.skipped_rows == std::vector<int>{1});
  for (auto& p : sz.pairs) CHECK(p.first != 1);
}

TEST_CASE("elbow scan") {
  Rng rng(47);
  Snapshot p0(0, oracle::normal_matrix(rng, 30, 2)), p1(1, oracle::normal_matrix(rng, 40, 2));
  const auto single = elbow_scan_tau(p0, p1, 0.05, {2.0});
  CHECK(single.size() == 1);
  CHECK(format_elbow_csv(single).rfind("tau,transport_cost\n", 0) == 0);
  CHECK_THROWS_AS(elbow_scan_tau(p0, p1, 0.05, {2.0, 1.0}), ValidationError);

  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Snapshot a(0, oracle::normal_matrix(rng, 8, 2)), b(1, oracle::normal_matrix(rng, 10, 2));
    const auto curve = elbow_scan_tau(a, b, 0.1, {0.5, 1, 2, 4, 8});
    for (std::size_t k = 1; k < curve.size(); ++k)
      if (curve[k].transport_cost < curve[k - 1].transport_cost - 1e-9) ++violations;
  }
  MESSAGE("transport cost monotonicity violations: " << violations);

  // Two clusters, the lower one twice as heavy at t1.
  Matrix x0(60, 2), x1(120, 2);
  for (int i = 0; i < 60; ++i) x0.row(i) << 0.3 * rng.normal(), (i < 30 ? 2.0 : -2.0) + 0.3 * rng.normal();
  for (int i = 0; i < 120; ++i) x1.row(i) << 1.0 + 0.3 * rng.normal(), (i < 40 ? 2.0 : -2.0) + 0.3 * rng.normal();
  const auto curve = elbow_scan_tau(Snapshot(0, x0), Snapshot(1, x1), 0.05, {1, 10, 100, 1000, 10000, 20000});
  const double last = curve.back().transport_cost, prev = curve[curve.size() - 2].transport_cost;
  CHECK(std::abs(last - prev) / last < 0.01);
}
