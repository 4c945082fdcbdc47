#include "doctest.h"
#include "grad_check.hpp"
#include "oracles.hpp"

#include "vgfm/matching.hpp"

#include <cmath>

using namespace vgfm;
using namespace vgfm::matching;

namespace {

Snapshot cloud(Rng& rng, int t, int n, int d, double shift) {
  Matrix p = oracle::normal_matrix(rng, n, d);
  p.array() += shift;
  return Snapshot(t, p);
}

TransportPlan plan_from(Matrix m) { return TransportPlan(std::move(m), 0.0, 0.0); }

}  // namespace

TEST_CASE("interpolants and targets") {
  Rng rng(1);
  const Snapshot p0 = cloud(rng, 0, 4, 3, 0.0);
  const Snapshot p1 = cloud(rng, 1, 5, 3, 2.0);
  Matrix pi = oracle::uniform_matrix(rng, 4, 5, 0.1, 1.0);
  pi = pi.array().rowwise() / pi.colwise().sum().array();
  const TransportPlan plan = plan_from(pi);

  const auto batch = build_match_batch(p0, p1, plan, 200, 0.0, 7);
  REQUIRE(batch.size() == 200);
  for (const MatchSample& s : batch) {
    const double sfrac = s.t;
    CHECK(sfrac >= 0.0);
    CHECK(sfrac < 1.0);
    CHECK((s.xt - ((1.0 - sfrac) * s.x0 + sfrac * s.x1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.v_target == s.x1 - s.x0);
    CHECK(s.g_target == std::log(plan.row_marginal(s.source)));
    CHECK(s.x0 == p0.points.row(s.source).transpose());
    CHECK(s.x1 == p1.points.row(s.target).transpose());
  }

  // Noise moves xt only: times, pairs and growth targets are unchanged.
  const auto noisy = build_match_batch(p0, p1, plan, 200, 0.1, 7);
  double moved = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    CHECK(noisy[k].t == batch[k].t);
    CHECK(noisy[k].g_target == batch[k].g_target);
    CHECK(noisy[k].source == batch[k].source);
    moved = std::max(moved, (noisy[k].xt - batch[k].xt).cwiseAbs().maxCoeff());
  }
  CHECK(moved > 0.0);

  // Interval offset and span.
  const auto shifted = build_match_batch(p0, p1, plan, 200, 0.0, 7, Interval{3.0, 2.0});
  for (std::size_t k = 0; k < shifted.size(); ++k) {
    CHECK(shifted[k].t == doctest::Approx(3.0 + 2.0 * batch[k].t));
    CHECK((shifted[k].v_target - batch[k].v_target / 2.0).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(shifted[k].g_target == doctest::Approx(batch[k].g_target / 2.0));
  }
}

TEST_CASE("growth targets from row marginals") {
  Rng rng(2);
  const Snapshot p0 = cloud(rng, 0, 3, 2, 0.0);
  const Snapshot p1 = cloud(rng, 1, 3, 2, 1.0);
  const TransportPlan uniform = plan_from(Matrix::Constant(3, 3, 1.0 / 3.0));
  for (const auto& s : build_match_batch(p0, p1, uniform, 30, 0.05, 1)) CHECK(std::abs(s.g_target) < 1e-15);

  Matrix pi = Matrix::Zero(3, 3);
  pi(0, 0) = 1.0;
  pi(0, 1) = 1.0;
  pi(2, 2) = 1.0;  // row 1 has no mass
  for (const auto& s : build_match_batch(p0, p1, plan_from(pi), 100, 0.0, 3)) {
    CHECK(s.source != 1);
    if (s.source == 0) CHECK(s.g_target == doctest::Approx(0.6931471805599453));
  }
  CHECK_THROWS_AS(build_match_batch(p0, p1, plan_from(Matrix::Constant(2, 3, 0.5)), 5, 0.0, 1), ValidationError);
}

TEST_CASE("vgfm loss values") {
  nets::NetworkParams v = nets::init_network(2, 2, 3, 4, 1).zeros_like();
  nets::NetworkParams g = nets::init_network(2, 1, 3, 4, 2).zeros_like();
  MatchBatch b;
  b.xt = Matrix::Constant(1, 2, 0.3);
  b.t = Vector::Constant(1, 0.5);
  b.v_target = Matrix::Zero(1, 2);
  b.g_target = Vector::Zero(1);
  CHECK(vgfm_loss(v, g, b).total == 0.0);
  b.v_target(0, 0) = 1.0;
  const LossParts p = vgfm_loss(v, g, b);
  CHECK(p.total == 1.0);
  CHECK(p.velocity == 1.0);
  CHECK(p.growth == 0.0);

  // Bias-only nets that reproduce the targets exactly.
  v.biases.back() << 1.0, 0.0;
  g.biases.back() << -0.25;
  b.g_target(0) = -0.25;
  CHECK(vgfm_loss(v, g, b).total == 0.0);

  MatchBatch empty;
  CHECK_THROWS_AS(vgfm_loss(v, g, empty), ValidationError);
}

TEST_CASE("vgfm loss gradient matches finite differences") {
  Rng rng(3);
  const Snapshot p0 = cloud(rng, 0, 6, 2, 0.0);
  const Snapshot p1 = cloud(rng, 1, 8, 2, 1.5);
  Matrix pi = oracle::uniform_matrix(rng, 6, 8, 0.1, 1.0);
  pi = pi.array().rowwise() / pi.colwise().sum().array();
  const MatchBatch b = stack(build_match_batch(p0, p1, plan_from(pi), 16, 0.05, 4));
  const nets::NetworkParams v = nets::init_network(2, 2, 3, 4, 5);
  const nets::NetworkParams g = nets::init_network(2, 1, 3, 4, 6);
  const double err = grad_check::joint_error(v, g, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return vgfm_loss(t, tv, tg, b);
  });
  CHECK(err < 1e-4);

  ad::Tape t;
  LossParts parts;
  vgfm_loss(t, nets::bind(t, v), nets::bind(t, g), b, &parts);
  const LossParts plain = vgfm_loss(v, g, b);
  CHECK(parts.total == doctest::Approx(plain.total).epsilon(1e-13));
  CHECK(parts.growth == doctest::Approx(plain.growth).epsilon(1e-13));
}

TEST_CASE("conditional targets do not depend on lambda") {
  Rng rng(4);
  // Identity pairing with unit mass: every target is exactly zero.
  const Snapshot same = cloud(rng, 0, 4, 2, 0.0);
  const LambdaReport trivial = verify_lambda_free_targets(same, Snapshot(1, same.points), plan_from(Matrix::Identity(4, 4)));
  CHECK(trivial.max_discrepancy == 0.0);

  const Snapshot p0 = cloud(rng, 0, 4, 3, 0.0);
  const Snapshot p1 = cloud(rng, 1, 4, 3, 1.0);
  Matrix pi = oracle::uniform_matrix(rng, 4, 4, 0.0, 2.0);
  pi = pi.array().rowwise() / pi.colwise().sum().array();
  const TransportPlan plan = plan_from(pi);
  const LambdaReport rep = verify_lambda_free_targets(p0, p1, plan);
  CHECK(rep.max_discrepancy < 1e-12);

  // Independent evaluation of the lambda-free form T(x0) - x0, log r.
  for (int i = 0; i < 4; ++i) {
    Vector bary = Vector::Zero(3);
    double r = 0.0;
    for (int j = 0; j < 4; ++j) {
      bary += pi(i, j) * p1.points.row(j).transpose();
      r += pi(i, j);
    }
    bary /= r;
    CHECK((rep.targets.velocity.row(i).transpose() - (bary - p0.points.row(i).transpose())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rep.targets.growth(i) == doctest::Approx(std::log(r)).epsilon(1e-12));
  }
}

TEST_CASE("endpoint targets of the drift-and-decay example agree for two lambdas") {
  // Endpoint of the example with velocity 2t and growth -log(x+1) + t^3 run
  // in two periods split at 0.4: x moves by 1 - 0.4^2 and the log mass is
  // 0.4 * (-log(x0+1)) + 0.4^4 / 4.
  Rng rng(5);
  const int n = 50;
  Matrix x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = 2.0 + std::sqrt(0.5) * rng.normal();
  const Matrix x1 = x0.array() + (1.0 - 0.16);
  Vector log_r(n);
  for (int i = 0; i < n; ++i) log_r(i) = -0.4 * std::log(std::max(x0(i, 0), -0.9) + 1.0) + std::pow(0.4, 4) / 4.0;
  const ConditionalTargets a = two_period_targets(x0, x1, log_r, 0.5);
  const ConditionalTargets b = two_period_targets(x0, x1, log_r, 0.9);
  CHECK((a.velocity - b.velocity).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.growth - b.growth).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.velocity(0, 0) == doctest::Approx(0.84));
  CHECK_THROWS_AS(two_period_targets(x0, x1, log_r, 1.0), ValidationError);
}
