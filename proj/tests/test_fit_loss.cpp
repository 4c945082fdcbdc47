#include "doctest.h"
#include "grad_check.hpp"
#include "oracles.hpp"

#include "vgfm/fit_loss.hpp"
#include "vgfm/ot.hpp"
#include "vgfm/simulate.hpp"

#include <cmath>

using namespace vgfm;
using namespace vgfm::fit;

namespace {

// Branching 5D cloud: a shared stem and two arms, 50 points in total.
Matrix eb_toy(Rng& rng, int n, double shift) {
  Matrix x(n, 5);
  for (int i = 0; i < n; ++i) {
    const double arm = i % 2 == 0 ? 1.0 : -1.0;
    const double s = rng.uniform();
    for (int c = 0; c < 5; ++c) x(i, c) = 0.1 * rng.normal();
    x(i, 0) += s + shift;
    x(i, 1) += arm * s * s;
  }
  return x;
}

}  // namespace

TEST_CASE("variant parsing") {
  CHECK(FitVariant::parse("emd").kind == FitVariant::Kind::emd);
  CHECK(FitVariant::parse("sinkhorn").eps == 0.001);
  CHECK(FitVariant::parse("sinkhorn:0.01").eps == 0.01);
  CHECK(FitVariant::parse(FitVariant::parse("sinkhorn:0.25").to_string()) == FitVariant::parse("sinkhorn:0.25"));
  CHECK_THROWS_AS(FitVariant::parse("sinkhorn:"), ValidationError);
  CHECK_THROWS_AS(FitVariant::parse("sinkhorn:-1"), ValidationError);
  CHECK_THROWS_AS(FitVariant::parse("wasserstein"), ValidationError);
}

TEST_CASE("weighted W1 values and invariances") {
  Rng rng(1);
  const Matrix x = oracle::normal_matrix(rng, 6, 2);
  const Snapshot obs(0, x);
  CHECK(weighted_w1_fit_loss(x, Vector::Ones(6), obs) < 1e-14);
  // Same support in another order.
  Matrix perm = x;
  perm.row(0).swap(perm.row(5));
  CHECK(weighted_w1_fit_loss(perm, Vector::Ones(6), obs) < 1e-14);

  Matrix a(1, 2), b(1, 2);
  a << 0.0, 0.0;
  b << 3.0, 0.0;
  CHECK(weighted_w1_fit_loss(a, Vector::Ones(1), Snapshot(0, b)) == doctest::Approx(3.0));

  const Matrix y = oracle::normal_matrix(rng, 9, 2);
  const Vector w = oracle::uniform_matrix(rng, 6, 1, 0.2, 2.0).col(0);
  const double base = weighted_w1_fit_loss(x, w, Snapshot(1, y));
  CHECK(base > 0.0);
  CHECK(weighted_w1_fit_loss(x, 4.0 * w, Snapshot(1, y)) == base);
  CHECK(weighted_w1_fit_loss(x, 7.0 * w, Snapshot(1, y)) == doctest::Approx(base).epsilon(1e-14));

  CHECK_THROWS_AS(weighted_w1_fit_loss(Matrix(0, 2), Vector(0), obs), ValidationError);
  CHECK_THROWS_AS(weighted_w1_fit_loss(x, Vector::Zero(6), obs), ValidationError);
}

TEST_CASE("removing growth weights on a mass-doubling toy increases the loss") {
  Matrix x0(2, 1), x1(3, 1);
  x0 << 0.0, 1.0;
  x1 << 0.0, 0.0, 1.0;
  const Snapshot obs(1, x1);
  Vector grown(2);
  grown << 2.0, 1.0;
  const double with_growth = weighted_w1_fit_loss(x0, grown, obs);
  const double without = weighted_w1_fit_loss(x0, Vector::Ones(2), obs);
  CHECK(with_growth < 1e-14);
  CHECK(without == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("frozen-plan gradient") {
  Rng rng(2);
  const Matrix x = oracle::normal_matrix(rng, 5, 3);
  const Matrix y = oracle::normal_matrix(rng, 7, 3);
  const Vector w = oracle::uniform_matrix(rng, 5, 1, 0.5, 1.5).col(0);
  Matrix grad;
  weighted_w1_fit_loss(x, w, Snapshot(1, y), &grad);

  const Vector a = w / w.sum();
  const ot::EmdResult r = ot::exact_emd(a, Vector::Constant(7, 1.0 / 7.0), ot::distance_cost(x, y));
  auto frozen = [&](const Vector& flat) {
    const Eigen::Map<const Matrix> p(flat.data(), 5, 3);
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 7; ++j) s += r.plan.matrix(i, j) * (p.row(i) - y.row(j)).norm();
    return s;
  };
  const Vector fd = oracle::finite_difference(frozen, Eigen::Map<const Vector>(x.data(), x.size()));
  CHECK(oracle::max_relative_error(Eigen::Map<const Vector>(grad.data(), grad.size()), fd) < 1e-4);
}

TEST_CASE("fit losses through an unrolled Euler integration match finite differences") {
  Rng rng(3);
  const Matrix start = oracle::normal_matrix(rng, 5, 2);
  Matrix target = oracle::normal_matrix(rng, 6, 2);
  target.col(0).array() += 1.0;
  const Snapshot obs(1, target);
  const nets::NetworkParams v = nets::init_network(2, 2, 3, 8, 1);
  const nets::NetworkParams g = nets::init_network(2, 1, 3, 8, 2);

  // With the growth net at zero the weights stay uniform and the exact loss is
  // differentiable with the frozen-plan gradient.
  const nets::NetworkParams zg = g.zeros_like();
  const double emd_err = grad_check::joint_error(v, zg, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return interval_fit_loss(t, tv, tg, start, 0.0, 1.0, obs, 4, FitVariant{});
  }, true);
  CHECK(emd_err < 1e-4);

  // With growth, the oracle freezes the plan computed at the base parameters.
  const nets::JointGradient frozen_grad = nets::grad_scalar(v, g, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return interval_fit_loss(t, tv, tg, start, 0.0, 1.0, obs, 4, FitVariant{});
  });
  const TrajectoryBundle base = simulate::integrate(v, g, start, 0.0, 1.0, 4);
  const Vector a = base.weights_at(4) / base.weights_at(4).sum();
  const ot::EmdResult plan = ot::exact_emd(a, Vector::Constant(6, 1.0 / 6.0), ot::distance_cost(base.positions[4], target));
  auto frozen = [&](const Vector& flat) {
    nets::NetworkParams vv = v;
    vv.assign(flat);
    const Matrix end = simulate::integrate(vv, g, start, 0.0, 1.0, 4).positions.back();
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) s += plan.plan.matrix(i, j) * (end.row(i) - target.row(j)).norm();
    return s;
  };
  CHECK(oracle::max_relative_error(frozen_grad.grad_v.flatten(), oracle::finite_difference(frozen, v.flatten())) < 1e-4);

  // Under EMD the growth net receives nothing; under Sinkhorn it does.
  const nets::JointGradient je = nets::grad_scalar(v, g, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return interval_fit_loss(t, tv, tg, start, 0.0, 1.0, obs, 4, FitVariant{});
  });
  CHECK(je.grad_g.flatten().isZero());

  const FitVariant sk{FitVariant::Kind::sinkhorn, 0.5};
  const double sk_err = grad_check::joint_error(v, g, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return interval_fit_loss(t, tv, tg, start, 0.0, 1.0, obs, 4, sk);
  });
  CHECK(sk_err < 1e-4);
  const nets::JointGradient js = nets::grad_scalar(v, g, [&](ad::Tape& t, const nets::TapedNet& tv, const nets::TapedNet& tg) {
    return interval_fit_loss(t, tv, tg, start, 0.0, 1.0, obs, 4, sk);
  });
  CHECK(js.grad_g.flatten().norm() > 0.0);
}

TEST_CASE("sinkhorn variant") {
  Rng rng(4);
  const Matrix x = eb_toy(rng, 50, 0.0);
  CHECK(sinkhorn_fit_loss(x, Vector::Ones(50), Snapshot(0, x), 0.05) < 1e-6);

  const Matrix y = eb_toy(rng, 50, 0.3);
  const double xy = sinkhorn_fit_loss(x, Vector::Ones(50), Snapshot(1, y), 0.05);
  const double yx = sinkhorn_fit_loss(y, Vector::Ones(50), Snapshot(0, x), 0.05);
  CHECK(std::abs(xy - yx) < 1e-8);

  const double emd = weighted_w1_fit_loss(x, Vector::Ones(50), Snapshot(1, y));
  const double sk = sinkhorn_fit_loss(x, Vector::Ones(50), Snapshot(1, y), 0.001);
  CHECK(std::abs(sk - emd) / emd < 0.05);

  // Weight gradient through the normalization is orthogonal to w.
  const Vector w = oracle::uniform_matrix(rng, 50, 1, 0.5, 2.0).col(0);
  Vector gw;
  sinkhorn_fit_loss(x, w, Snapshot(1, y), 0.05, nullptr, &gw);
  CHECK(std::abs(gw.dot(w)) < 1e-10);
  CHECK(gw.norm() > 0.0);
}

TEST_CASE("multi-time loss") {
  Rng rng(5);
  const Matrix x = oracle::normal_matrix(rng, 8, 2);
  const Dataset same({Snapshot(0, x), Snapshot(1, x)});
  const nets::NetworkParams zv = nets::init_network(2, 2, 3, 4, 0).zeros_like();
  const nets::NetworkParams zg = nets::init_network(2, 1, 3, 4, 0).zeros_like();
  CHECK(multi_time_fit_loss(zv, zg, same, 10) < 1e-14);

  Matrix moved = x;
  moved.col(0).array() += 0.5;
  const Dataset three({Snapshot(0, x), Snapshot(1, moved), Snapshot(2, moved)});
  CHECK(multi_time_fit_loss(zv, zg, three, 10) == doctest::Approx(0.5));
  CHECK_THROWS_AS(multi_time_fit_loss(zv, zg, Dataset({Snapshot(0, x)}), 10), ValidationError);
}
