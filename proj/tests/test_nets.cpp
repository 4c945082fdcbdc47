#include "doctest.h"
#include "oracles.hpp"

#include "vgfm/nets.hpp"

#include <filesystem>

using namespace vgfm;
using namespace vgfm::nets;
namespace ad = vgfm::ad;

TEST_CASE("parameter count and determinism") {
  const NetworkParams p = init_network(1, 1, 2, 1, 7);
  CHECK(p.num_params() == 5);
  CHECK(p.weights[0].rows() == 1);
  CHECK(p.weights[0].cols() == 2);
  CHECK(init_network(3, 3, 3, 16, 42) == init_network(3, 3, 3, 16, 42));
  CHECK(!(init_network(3, 3, 3, 16, 42) == init_network(3, 3, 3, 16, 43)));
  CHECK(default_depth(50) == 3);
  CHECK(default_depth(51) == 5);
  CHECK_THROWS_AS(init_network(2, 1, 1, 4, 0), ValidationError);

  const NetworkParams q = init_network(4, 2, 3, 8, 1);
  for (std::size_t l = 0; l < q.weights.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(q.weights[l].cols()));
    CHECK(q.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(q.biases[l].isZero());
  }
}

TEST_CASE("fresh width-256 networks have small outputs at zero input") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const NetworkParams p = init_network(2, 2, 3, 256, seed);
    worst = std::max(worst, forward_point(p, Vector::Zero(2), 0.0).norm());
  }
  CHECK(worst < 1.0);
}

TEST_CASE("forward basics") {
  NetworkParams z = init_network(3, 2, 3, 8, 1).zeros_like();
  CHECK(forward_point(z, Vector::Ones(3), 0.5).isZero());

  // One hidden unit with weight 1 on x and 0 on t, identity readout.
  NetworkParams p = init_network(1, 1, 2, 1, 0);
  p.weights[0] << 1.0, 0.0;
  p.biases[0] << 0.0;
  p.weights[1] << 1.0;
  p.biases[1] << 0.0;
  CHECK(forward_point(p, Vector::Constant(1, -1.0), 0.0)(0) == doctest::Approx(-0.01));

  Rng rng(4);
  const NetworkParams r = init_network(3, 3, 3, 16, 9);
  const Matrix x = oracle::normal_matrix(rng, 10, 3);
  Vector t(10);
  for (int i = 0; i < 10; ++i) t(i) = rng.uniform(0, 3);
  const Matrix batched = forward(r, x, t);
  for (int i = 0; i < 10; ++i)
    CHECK((batched.row(i).transpose() - forward_point(r, x.row(i).transpose(), t(i))).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(forward(r, x, 1.5) == forward(r, x, 1.5));
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(forward(r, bad, 0.0), ValidationError);
}

TEST_CASE("taped forward equals plain forward") {
  Rng rng(5);
  const NetworkParams p = init_network(2, 2, 3, 8, 3);
  const Matrix x = oracle::normal_matrix(rng, 6, 2);
  ad::Tape tape;
  const TapedNet net = bind(tape, p);
  const Matrix out = tape.value(forward(tape, net, tape.constant(x), 0.7));
  CHECK((out - forward(p, x, 0.7)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("grad_scalar trivial cases") {
  const NetworkParams p = init_network(2, 1, 2, 3, 1);
  const Gradient c = grad_scalar(p, [](ad::Tape& t, const TapedNet&) { return t.constant(Matrix::Constant(1, 1, 4.0)); });
  CHECK(c.loss == 4.0);
  CHECK(c.grad.flatten().isZero());

  const Gradient q = grad_scalar(p, [](ad::Tape& t, const TapedNet& n) {
    return ad::scale(t, ad::sum(t, ad::square(t, n.weights[0])), 0.5);
  });
  CHECK(q.grad.weights[0] == p.weights[0]);
  CHECK(q.grad.weights[1].isZero());
}

TEST_CASE("grad_scalar matches finite differences on a small network") {
  Rng rng(6);
  const NetworkParams p = init_network(3, 2, 3, 8, 11);
  const Matrix x = oracle::normal_matrix(rng, 9, 3);
  const Matrix y = oracle::normal_matrix(rng, 9, 2);
  auto loss = [&](ad::Tape& t, const TapedNet& n) {
    const ad::Var out = forward(t, n, t.constant(x), 0.4);
    const ad::Var err = ad::sub(t, out, t.constant(y));
    return ad::add(t, ad::mean(t, ad::square(t, err)), ad::mean(t, ad::exp(t, ad::scale(t, out, 0.3))));
  };
  const Gradient g = grad_scalar(p, loss);
  auto value = [&](const Vector& flat) {
    NetworkParams q = p;
    q.assign(flat);
    ad::Tape t;
    return t.scalar(loss(t, bind(t, q, false)));
  };
  const Vector fd = oracle::finite_difference(value, p.flatten());
  CHECK(oracle::max_relative_error(g.grad.flatten(), fd) < 1e-4);
}

TEST_CASE("adam") {
  NetworkParams p = init_network(1, 1, 2, 2, 3);
  const NetworkParams before = p;
  AdamState s = make_adam(p, 1e-3);
  adam_step(p, s, p.zeros_like());
  CHECK(p == before);

  AdamState s0 = make_adam(p, 0.0);
  NetworkParams g = p;
  adam_step(p, s0, g);
  CHECK(p == before);

  // Single scalar parameter: f(w) = w^2 wrapped as a 1x1 weight.
  NetworkParams w = init_network(1, 1, 2, 1, 0);
  for (auto& m : w.weights) m.setZero();
  w.weights[0](0, 0) = 1.0;
  AdamState sw = make_adam(w, 0.1);
  NetworkParams gw = w.zeros_like();
  gw.weights[0](0, 0) = 1.0;
  adam_step(w, sw, gw);
  CHECK(w.weights[0](0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));

  w.weights[0](0, 0) = 1.0;
  AdamState sq = make_adam(w, 0.05);
  for (int k = 0; k < 100; ++k) {
    NetworkParams gq = w.zeros_like();
    gq.weights[0](0, 0) = 2.0 * w.weights[0](0, 0);
    adam_step(w, sq, gq);
  }
  CHECK(std::abs(w.weights[0](0, 0)) < 0.1);

  AdamState wrong = make_adam(init_network(2, 1, 2, 2, 0), 0.1);
  CHECK_THROWS_AS(adam_step(p, wrong, p.zeros_like()), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  Checkpoint c;
  c.velocity = init_network(2, 2, 3, 8, 1);
  c.growth = init_network(2, 1, 3, 8, 2);
  c.adam_velocity = make_adam(c.velocity, 1e-3);
  c.adam_growth = make_adam(c.growth, 1e-3);
  adam_step(c.velocity, c.adam_velocity, c.velocity);
  c.step = 17;
  c.seed = 99;
  c.phase = "joint";
  Rng rng(5);
  rng.normal();
  c.rng_state = rng.state();
  c.config_json = R"({"eps":0.003})";
  const auto path = std::filesystem::temp_directory_path() / "vgfm_ckpt_test.bin";
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.velocity == c.velocity);
  CHECK(back.growth == c.growth);
  CHECK(back.adam_velocity == c.adam_velocity);
  CHECK(back.adam_growth == c.adam_growth);
  CHECK(back.step == 17);
  CHECK(back.seed == 99);
  CHECK(back.phase == "joint");
  CHECK(back.rng_state == c.rng_state);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));

  const std::string bytes = serialize_checkpoint(c);
  CHECK(bytes.substr(0, 10) == "VGFMCKPT1\n");
  CHECK_THROWS_AS(parse_checkpoint("garbage"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), ParseError);
}
