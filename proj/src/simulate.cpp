#include "vgfm/simulate.hpp"

#include "vgfm/ot.hpp"

#include <cmath>

namespace vgfm::simulate {

namespace {

void check_range(double t_start, double t_end, int steps_per_unit) {
  if (!(t_end > t_start)) throw ValidationError("integration requires t_end > t_start");
  if (steps_per_unit < 1) throw ValidationError("steps_per_unit must be at least 1");
}

void check_finite(const Matrix& x, int step) {
  if (!x.allFinite()) throw NumericalError("non-finite state at Euler step " + std::to_string(step));
}

}  // namespace

int num_steps(double span, int steps_per_unit) {
  // The small slack keeps 2.0000000001 * 20 from becoming 41 steps.
  return std::max(1, static_cast<int>(std::ceil(span * steps_per_unit - 1e-9)));
}

TrajectoryBundle integrate(const nets::NetworkParams& v, const nets::NetworkParams& g, const Matrix& start,
                           double t_start, double t_end, int steps_per_unit) {
  check_range(t_start, t_end, steps_per_unit);
  check_finite(start, 0);
  const int K = num_steps(t_end - t_start, steps_per_unit);
  const double h = (t_end - t_start) / K;
  TrajectoryBundle out;
  out.times.reserve(static_cast<std::size_t>(K) + 1);
  out.positions.reserve(static_cast<std::size_t>(K) + 1);
  out.log_weights = Matrix::Zero(start.rows(), K + 1);
  out.times.push_back(t_start);
  out.positions.push_back(start);
  Matrix x = start;
  for (int k = 0; k < K; ++k) {
    const double t = t_start + k * h;
    const Matrix vel = nets::forward(v, x, t);
    const Matrix rate = nets::forward(g, x, t);
    x += h * vel;
    check_finite(x, k + 1);
    out.log_weights.col(k + 1) = out.log_weights.col(k) + h * rate.col(0);
    if (!out.log_weights.col(k + 1).allFinite()) throw NumericalError("non-finite log weight at Euler step " + std::to_string(k + 1));
    out.times.push_back(k + 1 == K ? t_end : t_start + (k + 1) * h);
    out.positions.push_back(x);
  }
  return out;
}

TapedEndpoint integrate_taped(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, ad::Var start,
                              double t_start, double t_end, int steps_per_unit, bool weights_on_tape) {
  check_range(t_start, t_end, steps_per_unit);
  const int K = num_steps(t_end - t_start, steps_per_unit);
  const double h = (t_end - t_start) / K;
  const auto n = tape.value(start).rows();
  check_finite(tape.value(start), 0);

  TapedEndpoint out;
  out.log_weight_values = Vector::Zero(n);
  ad::Var x = start;
  ad::Var logw;
  if (weights_on_tape) logw = tape.constant(Matrix::Zero(n, 1));
  for (int k = 0; k < K; ++k) {
    const double t = t_start + k * h;
    if (weights_on_tape)
      logw = ad::add(tape, logw, ad::scale(tape, nets::forward(tape, g, x, t), h));
    else
      out.log_weight_values += h * nets::forward(*g.params, tape.value(x), t).col(0);
    x = ad::add(tape, x, ad::scale(tape, nets::forward(tape, v, x, t), h));
    check_finite(tape.value(x), k + 1);
  }
  out.positions = x;
  if (weights_on_tape) {
    out.log_weights = logw;
    out.log_weight_values = tape.value(logw).col(0);
  }
  if (!out.log_weight_values.allFinite()) throw NumericalError("non-finite log weight after integration");
  return out;
}

Theorem1Result theorem1_check(const VelocityField& v, const GrowthField& g,
                              const std::function<Matrix(Rng&, int)>& p0_sampler, double lambda,
                              const Theorem1Options& opts) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ValidationError("lambda must lie in (0, 1)");
  if (opts.particles < 1 || opts.steps < 1) throw ValidationError("theorem1_check: particles and steps must be positive");
  Rng rng(opts.seed);
  const Matrix x0 = p0_sampler(rng, opts.particles);
  if (x0.rows() != opts.particles) throw ValidationError("p0 sampler returned the wrong number of particles");
  const auto n = x0.rows();
  const double h = 1.0 / opts.steps;

  // System I: growth in place on [0, lambda], then transport on (lambda, 1].
  const int k1 = opts.steps;
  const int k2 = opts.steps;
  Vector logw1 = Vector::Zero(n);
  const double h1 = lambda / k1;
  for (int k = 0; k < k1; ++k) logw1 += h1 * g(x0, k * h1);
  Matrix x1 = x0;
  const double h2 = (1.0 - lambda) / k2;
  for (int k = 0; k < k2; ++k) x1 += h2 * v(x1, lambda + k * h2);

  // System II: both at once on the reparameterized clock.
  Vector logw2 = Vector::Zero(n);
  Matrix x2 = x0;
  for (int k = 0; k < opts.steps; ++k) {
    const double t = k * h;
    const Matrix origin = opts.inverse ? (*opts.inverse)(x2, t) : x0;
    logw2 += h * lambda * g(origin, lambda * t);
    x2 += h * (1.0 - lambda) * v(x2, (1.0 - lambda) * t + lambda);
  }
  if (!x1.allFinite() || !x2.allFinite() || !logw1.allFinite() || !logw2.allFinite())
    throw NumericalError("theorem1_check: non-finite state");

  Theorem1Result r;
  r.weights_two_period = logw1.array().exp();
  r.weights_joint = logw2.array().exp();
  const double m1 = r.weights_two_period.mean();
  const double m2 = r.weights_joint.mean();
  r.mass_gap = std::abs(m2 - m1) / m1;
  const Vector a = r.weights_two_period / r.weights_two_period.sum();
  const Vector b = r.weights_joint / r.weights_joint.sum();
  if (x0.cols() == 1)
    r.w1_gap = ot::emd_1d(x1.col(0), a, x2.col(0), b);
  else
    r.w1_gap = ot::exact_emd(a, b, ot::distance_cost(x1, x2)).value;
  r.end_two_period = std::move(x1);
  r.end_joint = std::move(x2);
  return r;
}

}  // namespace vgfm::simulate
