#pragma once

#include "vgfm/autodiff.hpp"
#include "vgfm/core_data.hpp"
#include "vgfm/nets.hpp"
#include "vgfm/random.hpp"

#include <functional>
#include <optional>

namespace vgfm::simulate {

/// Number of Euler steps for an interval: ceil(span * steps_per_unit), so the
/// step is exactly 1 / steps_per_unit whenever the span is a whole number.
int num_steps(double span, int steps_per_unit);

/// Forward Euler on dx/dt = v(x, t), d log w / dt = g(x, t) from log w = 0.
/// Every grid time is recorded. Throws NumericalError naming the step when
/// the state stops being finite.
TrajectoryBundle integrate(const nets::NetworkParams& v, const nets::NetworkParams& g, const Matrix& start,
                           double t_start, double t_end, int steps_per_unit);

/// Endpoint of the same scheme built on a tape. When `weights_on_tape` is
/// false the log weights are accumulated as plain values (the growth net is
/// evaluated outside the tape) and `log_weights` is left invalid.
struct TapedEndpoint {
  ad::Var positions;    // N x d
  ad::Var log_weights;  // N x 1
  Vector log_weight_values;
};

TapedEndpoint integrate_taped(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, ad::Var start,
                              double t_start, double t_end, int steps_per_unit, bool weights_on_tape = true);

// -----------------------------------------------------------------------------
// Two-period versus joint dynamics
// -----------------------------------------------------------------------------

/// Batched analytic fields: rows of X are particles.
using VelocityField = std::function<Matrix(const Matrix& X, double t)>;
using GrowthField = std::function<Vector(const Matrix& X, double t)>;
/// Maps positions at joint time t back to the starting positions.
using InverseFlow = std::function<Matrix(const Matrix& X, double t)>;

struct Theorem1Options {
  int particles = 10000;
  /// Euler steps on [0, 1] for the joint system, and on each period of the
  /// two-period system, so both visit the same reparameterized times.
  int steps = 1000;
  std::uint64_t seed = 0;
  /// Without an analytic inverse the starting positions are carried along,
  /// which is the exact inverse of the discrete flow.
  std::optional<InverseFlow> inverse;
};

struct Theorem1Result {
  double w1_gap = 0.0;
  /// |M_joint - M_two| / M_two with M the mean particle weight.
  double mass_gap = 0.0;
  Matrix end_two_period;
  Vector weights_two_period;
  Matrix end_joint;
  Vector weights_joint;
};

/// System I grows on [0, lambda] in place, then moves on (lambda, 1].
/// System II runs v~_t = (1 - lambda) v_{(1-lambda)t+lambda} and
/// g~_t = lambda g_{lambda t}(inverse(x)) on [0, 1]. The endpoint gap is the
/// exact W1 between the weight-normalized ensembles (closed form on the line).
Theorem1Result theorem1_check(const VelocityField& v, const GrowthField& g,
                              const std::function<Matrix(Rng&, int)>& p0_sampler, double lambda,
                              const Theorem1Options& opts = {});

}  // namespace vgfm::simulate
