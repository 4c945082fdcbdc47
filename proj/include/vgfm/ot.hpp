#pragma once

#include "vgfm/core_data.hpp"
#include "vgfm/random.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vgfm::ot {

/// Nonnegative pairwise cost between two point sets.
struct CostMatrix {
  Matrix entries;
  bool normalized = false;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

/// c_ij = |a_i - b_j|^2, optionally divided by the largest entry.
CostMatrix squared_cost(const Matrix& a, const Matrix& b, bool normalize = false);

/// c_ij = |a_i - b_j| (unsquared Euclidean distance).
CostMatrix distance_cost(const Matrix& a, const Matrix& b);

struct SinkhornOptions {
  int max_iter = 5000;
  /// Stop when the sup-norm change of both log scaling vectors drops below this.
  double tol = 1e-9;
};

/// Entropic semi-relaxed transport:
///   min  <C, P> + eps * sum P (log P - 1) + tau * KL(P 1 | 1_n)
///   s.t. P^T 1_n = 1_m
/// Solved in the log domain. The relaxed (row) side uses the damped update
/// with exponent tau / (tau + eps); the column side is an exact projection,
/// and the returned plan always ends on a column projection. The shift mode
/// (f + c, g - c), which leaves the plan unchanged, is resolved exactly after
/// every sweep.
///
/// Throws NumericalError when the potentials leave the finite range.
TransportPlan semi_relaxed_sinkhorn(const CostMatrix& cost, double eps, double tau, const SinkhornOptions& opts = {});

/// Entropic balanced transport in the same mass scale as the semi-relaxed
/// solver: columns carry mass 1 and rows carry m/n each. This is the
/// tau -> infinity limit of semi_relaxed_sinkhorn.
TransportPlan balanced_sinkhorn(const CostMatrix& cost, double eps, const SinkhornOptions& opts = {});

/// Objective value minimized by semi_relaxed_sinkhorn, evaluated at any
/// nonnegative matrix (0 log 0 = 0).
double semi_relaxed_objective(const Matrix& cost, const Matrix& plan, double eps, double tau);

/// Log-domain balanced entropic OT between weighted measures with arbitrary
/// marginals (sum a == sum b). Potentials satisfy
///   P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps).
struct EntropicSolution {
  Matrix plan;
  Vector f;
  Vector g;
  double value = 0.0;  // <a, f> + <b, g>
  int iterations = 0;
  bool converged = false;
  /// L1 column-marginal violation at the last check.
  double marginal_error = 0.0;
};

struct EntropicOptions {
  int max_iter = 20000;
  double tol = 1e-9;
  /// Geometric annealing of eps from the cost scale down to the target.
  bool eps_scaling = true;
  double scaling_factor = 0.5;
};

EntropicSolution entropic_transport(const Matrix& cost, const Vector& a, const Vector& b, double eps,
                                    const EntropicOptions& opts = {});

// -----------------------------------------------------------------------------
// Exact transport
// -----------------------------------------------------------------------------

struct EmdResult {
  TransportPlan plan;
  double value = 0.0;
  /// Dual certificate: alpha_i + beta_j <= C_ij, equality on the support.
  Vector alpha;
  Vector beta;
};

/// Exact (unregularized) optimal transport via the network simplex method.
/// Weight vectors must be positive and each sum to 1 within 1e-9.
EmdResult exact_emd(const Vector& a_weights, const Vector& b_weights, const CostMatrix& cost);

/// Exact W1 between two weighted samples on the real line (sorted CDF formula).
double emd_1d(const Vector& x, const Vector& a_weights, const Vector& y, const Vector& b_weights);

// -----------------------------------------------------------------------------
// Sinkhorn divergence
// -----------------------------------------------------------------------------

struct WeightedPoints {
  Matrix points;
  Vector weights;  // sums to 1
};

struct DivergenceResult {
  double value = 0.0;
  /// d value / d a.points and d value / d a.weights (the `b` side is held fixed).
  Matrix grad_points;
  Vector grad_weights;
  int iterations = 0;
  /// All three inner solves met the tolerance. Nearly coincident supports
  /// converge slowly; the value is still accurate long before the plan is.
  bool converged = false;
  double marginal_error = 0.0;
};

/// Debiased entropic divergence with Euclidean ground cost |x - y|:
///   S = W(a, b) - W(a, a) / 2 - W(b, b) / 2,
/// where W is the dual value of entropic_transport (the two self terms use
/// a symmetric fixed point). Gradients come from the converged potentials
/// (envelope theorem). Non-convergence is reported in the result, not thrown.
DivergenceResult sinkhorn_divergence(const WeightedPoints& a, const WeightedPoints& b, double eps,
                                     const EntropicOptions& opts = {});

// -----------------------------------------------------------------------------
// Sampling and tuning
// -----------------------------------------------------------------------------

struct PairSample {
  std::vector<std::pair<int, int>> pairs;
  /// Rows whose mass was zero and therefore never drawn.
  std::vector<int> skipped_rows;
};

/// Precomputed cumulative tables for repeated draws from one plan.
class PairSampler {
 public:
  explicit PairSampler(const TransportPlan& plan);
  std::vector<std::pair<int, int>> sample(int batch, Rng& rng) const;
  const std::vector<int>& zero_rows() const { return zero_rows_; }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  Eigen::Index last_positive_row_ = 0;
  std::vector<double> row_cdf_;
  std::vector<double> cell_cdf_;
  std::vector<int> zero_rows_;
};

/// Draw index pairs with probability proportional to the plan entries:
/// i from the row marginal, then j from the normalized row. Deterministic in
/// `seed`.
PairSample sample_pairs(const TransportPlan& plan, int batch, std::uint64_t seed);

struct ElbowPoint {
  double tau = 0.0;
  double transport_cost = 0.0;
  bool ok = true;
  bool converged = true;
  std::string error;
};

/// One semi-relaxed solve per tau; reports sum_ij P_ij C_ij for each.
std::vector<ElbowPoint> elbow_scan_tau(const Snapshot& p0, const Snapshot& p1, double eps,
                                       const std::vector<double>& tau_grid, bool normalize_cost = false,
                                       const SinkhornOptions& opts = {});

std::string format_elbow_csv(const std::vector<ElbowPoint>& curve);

}  // namespace vgfm::ot
