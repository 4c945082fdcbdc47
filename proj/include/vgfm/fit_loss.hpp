#pragma once

#include "vgfm/autodiff.hpp"
#include "vgfm/core_data.hpp"
#include "vgfm/nets.hpp"

#include <string>

namespace vgfm::fit {

/// Which distance compares a predicted ensemble with an observed snapshot.
struct FitVariant {
  enum class Kind { emd, sinkhorn };
  Kind kind = Kind::emd;
  /// Entropic parameter of the Sinkhorn divergence.
  double eps = 0.001;

  /// "emd", "sinkhorn" or "sinkhorn:<eps>". Throws ValidationError.
  static FitVariant parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const FitVariant&) const = default;
};

/// Exact W1 between the predicted ensemble (weights normalized to sum 1) and
/// the observed snapshot (uniform 1/N, or its own weights normalized), with
/// Euclidean ground cost. If `grad_points` is given it receives the gradient
/// with the optimal plan held fixed: sum_j P_ij (x_i - y_j) / |x_i - y_j|.
double weighted_w1_fit_loss(const Matrix& pred_points, const Vector& pred_weights, const Snapshot& obs,
                            Matrix* grad_points = nullptr);
/// Grid slice k of a trajectory.
double weighted_w1_fit_loss(const TrajectoryBundle& pred, std::size_t k, const Snapshot& obs);

/// Debiased Sinkhorn divergence with the same normalization; gradients flow
/// to points and to raw (unnormalized) weights.
double sinkhorn_fit_loss(const Matrix& pred_points, const Vector& pred_weights, const Snapshot& obs, double eps,
                         Matrix* grad_points = nullptr, Vector* grad_weights = nullptr);
double sinkhorn_fit_loss(const TrajectoryBundle& pred, std::size_t k, const Snapshot& obs, double eps);

/// Taped forms. The EMD node depends on the positions only (the plan is a
/// constant of differentiation); the Sinkhorn node also takes the N x 1 log
/// weights.
ad::Var weighted_w1_fit_loss(ad::Tape& tape, ad::Var pred_points, const Vector& pred_weights, const Snapshot& obs);
ad::Var sinkhorn_fit_loss(ad::Tape& tape, ad::Var pred_points, ad::Var pred_log_weights, const Snapshot& obs,
                          double eps);

/// Teacher-forced sum over intervals: integrate observed X_t to t + 1 and
/// compare with X_{t+1}.
double multi_time_fit_loss(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                           int steps_per_unit, const FitVariant& variant = {});

/// One interval of the above on a tape, from `start` at time t0 to t0 + span.
ad::Var interval_fit_loss(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, const Matrix& start,
                          double t0, double span, const Snapshot& obs, int steps_per_unit, const FitVariant& variant);

}  // namespace vgfm::fit
