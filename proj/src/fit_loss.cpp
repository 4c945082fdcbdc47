#include "vgfm/fit_loss.hpp"

#include "vgfm/ot.hpp"
#include "vgfm/simulate.hpp"

#include <cmath>

namespace vgfm::fit {

FitVariant FitVariant::parse(const std::string& text) {
  FitVariant v;
  if (text == "emd") return v;
  if (text == "sinkhorn") {
    v.kind = Kind::sinkhorn;
    return v;
  }
  const std::string prefix = "sinkhorn:";
  if (text.rfind(prefix, 0) == 0) {
    v.kind = Kind::sinkhorn;
    const std::string num = text.substr(prefix.size());
    std::size_t used = 0;
    try {
      v.eps = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size() || !(v.eps > 0.0) || !std::isfinite(v.eps))
      throw ValidationError("fit variant: bad sinkhorn epsilon '" + num + "'");
    return v;
  }
  throw ValidationError("fit variant must be emd or sinkhorn[:eps], got '" + text + "'");
}

std::string FitVariant::to_string() const {
  return kind == Kind::emd ? "emd" : "sinkhorn:" + format_double(eps);
}

namespace {

Vector normalized(const Vector& w, const char* what) {
  if (w.size() == 0) throw ValidationError(std::string(what) + ": empty weight vector");
  if (!w.allFinite() || (w.array() < 0.0).any()) throw ValidationError(std::string(what) + ": weights must be finite and nonnegative");
  const double s = w.sum();
  if (!(s > 0.0)) throw ValidationError(std::string(what) + ": zero total weight");
  return w / s;
}

void check_pair(const Matrix& pred, const Vector& w, const Snapshot& obs) {
  if (pred.rows() == 0) throw ValidationError("fit loss: empty prediction");
  if (pred.rows() != w.size()) throw ValidationError("fit loss: weight/point count mismatch");
  if (obs.size() == 0) throw ValidationError("fit loss: empty observation");
  if (pred.cols() != obs.dim()) throw ValidationError("fit loss: dimension mismatch");
}

// Pairs with zero distance contribute no gradient (subgradient 0).
Matrix frozen_plan_gradient(const Matrix& x, const Matrix& y, const Matrix& plan, const Matrix& dist) {
  Matrix W(plan.rows(), plan.cols());
  for (Eigen::Index k = 0; k < W.size(); ++k)
    W.data()[k] = dist.data()[k] > 0.0 ? plan.data()[k] / dist.data()[k] : 0.0;
  Matrix g = x.array().colwise() * W.rowwise().sum().array();
  g -= W * y;
  return g;
}

struct SinkhornParts {
  double value;
  Matrix grad_points;
  Vector grad_normalized;  // d S / d a, a the normalized weights
};

SinkhornParts divergence(const Matrix& pred, const Vector& a, const Snapshot& obs, double eps) {
  if (!(eps > 0.0)) throw ValidationError("sinkhorn fit loss: eps must be positive");
  const ot::DivergenceResult r =
      ot::sinkhorn_divergence({pred, a}, {obs.points, normalized(obs.weight_vector(), "observation")}, eps);
  if (!std::isfinite(r.value) || !r.grad_points.allFinite())
    throw NumericalError("sinkhorn fit loss: non-finite divergence");
  return {r.value, r.grad_points, r.grad_weights};
}

}  // namespace

double weighted_w1_fit_loss(const Matrix& pred_points, const Vector& pred_weights, const Snapshot& obs,
                            Matrix* grad_points) {
  check_pair(pred_points, pred_weights, obs);
  const Vector a = normalized(pred_weights, "prediction");
  const Vector b = normalized(obs.weight_vector(), "observation");
  const ot::CostMatrix cost = ot::distance_cost(pred_points, obs.points);
  const ot::EmdResult r = ot::exact_emd(a, b, cost);
  if (grad_points) *grad_points = frozen_plan_gradient(pred_points, obs.points, r.plan.matrix, cost.entries);
  return r.value;
}

double weighted_w1_fit_loss(const TrajectoryBundle& pred, std::size_t k, const Snapshot& obs) {
  return weighted_w1_fit_loss(pred.positions.at(k), pred.weights_at(k), obs);
}

double sinkhorn_fit_loss(const Matrix& pred_points, const Vector& pred_weights, const Snapshot& obs, double eps,
                         Matrix* grad_points, Vector* grad_weights) {
  check_pair(pred_points, pred_weights, obs);
  const Vector a = normalized(pred_weights, "prediction");
  SinkhornParts s = divergence(pred_points, a, obs, eps);
  if (grad_points) *grad_points = std::move(s.grad_points);
  if (grad_weights) {
    // Through a = w / sum(w): the constant mode of the potential drops out.
    *grad_weights = (s.grad_normalized.array() - a.dot(s.grad_normalized)) / pred_weights.sum();
  }
  return s.value;
}

double sinkhorn_fit_loss(const TrajectoryBundle& pred, std::size_t k, const Snapshot& obs, double eps) {
  return sinkhorn_fit_loss(pred.positions.at(k), pred.weights_at(k), obs, eps);
}

ad::Var weighted_w1_fit_loss(ad::Tape& tape, ad::Var pred_points, const Vector& pred_weights, const Snapshot& obs) {
  Matrix grad;
  const double value = weighted_w1_fit_loss(tape.value(pred_points), pred_weights, obs, &grad);
  return tape.record(Matrix::Constant(1, 1, value), {pred_points},
                     [pred_points, grad = std::move(grad)](ad::Tape& t, std::size_t self) {
                       t.accumulate(pred_points, t.grad_ref(self)(0, 0) * grad);
                     });
}

ad::Var sinkhorn_fit_loss(ad::Tape& tape, ad::Var pred_points, ad::Var pred_log_weights, const Snapshot& obs,
                          double eps) {
  const Matrix& x = tape.value(pred_points);
  const Matrix& lw = tape.value(pred_log_weights);
  if (lw.rows() != x.rows() || lw.cols() != 1) throw ValidationError("sinkhorn fit loss: log weights must be N x 1");
  check_pair(x, lw.col(0), obs);
  // Softmax of the log weights, shifted for range.
  Vector a = (lw.col(0).array() - lw.maxCoeff()).exp();
  a /= a.sum();
  SinkhornParts s = divergence(x, a, obs, eps);
  const Vector grad_lw = a.array() * (s.grad_normalized.array() - a.dot(s.grad_normalized));
  return tape.record(Matrix::Constant(1, 1, s.value), {pred_points, pred_log_weights},
                     [pred_points, pred_log_weights, gp = std::move(s.grad_points), grad_lw](ad::Tape& t, std::size_t self) {
                       const double up = t.grad_ref(self)(0, 0);
                       if (t.requires_grad(pred_points)) t.accumulate(pred_points, up * gp);
                       if (t.requires_grad(pred_log_weights)) t.accumulate(pred_log_weights, up * Matrix(grad_lw));
                     });
}

ad::Var interval_fit_loss(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, const Matrix& start,
                          double t0, double span, const Snapshot& obs, int steps_per_unit, const FitVariant& variant) {
  const bool weights_on_tape = variant.kind == FitVariant::Kind::sinkhorn;
  const simulate::TapedEndpoint end =
      simulate::integrate_taped(tape, v, g, tape.constant(start), t0, t0 + span, steps_per_unit, weights_on_tape);
  if (weights_on_tape) return sinkhorn_fit_loss(tape, end.positions, end.log_weights, obs, variant.eps);
  // Shift before exponentiating; the loss ignores the overall scale.
  const Vector w = (end.log_weight_values.array() - end.log_weight_values.maxCoeff()).exp();
  return weighted_w1_fit_loss(tape, end.positions, w, obs);
}

double multi_time_fit_loss(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                           int steps_per_unit, const FitVariant& variant) {
  if (ds.num_times() < 2) throw ValidationError("multi_time_fit_loss needs at least two snapshots");
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ds.num_times(); ++t) {
    const TrajectoryBundle traj = simulate::integrate(v, g, ds.at(t).points, static_cast<double>(t),
                                                      static_cast<double>(t + 1), steps_per_unit);
    const std::size_t k = traj.num_times() - 1;
    const Vector lw = traj.log_weights.col(static_cast<Eigen::Index>(k));
    const Vector w = (lw.array() - lw.maxCoeff()).exp();
    total += variant.kind == FitVariant::Kind::emd
                 ? weighted_w1_fit_loss(traj.positions[k], w, ds.at(t + 1))
                 : sinkhorn_fit_loss(traj.positions[k], w, ds.at(t + 1), variant.eps);
  }
  return total;
}

}  // namespace vgfm::fit
