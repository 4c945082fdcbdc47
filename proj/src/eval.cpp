#include "vgfm/eval.hpp"

#include "vgfm/ot.hpp"
#include "vgfm/simulate.hpp"

#include <cmath>

namespace vgfm::eval {

namespace {

Vector normalized(const Vector& w) {
  if (w.size() == 0 || !w.allFinite() || (w.array() < 0.0).any()) throw ValidationError("weights must be finite and nonnegative");
  const double s = w.sum();
  if (!(s > 0.0)) throw ValidationError("zero total weight");
  return w / s;
}

}  // namespace

double w1_metric(const Matrix& pred, const Vector& pred_weights, const Snapshot& obs) {
  if (pred.rows() == 0 || obs.size() == 0) throw ValidationError("w1_metric: empty point set");
  if (pred.rows() != pred_weights.size()) throw ValidationError("w1_metric: weight/point count mismatch");
  if (pred.cols() != obs.dim()) throw ValidationError("w1_metric: dimension mismatch");
  return ot::exact_emd(normalized(pred_weights), normalized(obs.weight_vector()), ot::distance_cost(pred, obs.points)).value;
}

double w1_metric_unweighted(const Matrix& pred, const Snapshot& obs) {
  return w1_metric(pred, Vector::Ones(pred.rows()), obs);
}

double rme_metric(double pred_total_mass, double n_t, double n_0) {
  if (!(n_0 > 0.0)) throw ValidationError("rme_metric: N_0 must be positive");
  if (!(n_t > 0.0)) throw ValidationError("rme_metric: N_t must be positive");
  const double m = n_t / n_0;
  return std::abs(m - pred_total_mass / n_0) / m;
}

double pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 3) throw ValidationError("pearson: need at least 3 points");
  const Vector dx = x.array() - x.mean();
  const Vector dy = y.array() - y.mean();
  const double sx = dx.norm(), sy = dy.norm();
  if (!(sx > 0.0) || !(sy > 0.0)) throw ValidationError("pearson: zero variance");
  return dx.dot(dy) / (sx * sy);
}

std::vector<double> growth_correlation(const nets::NetworkParams& g, const std::vector<double>& times,
                                       const std::vector<Matrix>& points, const std::vector<Vector>& true_rates) {
  if (times.size() != points.size() || times.size() != true_rates.size())
    throw ValidationError("growth_correlation: times, points and rates differ in length");
  std::vector<double> out;
  for (std::size_t k = 0; k < times.size(); ++k)
    out.push_back(pearson(nets::forward(g, points[k], times[k]).col(0), true_rates[k]));
  return out;
}

std::vector<MetricRow> evaluate(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                                int steps_per_unit, std::vector<double> times) {
  if (ds.num_times() < 2) throw ValidationError("evaluate: need at least two snapshots");
  if (times.empty())
    for (std::size_t k = 0; k < ds.num_times(); ++k) times.push_back(static_cast<double>(k));
  if (times.size() != ds.num_times()) throw ValidationError("evaluate: one time per snapshot required");
  const double n0 = static_cast<double>(ds.at(0).size());
  std::vector<MetricRow> rows;
  Matrix x = ds.at(0).points;
  Vector logw = Vector::Zero(x.rows());
  for (std::size_t k = 1; k < ds.num_times(); ++k) {
    // Piecewise runs: the trajectory is continuous, only the recording differs.
    const TrajectoryBundle traj = simulate::integrate(v, g, x, times[k - 1], times[k], steps_per_unit);
    x = traj.positions.back();
    logw += traj.log_weights.col(traj.log_weights.cols() - 1);
    const Vector w = logw.array().exp();
    const Snapshot& obs = ds.at(k);
    rows.push_back({times[k], w1_metric(x, w, obs), w1_metric_unweighted(x, obs),
                    rme_metric(w.sum(), obs.weight_vector().sum(), n0)});
  }
  return rows;
}

MetricRow holdout_metric(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& full, int held,
                         int steps_per_unit) {
  if (held <= 0 || held + 1 >= static_cast<int>(full.num_times()))
    throw ValidationError("hold-out time must be an interior snapshot");
  const Snapshot& prev = full.at(static_cast<std::size_t>(held - 1));
  const Snapshot& obs = full.at(static_cast<std::size_t>(held));
  const TrajectoryBundle traj = simulate::integrate(v, g, prev.points, held - 1.0, held, steps_per_unit);
  const Vector w = traj.weights_at(traj.num_times() - 1);
  return {static_cast<double>(held), w1_metric(traj.positions.back(), w, obs),
          w1_metric_unweighted(traj.positions.back(), obs),
          rme_metric(w.sum(), obs.weight_vector().sum(), prev.weight_vector().sum())};
}

double copy_previous_w1(const Dataset& full, int held) {
  if (held <= 0 || held >= static_cast<int>(full.num_times())) throw ValidationError("hold-out time out of range");
  const Snapshot& prev = full.at(static_cast<std::size_t>(held - 1));
  return w1_metric(prev.points, prev.weight_vector(), full.at(static_cast<std::size_t>(held)));
}

std::vector<MassPoint> mass_curve(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                                  int steps_per_unit) {
  const double n0 = ds.at(0).weight_vector().sum();
  std::vector<MassPoint> out{{0.0, 1.0, 1.0}};
  if (ds.num_times() < 2) return out;
  const TrajectoryBundle traj =
      simulate::integrate(v, g, ds.at(0).points, 0.0, static_cast<double>(ds.num_times() - 1), steps_per_unit);
  const int per_unit = simulate::num_steps(1.0, steps_per_unit);
  for (std::size_t k = 1; k < ds.num_times(); ++k) {
    const std::size_t col = k * static_cast<std::size_t>(per_unit);
    out.push_back({static_cast<double>(k), ds.at(k).weight_vector().sum() / n0, traj.weights_at(col).mean()});
  }
  return out;
}

double mean_w1(const std::vector<MetricRow>& rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.w1;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double mean_rme(const std::vector<MetricRow>& rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.rme;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

std::string format_metric_csv(const std::vector<MetricRow>& rows) {
  std::string out = "time,w1,rme\n";
  for (const auto& r : rows) out += format_double(r.time) + "," + format_double(r.w1) + "," + format_double(r.rme) + "\n";
  return out;
}

std::string format_unweighted_csv(const std::vector<MetricRow>& rows) {
  std::string out = "time,w1\n";
  for (const auto& r : rows) out += format_double(r.time) + "," + format_double(r.w1_unweighted) + "\n";
  return out;
}

std::string format_mass_csv(const std::vector<MassPoint>& rows) {
  std::string out = "time,m_obs,m_pred\n";
  for (const auto& r : rows)
    out += format_double(r.time) + "," + format_double(r.m_obs) + "," + format_double(r.m_pred) + "\n";
  return out;
}

}  // namespace vgfm::eval
