#pragma once

#include "vgfm/core_data.hpp"
#include "vgfm/nets.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vgfm::eval {

/// Exact W1 (Euclidean cost) between the prediction, weights normalized to
/// sum 1, and the observation with its normalized weights.
double w1_metric(const Matrix& pred, const Vector& pred_weights, const Snapshot& obs);
/// Same with every predicted particle weighted equally.
double w1_metric_unweighted(const Matrix& pred, const Snapshot& obs);

/// |m - m_hat| / m with m = n_t / n_0 and m_hat = pred_total_mass / n_0.
double rme_metric(double pred_total_mass, double n_t, double n_0);

/// Pearson correlation; throws ValidationError on fewer than 3 points or
/// zero variance.
double pearson(const Vector& x, const Vector& y);

/// Correlation between g(x, t) and the true rate at each unseen time.
std::vector<double> growth_correlation(const nets::NetworkParams& g, const std::vector<double>& times,
                                       const std::vector<Matrix>& points, const std::vector<Vector>& true_rates);

struct MetricRow {
  double time = 0.0;
  double w1 = 0.0;
  double w1_unweighted = 0.0;
  double rme = 0.0;
};

/// Free run from the first snapshot through all later ones; one row per
/// later snapshot. Snapshot k sits at times[k] (default: k).
std::vector<MetricRow> evaluate(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                                int steps_per_unit, std::vector<double> times = {});

/// Hold-out score: integrate the observed snapshot before `held` for one
/// time unit and compare with the held snapshot.
MetricRow holdout_metric(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& full, int held,
                         int steps_per_unit);

/// Baseline for the hold-out score: the previous snapshot unchanged.
double copy_previous_w1(const Dataset& full, int held);

struct MassPoint {
  double time = 0.0;
  double m_obs = 0.0;
  double m_pred = 0.0;
};

/// Observed N_t / N_0 against the mean predicted weight of a free run from
/// the first snapshot.
std::vector<MassPoint> mass_curve(const nets::NetworkParams& v, const nets::NetworkParams& g, const Dataset& ds,
                                  int steps_per_unit);

double mean_w1(const std::vector<MetricRow>& rows);
double mean_rme(const std::vector<MetricRow>& rows);

/// `time,w1,rme`
std::string format_metric_csv(const std::vector<MetricRow>& rows);
/// `time,w1` for the equally weighted variant.
std::string format_unweighted_csv(const std::vector<MetricRow>& rows);
/// `time,m_obs,m_pred`
std::string format_mass_csv(const std::vector<MassPoint>& rows);

}  // namespace vgfm::eval
