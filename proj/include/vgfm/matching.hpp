#pragma once

#include "vgfm/autodiff.hpp"
#include "vgfm/core_data.hpp"
#include "vgfm/nets.hpp"
#include "vgfm/ot.hpp"
#include "vgfm/random.hpp"

#include <cstdint>
#include <vector>

namespace vgfm::matching {

/// One conditional training example drawn from a transport plan.
struct MatchSample {
  int source = 0;
  int target = 0;
  Vector x0;
  Vector x1;
  double t = 0.0;  // absolute time in [t0, t0 + span)
  Vector xt;
  Vector v_target;
  double g_target = 0.0;
};

/// Row-stacked form of a batch, the layout the loss consumes.
struct MatchBatch {
  Matrix xt;        // B x d
  Vector t;         // B
  Matrix v_target;  // B x d
  Vector g_target;  // B

  Eigen::Index size() const { return xt.rows(); }
};

MatchBatch stack(const std::vector<MatchSample>& samples);

/// Where an interval sits on the time axis. A span other than 1 (hold-out
/// training) divides both targets by the span so that integrating them over
/// the interval still yields the displacement and the log row mass.
struct Interval {
  double t0 = 0.0;
  double span = 1.0;
};

/// Pairs come from the plan (row by its marginal, then column within the
/// row); s ~ U[0,1), xt = (1-s) x0 + s x1 + sigma * N(0, I).
/// Throws ValidationError on shape mismatch or a zero-mass sampled row.
std::vector<MatchSample> build_match_batch(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                                           int batch, double sigma, std::uint64_t seed, Interval iv = {});

/// Same draw as build_match_batch but reusing a sampler and a running Rng.
MatchBatch draw_batch(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                      const ot::PairSampler& sampler, int batch, double sigma, Interval iv, Rng& rng);

struct LossParts {
  double total = 0.0;
  double velocity = 0.0;
  double growth = 0.0;
};

/// mean_b |v(xt_b, t_b) - v_target_b|^2 + |g(xt_b, t_b) - g_target_b|^2
LossParts vgfm_loss(const nets::NetworkParams& v, const nets::NetworkParams& g, const MatchBatch& batch);
LossParts vgfm_loss(const nets::NetworkParams& v, const nets::NetworkParams& g,
                    const std::vector<MatchSample>& batch);

/// Taped form; `parts` (optional) receives the two components.
ad::Var vgfm_loss(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, const MatchBatch& batch,
                  LossParts* parts = nullptr);

// -----------------------------------------------------------------------------
// Lambda independence of the conditional targets
// -----------------------------------------------------------------------------

struct ConditionalTargets {
  Matrix velocity;  // N x d
  Vector growth;    // N
};

/// Targets for source points x0 with endpoints Tx and log masses log_r, built
/// through the two-period model (growth log_r / lambda on [0, lambda], then
/// velocity (Tx - x0) / (1 - lambda)) and mapped onto [0, 1] by the joint
/// reparameterization (1 - lambda) v and lambda g.
ConditionalTargets two_period_targets(const Matrix& x0, const Matrix& Tx, const Vector& log_r, double lambda);

/// Endpoints under the barycentric map: row i goes to sum_j P_ij x1_j / r_i.
/// Rows with zero mass are dropped; `rows` lists the source indices kept.
struct BarycentricMap {
  std::vector<int> rows;
  Matrix x0;
  Matrix Tx;
  Vector log_r;
};
BarycentricMap barycentric_map(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan);

struct LambdaReport {
  std::vector<double> lambdas;
  /// Largest absolute entry difference between any two lambdas' targets.
  double max_discrepancy = 0.0;
  ConditionalTargets targets;  // those of the first lambda
};

LambdaReport verify_lambda_free_targets(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                                        const std::vector<double>& lambdas = {0.3, 0.7});

}  // namespace vgfm::matching
