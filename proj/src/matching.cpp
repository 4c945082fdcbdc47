#include "vgfm/matching.hpp"

#include <cmath>

namespace vgfm::matching {

namespace {

void check_shapes(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan) {
  if (plan.rows() != p0.size() || plan.cols() != p1.size())
    throw ValidationError("plan shape " + std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()) +
                          " does not match snapshots " + std::to_string(p0.size()) + " and " +
                          std::to_string(p1.size()));
  if (p0.dim() != p1.dim()) throw ValidationError("snapshot dimensions differ");
}

void check_interval(const Interval& iv) {
  if (!(iv.span > 0.0) || !std::isfinite(iv.t0)) throw ValidationError("interval span must be positive");
}

}  // namespace

MatchBatch stack(const std::vector<MatchSample>& samples) {
  MatchBatch b;
  if (samples.empty()) return b;
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto d = samples.front().xt.size();
  b.xt.resize(n, d);
  b.t.resize(n);
  b.v_target.resize(n, d);
  b.g_target.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const MatchSample& s = samples[static_cast<std::size_t>(k)];
    b.xt.row(k) = s.xt.transpose();
    b.t(k) = s.t;
    b.v_target.row(k) = s.v_target.transpose();
    b.g_target(k) = s.g_target;
  }
  return b;
}

MatchBatch draw_batch(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                      const ot::PairSampler& sampler, int batch, double sigma, Interval iv, Rng& rng) {
  check_shapes(p0, p1, plan);
  check_interval(iv);
  if (batch < 1) throw ValidationError("batch size must be at least 1");
  if (sigma < 0.0) throw ValidationError("noise sigma must be nonnegative");
  const auto d = p0.dim();
  MatchBatch b;
  b.xt.resize(batch, d);
  b.t.resize(batch);
  b.v_target.resize(batch, d);
  b.g_target.resize(batch);
  // Pairs, then times, then noise: the first two never depend on sigma.
  const auto pairs = sampler.sample(batch, rng);
  Vector s(batch);
  for (int k = 0; k < batch; ++k) s(k) = rng.uniform();
  for (int k = 0; k < batch; ++k) {
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    const double r = plan.row_marginal(i);
    if (!(r > 0.0)) throw ValidationError("sampled row " + std::to_string(i) + " has no mass");
    const auto x0 = p0.points.row(i);
    const auto x1 = p1.points.row(j);
    b.xt.row(k) = (1.0 - s(k)) * x0 + s(k) * x1;
    b.t(k) = iv.t0 + s(k) * iv.span;
    b.v_target.row(k) = (x1 - x0) / iv.span;
    b.g_target(k) = std::log(r) / iv.span;
  }
  if (sigma > 0.0)
    for (int k = 0; k < batch; ++k)
      for (Eigen::Index c = 0; c < d; ++c) b.xt(k, c) += sigma * rng.normal();
  return b;
}

std::vector<MatchSample> build_match_batch(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                                           int batch, double sigma, std::uint64_t seed, Interval iv) {
  check_shapes(p0, p1, plan);
  const ot::PairSampler sampler(plan);
  Rng rng(seed);
  // Replays the same stream as draw_batch so both layouts agree sample by sample.
  Rng replay = rng;
  const MatchBatch b = draw_batch(p0, p1, plan, sampler, batch, sigma, iv, rng);
  const auto pairs = sampler.sample(batch, replay);
  std::vector<MatchSample> out(static_cast<std::size_t>(batch));
  for (int k = 0; k < batch; ++k) {
    MatchSample& s = out[static_cast<std::size_t>(k)];
    s.source = pairs[static_cast<std::size_t>(k)].first;
    s.target = pairs[static_cast<std::size_t>(k)].second;
    s.x0 = p0.points.row(s.source).transpose();
    s.x1 = p1.points.row(s.target).transpose();
    s.t = b.t(k);
    s.xt = b.xt.row(k).transpose();
    s.v_target = b.v_target.row(k).transpose();
    s.g_target = b.g_target(k);
  }
  return out;
}

ad::Var vgfm_loss(ad::Tape& tape, const nets::TapedNet& v, const nets::TapedNet& g, const MatchBatch& batch,
                  LossParts* parts) {
  const auto n = batch.size();
  if (n == 0) throw ValidationError("vgfm_loss: empty batch");
  Matrix input(n, batch.xt.cols() + 1);
  input << batch.xt, batch.t;
  const ad::Var in = tape.constant(std::move(input));
  const double inv_n = 1.0 / static_cast<double>(n);

  const ad::Var dv = ad::sub(tape, nets::forward(tape, v, in), tape.constant(batch.v_target));
  const ad::Var lv = ad::scale(tape, ad::sum(tape, ad::square(tape, dv)), inv_n);
  const ad::Var dg = ad::sub(tape, nets::forward(tape, g, in), tape.constant(Matrix(batch.g_target)));
  const ad::Var lg = ad::scale(tape, ad::sum(tape, ad::square(tape, dg)), inv_n);
  const ad::Var total = ad::add(tape, lv, lg);
  if (parts) *parts = {tape.scalar(total), tape.scalar(lv), tape.scalar(lg)};
  return total;
}

LossParts vgfm_loss(const nets::NetworkParams& v, const nets::NetworkParams& g, const MatchBatch& batch) {
  if (batch.size() == 0) throw ValidationError("vgfm_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossParts p;
  p.velocity = (nets::forward(v, batch.xt, batch.t) - batch.v_target).squaredNorm() * inv_n;
  p.growth = (nets::forward(g, batch.xt, batch.t).col(0) - batch.g_target).squaredNorm() * inv_n;
  p.total = p.velocity + p.growth;
  return p;
}

LossParts vgfm_loss(const nets::NetworkParams& v, const nets::NetworkParams& g,
                    const std::vector<MatchSample>& batch) {
  return vgfm_loss(v, g, stack(batch));
}

ConditionalTargets two_period_targets(const Matrix& x0, const Matrix& Tx, const Vector& log_r, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ValidationError("lambda must lie in (0, 1)");
  if (x0.rows() != Tx.rows() || x0.cols() != Tx.cols() || log_r.size() != x0.rows())
    throw ValidationError("two_period_targets: shape mismatch");
  // Period I grows at a constant rate, period II moves at a constant speed.
  const Vector g_star = log_r / lambda;
  const Matrix v_star = (Tx - x0) / (1.0 - lambda);
  return {(1.0 - lambda) * v_star, lambda * g_star};
}

BarycentricMap barycentric_map(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan) {
  check_shapes(p0, p1, plan);
  BarycentricMap m;
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    if (plan.row_marginal(i) > 0.0) m.rows.push_back(static_cast<int>(i));
  const auto n = static_cast<Eigen::Index>(m.rows.size());
  m.x0.resize(n, p0.dim());
  m.Tx.resize(n, p0.dim());
  m.log_r.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int i = m.rows[static_cast<std::size_t>(k)];
    const double r = plan.row_marginal(i);
    m.x0.row(k) = p0.points.row(i);
    m.Tx.row(k) = plan.matrix.row(i) * p1.points / r;
    m.log_r(k) = std::log(r);
  }
  return m;
}

LambdaReport verify_lambda_free_targets(const Snapshot& p0, const Snapshot& p1, const TransportPlan& plan,
                                        const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ValidationError("verify_lambda_free_targets: no lambda given");
  const BarycentricMap m = barycentric_map(p0, p1, plan);
  LambdaReport rep;
  rep.lambdas = lambdas;
  rep.targets = two_period_targets(m.x0, m.Tx, m.log_r, lambdas.front());
  for (std::size_t k = 1; k < lambdas.size(); ++k) {
    const ConditionalTargets other = two_period_targets(m.x0, m.Tx, m.log_r, lambdas[k]);
    if (m.x0.rows() == 0) continue;
    rep.max_discrepancy = std::max({rep.max_discrepancy, (other.velocity - rep.targets.velocity).cwiseAbs().maxCoeff(),
                                    (other.growth - rep.targets.growth).cwiseAbs().maxCoeff()});
  }
  return rep;
}

}  // namespace vgfm::matching
