#include "vgfm/ot.hpp"

#include "log_kernel.hpp"
#include "network_simplex.hpp"
#include "vgfm/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vgfm::ot {

namespace {

using Array = Eigen::ArrayXXd;

double lse(const Eigen::ArrayXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v - m).exp().sum());
}

void check_finite(const Vector& f, const Vector& g, double eps) {
  if (!f.allFinite() || !g.allFinite())
    throw NumericalError("Sinkhorn scaling vectors overflowed at eps=" + std::to_string(eps) +
                         "; try a larger eps or a normalized cost");
}

void check_cost(const CostMatrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw ValidationError("cost matrix is empty");
  if (!cost.entries.allFinite() || (cost.entries.array() < 0.0).any())
    throw ValidationError("cost entries must be finite and nonnegative");
}

Matrix plan_from_potentials(const Matrix& C, const Vector& f, const Vector& g, double eps) {
  Array A = (-C.array()).colwise() + f.array();
  A.rowwise() += g.array().transpose();
  return (A / eps).exp().matrix();
}

}  // namespace

// -----------------------------------------------------------------------------
// Costs
// -----------------------------------------------------------------------------

CostMatrix squared_cost(const Matrix& a, const Matrix& b, bool normalize) {
  if (a.cols() != b.cols())
    throw ValidationError("dimension mismatch: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  CostMatrix c;
  const Vector an = a.rowwise().squaredNorm();
  const Vector bn = b.rowwise().squaredNorm();
  c.entries = (-2.0 * a * b.transpose());
  c.entries.colwise() += an;
  c.entries.rowwise() += bn.transpose();
  c.entries = c.entries.cwiseMax(0.0);
  // Recompute exactly where the expansion loses precision (near-coincident points).
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      if (c.entries(i, j) < 1e-8 * (an(i) + bn(j) + 1.0)) c.entries(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  if (normalize) {
    const double mx = c.entries.size() > 0 ? c.entries.maxCoeff() : 0.0;
    if (mx > 0.0) c.entries /= mx;
    c.normalized = true;
  }
  return c;
}

CostMatrix distance_cost(const Matrix& a, const Matrix& b) {
  CostMatrix c = squared_cost(a, b, false);
  c.entries = c.entries.array().sqrt().matrix();
  return c;
}

// -----------------------------------------------------------------------------
// Semi-relaxed and balanced Sinkhorn
// -----------------------------------------------------------------------------

double semi_relaxed_objective(const Matrix& cost, const Matrix& plan, double eps, double tau) {
  double lin = (cost.array() * plan.array()).sum();
  double ent = 0.0;
  for (Eigen::Index k = 0; k < plan.size(); ++k) {
    const double p = plan.data()[k];
    if (p > 0.0) ent += p * (std::log(p) - 1.0);
  }
  double kl = 0.0;
  const Vector r = plan.rowwise().sum();
  for (Eigen::Index i = 0; i < r.size(); ++i) kl += (r(i) > 0.0 ? r(i) * std::log(r(i)) : 0.0) - r(i) + 1.0;
  return lin + eps * ent + tau * kl;
}

TransportPlan semi_relaxed_sinkhorn(const CostMatrix& cost, double eps, double tau, const SinkhornOptions& opts) {
  if (!(eps > 0.0)) throw ValidationError("semi_relaxed_sinkhorn: eps must be > 0");
  if (!(tau > 0.0)) throw ValidationError("semi_relaxed_sinkhorn: tau must be > 0");
  check_cost(cost);

  const Matrix& C = cost.entries;
  const auto n = C.rows();
  const auto m = C.cols();
  const double kappa = tau / (tau + eps);
  const detail::LogKernel K(C, eps);

  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  Vector f_prev = f;
  Vector g_prev = g;
  int it = 0;
  bool converged = false;

  for (it = 1; it <= opts.max_iter; ++it) {
    // Column side: exact projection onto P^T 1 = 1.
    g = -eps * K.col_lse(f / eps);
    // Row side: damped KL update.
    f = -kappa * eps * K.row_lse(g / eps);
    // Exact maximization along the plan-invariant shift (f + d, g - d).
    const double d = tau * (lse(-f.array() / tau) - std::log(static_cast<double>(m)));
    f.array() += d;
    g.array() -= d;
    check_finite(f, g, eps);

    const double change = std::max((f - f_prev).cwiseAbs().maxCoeff(), (g - g_prev).cwiseAbs().maxCoeff()) / eps;
    f_prev = f;
    g_prev = g;
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }
  g = -eps * K.col_lse(f / eps);
  check_finite(f, g, eps);

  TransportPlan plan(plan_from_potentials(C, f, g, eps), eps, tau);
  plan.iterations = std::min(it, opts.max_iter);
  plan.converged = converged;
  if (!plan.matrix.allFinite()) throw NumericalError("semi_relaxed_sinkhorn produced a non-finite plan; increase eps");
  return plan;
}

TransportPlan balanced_sinkhorn(const CostMatrix& cost, double eps, const SinkhornOptions& opts) {
  if (!(eps > 0.0)) throw ValidationError("balanced_sinkhorn: eps must be > 0");
  check_cost(cost);

  const Matrix& C = cost.entries;
  const auto n = C.rows();
  const auto m = C.cols();
  const double log_row = std::log(static_cast<double>(m) / static_cast<double>(n));
  const detail::LogKernel K(C, eps);

  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  Vector f_prev = f;
  Vector g_prev = g;
  int it = 0;
  bool converged = false;
  for (it = 1; it <= opts.max_iter; ++it) {
    g = -eps * K.col_lse(f / eps);
    f = eps * (log_row - K.row_lse(g / eps).array()).matrix();
    check_finite(f, g, eps);
    const double change = std::max((f - f_prev).cwiseAbs().maxCoeff(), (g - g_prev).cwiseAbs().maxCoeff()) / eps;
    f_prev = f;
    g_prev = g;
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }
  g = -eps * K.col_lse(f / eps);
  check_finite(f, g, eps);

  TransportPlan plan(plan_from_potentials(C, f, g, eps), eps, std::numeric_limits<double>::infinity());
  plan.iterations = std::min(it, opts.max_iter);
  plan.converged = converged;
  return plan;
}

EntropicSolution entropic_transport(const Matrix& C, const Vector& a, const Vector& b, double eps,
                                    const EntropicOptions& opts) {
  if (!(eps > 0.0)) throw ValidationError("entropic_transport: eps must be > 0");
  if (C.rows() != a.size() || C.cols() != b.size()) throw ValidationError("entropic_transport: shape mismatch");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())
    throw ValidationError("entropic_transport: weights must be positive");

  const Eigen::ArrayXd log_a = a.array().log();
  const Eigen::ArrayXd log_b = b.array().log();

  // eps schedule: geometric from the cost scale down to the target.
  std::vector<double> schedule;
  const double cmax = C.size() > 0 ? C.maxCoeff() : 0.0;
  if (opts.eps_scaling && cmax > eps) {
    for (double e = cmax; e > eps; e *= opts.scaling_factor) schedule.push_back(e);
  }
  schedule.push_back(eps);

  Vector f = Vector::Zero(a.size());
  Vector g = Vector::Zero(b.size());
  EntropicSolution sol;
  int total_it = 0;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double e = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    const detail::LogKernel K(C, e);
    const int stage_iter = last ? opts.max_iter : 50;
    for (int it = 0; it < stage_iter; ++it) {
      const Vector g_new = -e * K.col_lse((log_a + f.array() / e).matrix());
      // Column marginal of the plan (f, g) just before this update; rows are
      // exact after every f update.
      const double err = (b.array() * (((g - g_new) / e).array().exp() - 1.0).abs()).sum();
      g = g_new;
      f = -e * K.row_lse((log_b + g.array() / e).matrix());
      check_finite(f, g, e);
      ++total_it;
      if (last && it > 0) {
        sol.marginal_error = err;
        if (err < opts.tol) {
          sol.converged = true;
          break;
        }
      }
    }
  }
  Array P = (-C.array() / eps).colwise() + (log_a + f.array() / eps);
  P.rowwise() += (log_b + g.array() / eps).transpose();
  sol.plan = P.exp().matrix();
  sol.f = f;
  sol.g = g;
  sol.value = a.dot(f) + b.dot(g);
  sol.iterations = total_it;
  return sol;
}

// -----------------------------------------------------------------------------
// Exact transport
// -----------------------------------------------------------------------------

EmdResult exact_emd(const Vector& a_weights, const Vector& b_weights, const CostMatrix& cost) {
  check_cost(cost);
  if (cost.rows() != a_weights.size() || cost.cols() != b_weights.size())
    throw ValidationError("exact_emd: weight sizes do not match the cost matrix");
  if ((a_weights.array() < 0.0).any() || (b_weights.array() < 0.0).any() || !a_weights.allFinite() ||
      !b_weights.allFinite())
    throw ValidationError("exact_emd: weights must be finite and nonnegative");
  const double sa = a_weights.sum();
  const double sb = b_weights.sum();
  if (std::abs(sa - 1.0) > 1e-9 || std::abs(sb - 1.0) > 1e-9)
    throw ValidationError("exact_emd: infeasible, weight sums are " + format_double(sa) + " and " + format_double(sb));

  // Balance the two sides exactly so no residual sits on artificial arcs.
  const Vector b_bal = b_weights * (sa / sb);
  detail::TransportSimplex solver(a_weights, b_bal, cost.entries);
  const auto status = solver.run();
  if (status != detail::TransportSimplex::Status::optimal)
    throw NumericalError("exact_emd: network simplex did not reach an optimal basis");

  EmdResult res;
  res.plan = TransportPlan(solver.plan(), 0.0, 0.0);
  res.value = (res.plan.matrix.array() * cost.entries.array()).sum();
  res.alpha = solver.alpha();
  res.beta = solver.beta();
  return res;
}

double emd_1d(const Vector& x, const Vector& a_weights, const Vector& y, const Vector& b_weights) {
  if (x.size() != a_weights.size() || y.size() != b_weights.size() || x.size() == 0 || y.size() == 0)
    throw ValidationError("emd_1d: size mismatch or empty input");
  std::vector<Eigen::Index> ix(static_cast<std::size_t>(x.size()));
  std::vector<Eigen::Index> iy(static_cast<std::size_t>(y.size()));
  std::iota(ix.begin(), ix.end(), 0);
  std::iota(iy.begin(), iy.end(), 0);
  std::sort(ix.begin(), ix.end(), [&](auto l, auto r) { return x(l) < x(r); });
  std::sort(iy.begin(), iy.end(), [&](auto l, auto r) { return y(l) < y(r); });
  const double sa = a_weights.sum();
  const double sb = b_weights.sum();

  // Integrate |F_a - F_b| over the merged breakpoints.
  double fa = 0.0, fb = 0.0, total = 0.0;
  std::size_t p = 0, q = 0;
  double prev = std::min(x(ix[0]), y(iy[0]));
  while (p < ix.size() || q < iy.size()) {
    const double nx = p < ix.size() ? x(ix[p]) : std::numeric_limits<double>::infinity();
    const double ny = q < iy.size() ? y(iy[q]) : std::numeric_limits<double>::infinity();
    const double cur = std::min(nx, ny);
    total += std::abs(fa - fb) * (cur - prev);
    prev = cur;
    if (nx <= ny) {
      fa += a_weights(ix[p]) / sa;
      ++p;
    } else {
      fb += b_weights(iy[q]) / sb;
      ++q;
    }
  }
  return total;
}

// -----------------------------------------------------------------------------
// Sinkhorn divergence
// -----------------------------------------------------------------------------

namespace {

// Sum_j P_ij (x_i - y_j) / |x_i - y_j| for each i.
Matrix distance_gradient(const Matrix& x, const Matrix& y, const Matrix& P, const Matrix& D) {
  Matrix W = P;
  for (Eigen::Index k = 0; k < W.size(); ++k) {
    const double d = D.data()[k];
    W.data()[k] = d > 0.0 ? W.data()[k] / d : 0.0;
  }
  Matrix grad = x.array().colwise() * W.rowwise().sum().array();
  grad -= W * y;
  return grad;
}

// Self-transport W(a, a) through the averaged symmetric fixed point
//   f <- (f - eps LSE_j(log a_j + (f_j - C_ij) / eps)) / 2,
// which converges in a handful of sweeps where alternating updates crawl.
EntropicSolution symmetric_transport(const Matrix& C, const Vector& a, double eps, const EntropicOptions& opts) {
  const Eigen::ArrayXd log_a = a.array().log();
  const detail::LogKernel K(C, eps);
  Vector f = Vector::Zero(a.size());
  EntropicSolution sol;
  for (int it = 0; it < opts.max_iter; ++it) {
    const Vector t = -eps * K.col_lse((log_a + f.array() / eps).matrix());
    const Vector fn = 0.5 * (f + t);
    if (!fn.allFinite()) check_finite(fn, fn, eps);
    const double change = (fn - f).cwiseAbs().maxCoeff() / eps;
    f = fn;
    sol.iterations = it + 1;
    if (change < opts.tol) {
      sol.converged = true;
      break;
    }
  }
  const Array negC = -C.array() / eps;
  Array P = negC.colwise() + (log_a + f.array() / eps);
  P.rowwise() += (log_a + f.array() / eps).transpose();
  sol.plan = P.exp().matrix();
  sol.f = f;
  sol.g = f;
  sol.value = 2.0 * a.dot(f);
  return sol;
}

}  // namespace

DivergenceResult sinkhorn_divergence(const WeightedPoints& a, const WeightedPoints& b, double eps,
                                     const EntropicOptions& opts) {
  if (a.points.cols() != b.points.cols()) throw ValidationError("sinkhorn_divergence: dimension mismatch");
  if (a.points.rows() != a.weights.size() || b.points.rows() != b.weights.size())
    throw ValidationError("sinkhorn_divergence: weight/point count mismatch");
  if (std::abs(a.weights.sum() - 1.0) > 1e-9 || std::abs(b.weights.sum() - 1.0) > 1e-9)
    throw ValidationError("sinkhorn_divergence: weights must sum to 1");

  const Matrix Cab = distance_cost(a.points, b.points).entries;
  const Matrix Caa = distance_cost(a.points, a.points).entries;
  const Matrix Cbb = distance_cost(b.points, b.points).entries;

  const auto ab = entropic_transport(Cab, a.weights, b.weights, eps, opts);
  const auto aa = symmetric_transport(Caa, a.weights, eps, opts);
  const auto bb = symmetric_transport(Cbb, b.weights, eps, opts);
  DivergenceResult res;
  res.converged = ab.converged && aa.converged && bb.converged;
  res.marginal_error = ab.marginal_error;
  res.value = ab.value - 0.5 * aa.value - 0.5 * bb.value;
  res.iterations = ab.iterations + aa.iterations + bb.iterations;
  const Matrix Paa_sym = 0.5 * (aa.plan + aa.plan.transpose());
  res.grad_points = distance_gradient(a.points, b.points, ab.plan, Cab) -
                    distance_gradient(a.points, a.points, Paa_sym, Caa);
  res.grad_weights = ab.f - 0.5 * (aa.f + aa.g);
  return res;
}

// -----------------------------------------------------------------------------
// Pair sampling and elbow scan
// -----------------------------------------------------------------------------

PairSample sample_pairs(const TransportPlan& plan, int batch, std::uint64_t seed) {
  PairSampler sampler(plan);
  Rng rng(seed);
  PairSample out;
  out.pairs = sampler.sample(batch, rng);
  out.skipped_rows = sampler.zero_rows();
  return out;
}

PairSampler::PairSampler(const TransportPlan& plan) : rows_(plan.rows()), cols_(plan.cols()) {
  if (plan.rows() == 0 || plan.cols() == 0) throw ValidationError("sample_pairs: empty plan");
  if (!plan.matrix.allFinite() || (plan.matrix.array() < 0.0).any())
    throw ValidationError("sample_pairs: plan entries must be finite and nonnegative");
  row_cdf_.resize(static_cast<std::size_t>(rows_));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rows_; ++i) {
    const double r = plan.matrix.row(i).sum();
    if (r <= 0.0)
      zero_rows_.push_back(static_cast<int>(i));
    else
      last_positive_row_ = i;
    acc += r;
    row_cdf_[static_cast<std::size_t>(i)] = acc;
  }
  if (!(acc > 0.0)) throw ValidationError("sample_pairs: plan has zero total mass");
  for (auto& v : row_cdf_) v /= acc;
  // Row-major cumulative sums of each normalized row.
  cell_cdf_.resize(static_cast<std::size_t>(rows_ * cols_));
  for (Eigen::Index i = 0; i < rows_; ++i) {
    const double r = plan.matrix.row(i).sum();
    double c = 0.0;
    for (Eigen::Index j = 0; j < cols_; ++j) {
      c += plan.matrix(i, j);
      cell_cdf_[static_cast<std::size_t>(i * cols_ + j)] = r > 0.0 ? c / r : 0.0;
    }
  }
}

std::vector<std::pair<int, int>> PairSampler::sample(int batch, Rng& rng) const {
  if (batch < 0) throw ValidationError("sample_pairs: negative batch size");
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(batch));
  for (int k = 0; k < batch; ++k) {
    // upper_bound never lands on a zero-mass row: its CDF value equals the
    // previous one. Only round-off at the top end needs a fallback.
    const double u = rng.uniform();
    auto i = static_cast<Eigen::Index>(std::upper_bound(row_cdf_.begin(), row_cdf_.end(), u) - row_cdf_.begin());
    if (i == rows_) i = last_positive_row_;
    const double v = rng.uniform();
    const auto begin = cell_cdf_.begin() + i * cols_;
    auto j = static_cast<Eigen::Index>(std::upper_bound(begin, begin + cols_, v) - begin);
    if (j == cols_) {
      j = cols_ - 1;
      while (j > 0 && cell_cdf_[static_cast<std::size_t>(i * cols_ + j)] == cell_cdf_[static_cast<std::size_t>(i * cols_ + j - 1)]) --j;
    }
    pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  return pairs;
}

std::vector<ElbowPoint> elbow_scan_tau(const Snapshot& p0, const Snapshot& p1, double eps,
                                       const std::vector<double>& tau_grid, bool normalize_cost,
                                       const SinkhornOptions& opts) {
  if (tau_grid.empty()) throw ValidationError("elbow_scan_tau: empty tau grid");
  for (std::size_t k = 1; k < tau_grid.size(); ++k)
    if (!(tau_grid[k] > tau_grid[k - 1])) throw ValidationError("elbow_scan_tau: tau grid must be strictly increasing");
  const CostMatrix cost = squared_cost(p0.points, p1.points, normalize_cost);
  std::vector<ElbowPoint> curve;
  for (double tau : tau_grid) {
    ElbowPoint pt;
    pt.tau = tau;
    try {
      const auto plan = semi_relaxed_sinkhorn(cost, eps, tau, opts);
      pt.transport_cost = (plan.matrix.array() * cost.entries.array()).sum();
      pt.converged = plan.converged;
    } catch (const Error& e) {
      pt.ok = false;
      pt.transport_cost = std::numeric_limits<double>::quiet_NaN();
      pt.error = e.what();
    }
    curve.push_back(pt);
  }
  return curve;
}

std::string format_elbow_csv(const std::vector<ElbowPoint>& curve) {
  std::string out = "tau,transport_cost\n";
  for (const auto& p : curve) out += format_double(p.tau) + "," + format_double(p.transport_cost) + "\n";
  return out;
}

}  // namespace vgfm::ot
