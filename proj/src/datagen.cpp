#include "vgfm/datagen.hpp"

#include "vgfm/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vgfm::datagen {

void GeneSimParams::validate() const {
  auto nonneg = [](const std::array<double, 3>& a) { return std::all_of(a.begin(), a.end(), [](double v) { return v >= 0.0; }); };
  if (!nonneg(alpha) || !nonneg(gamma) || !nonneg(delta) || !nonneg(eta) || eta_division < 0.0 || beta < 0.0)
    throw ValidationError("gene parameters must be nonnegative");
  if (!(dt > 0.0)) throw ValidationError("gene dt must be positive");
  if (observation_steps.size() < 2) throw ValidationError("need at least two observation steps");
  for (std::size_t k = 0; k < observation_steps.size(); ++k) {
    if (observation_steps[k] < 0) throw ValidationError("observation steps must be nonnegative");
    if (k > 0 && observation_steps[k] <= observation_steps[k - 1]) throw ValidationError("observation steps must increase");
  }
  const int gap = observation_steps[1] - observation_steps[0];
  for (std::size_t k = 1; k < observation_steps.size(); ++k)
    if (observation_steps[k] - observation_steps[k - 1] != gap) throw ValidationError("observation steps must be evenly spaced");
  for (int s : ood_steps)
    if (s < observation_steps.front() || s > observation_steps.back()) throw ValidationError("unseen step outside the simulated range");
  if (observed_genes < 1 || observed_genes > 3) throw ValidationError("observed_genes must be 1, 2 or 3");
  if (init_std < 0.0) throw ValidationError("init_std must be nonnegative");
}

int GeneSimParams::steps_per_gap() const { return observation_steps.at(1) - observation_steps.at(0); }

double division_probability(double x2, const GeneSimParams& p) {
  const double s = x2 * x2;
  return p.alpha[1] * s / (1.0 + s) / 100.0;
}

double true_growth_rate(const Vector& x, const GeneSimParams& p) {
  if (x.size() < 2 || !x.allFinite()) throw ValidationError("true_growth_rate: need a finite state with X2");
  return division_probability(x(1), p) * p.steps_per_gap();
}

namespace {

struct Cell {
  std::array<double, 3> x;
  int lineage;
};

void drift(const std::array<double, 3>& x, const GeneSimParams& p, std::array<double, 3>& out) {
  const double s1 = x[0] * x[0], s2 = x[1] * x[1], s3 = x[2] * x[2];
  const auto& a = p.alpha;
  const auto& g = p.gamma;
  out[0] = (a[0] * s1 + p.beta) / (1.0 + a[0] * s1 + g[1] * s2 + g[2] * s3 + p.beta) - p.delta[0] * x[0];
  out[1] = (a[1] * s2 + p.beta) / (1.0 + g[0] * s1 + a[1] * s2 + g[2] * s3 + p.beta) - p.delta[1] * x[1];
  out[2] = a[2] * s3 / (1.0 + a[2] * s3) - p.delta[2] * x[2];
}

void record(const std::vector<Cell>& cells, const GeneSimParams& p, Matrix& pts, Vector& growth, IndexVector* lineage) {
  const auto n = static_cast<Eigen::Index>(cells.size());
  pts.resize(n, p.observed_genes);
  growth.resize(n);
  if (lineage) lineage->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Cell& c = cells[static_cast<std::size_t>(i)];
    for (int k = 0; k < p.observed_genes; ++k) pts(i, k) = c.x[static_cast<std::size_t>(k)];
    growth(i) = division_probability(c.x[1], p) * p.steps_per_gap();
    if (lineage) (*lineage)(i) = c.lineage;
  }
}

}  // namespace

GeneSimulation gen_simulation_gene(const GeneSimParams& params, int n_init_per_cluster, std::uint64_t seed) {
  params.validate();
  if (n_init_per_cluster < 1) throw ValidationError("need at least one cell per cluster");
  Rng rng(seed);
  std::vector<Cell> cells;
  for (int c = 0; c < 2; ++c) {
    const auto& mean = c == 0 ? params.init_mean_a : params.init_mean_b;
    for (int i = 0; i < n_init_per_cluster; ++i) {
      Cell cell{{}, c};
      for (int k = 0; k < 3; ++k) cell.x[k] = std::max(0.0, mean[k] + params.init_std * rng.normal());
      cells.push_back(cell);
    }
  }

  GeneSimulation sim;
  std::vector<Snapshot> snaps;
  const double sqrt_dt = std::sqrt(params.dt);
  const int gap = params.steps_per_gap();
  const int last = params.observation_steps.back();
  std::array<double, 3> f{};
  for (int step = params.observation_steps.front(); step <= last; ++step) {
    if (std::find(params.observation_steps.begin(), params.observation_steps.end(), step) != params.observation_steps.end()) {
      Matrix pts;
      Vector growth;
      IndexVector lin;
      record(cells, params, pts, growth, &lin);
      snaps.emplace_back(static_cast<int>(snaps.size()), std::move(pts));
      sim.true_growth.push_back(std::move(growth));
      sim.lineage.push_back(std::move(lin));
    }
    if (std::find(params.ood_steps.begin(), params.ood_steps.end(), step) != params.ood_steps.end()) {
      Matrix pts;
      Vector growth;
      record(cells, params, pts, growth, nullptr);
      sim.ood_times.push_back(static_cast<double>(step - params.observation_steps.front()) / gap);
      sim.ood_points.push_back(std::move(pts));
      sim.ood_true_growth.push_back(std::move(growth));
    }
    if (step == last) break;

    // Division decisions use the state at the start of the step; daughters
    // are appended in parent order.
    const std::size_t n = cells.size();
    std::vector<char> divides(n);
    for (std::size_t i = 0; i < n; ++i) divides[i] = rng.uniform() < division_probability(cells[i].x[1], params);
    for (std::size_t i = 0; i < n; ++i) {
      Cell& c = cells[i];
      drift(c.x, params, f);
      for (int k = 0; k < 3; ++k)
        c.x[k] = std::max(0.0, c.x[k] + f[k] * params.dt + params.eta[k] * sqrt_dt * rng.normal());
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!divides[i]) continue;
      ++sim.divisions[static_cast<std::size_t>(cells[i].lineage)];
      Cell daughter = cells[i];
      for (int k = 0; k < 3; ++k) {
        cells[i].x[k] = std::max(0.0, cells[i].x[k] + params.eta_division * rng.normal());
        daughter.x[k] = std::max(0.0, daughter.x[k] + params.eta_division * rng.normal());
      }
      cells.push_back(daughter);
    }
  }
  sim.data = Dataset(std::move(snaps));
  return sim;
}

void write_gene_truth_csv(const GeneSimulation& sim, const std::filesystem::path& path) {
  std::string out = "t,cell,true_growth\n";
  auto emit = [&](double t, const Vector& g) {
    for (Eigen::Index i = 0; i < g.size(); ++i)
      out += format_double(t) + "," + std::to_string(i) + "," + format_double(g(i)) + "\n";
  };
  for (std::size_t k = 0; k < sim.true_growth.size(); ++k) emit(static_cast<double>(k), sim.true_growth[k]);
  for (std::size_t k = 0; k < sim.ood_times.size(); ++k) emit(sim.ood_times[k], sim.ood_true_growth[k]);
  write_text_file(path, out);
}

void write_ood_points_csv(const GeneSimulation& sim, const std::filesystem::path& path) {
  const Eigen::Index d = sim.ood_points.empty() ? sim.data.dim() : sim.ood_points.front().cols();
  std::string out = "t,cell";
  for (Eigen::Index c = 0; c < d; ++c) out += ",x" + std::to_string(c + 1);
  out += "\n";
  for (std::size_t k = 0; k < sim.ood_times.size(); ++k) {
    const Matrix& p = sim.ood_points[k];
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      out += format_double(sim.ood_times[k]) + "," + std::to_string(i);
      for (Eigen::Index c = 0; c < d; ++c) out += "," + format_double(p(i, c));
      out += "\n";
    }
  }
  write_text_file(path, out);
}

OodTruth read_ood_truth(const std::filesystem::path& points_csv, const std::filesystem::path& truth_csv) {
  const NumericTable pts = read_numeric_csv(points_csv);
  const NumericTable truth = read_numeric_csv(truth_csv);
  const Eigen::Index tc = pts.column("t"), cc = pts.column("cell");
  const Eigen::Index d = static_cast<Eigen::Index>(pts.header.size()) - 2;
  if (d < 1 || tc != 0 || cc != 1) throw ParseError("unseen-time points header must be t,cell,x1,...,xd");
  const Eigen::Index ttc = truth.column("t"), tcc = truth.column("cell"), gc = truth.column("true_growth");

  OodTruth out;
  for (Eigen::Index r = 0; r < pts.rows.rows(); ++r) {
    const double t = pts.rows(r, 0);
    if (out.times.empty() || out.times.back() != t) {
      if (std::find(out.times.begin(), out.times.end(), t) != out.times.end())
        throw ParseError("unseen-time rows are not grouped by time", static_cast<std::size_t>(r) + 2);
      out.times.push_back(t);
      out.points.emplace_back(0, d);
    }
    Matrix& m = out.points.back();
    if (pts.rows(r, 1) != static_cast<double>(m.rows())) throw ParseError("cell indices must count up from 0", static_cast<std::size_t>(r) + 2);
    m.conservativeResize(m.rows() + 1, d);
    m.row(m.rows() - 1) = pts.rows.row(r).tail(d);
  }
  for (const Matrix& m : out.points) out.true_growth.push_back(Vector::Constant(m.rows(), std::nan("")));
  for (Eigen::Index r = 0; r < truth.rows.rows(); ++r) {
    const double t = truth.rows(r, ttc);
    const auto it = std::find(out.times.begin(), out.times.end(), t);
    if (it == out.times.end()) continue;  // an observed time
    Vector& g = out.true_growth[static_cast<std::size_t>(it - out.times.begin())];
    const auto cell = static_cast<Eigen::Index>(truth.rows(r, tcc));
    if (cell < 0 || cell >= g.size()) throw ParseError("truth row names an unknown cell", static_cast<std::size_t>(r) + 2);
    g(cell) = truth.rows(r, gc);
  }
  for (const Vector& g : out.true_growth)
    if (!g.allFinite()) throw ParseError("truth file misses some unseen-time cells");
  return out;
}

Mixture gen_gaussian_mixture(int d, std::uint64_t seed, const MixtureLayout& L) {
  if (d < 2) throw ValidationError("mixture dimension must be at least 2");
  Rng rng(seed);
  auto draw = [&](Matrix& m, IndexVector& lab, Eigen::Index& row, const std::array<double, 2>& mean, int count, int label) {
    for (int i = 0; i < count; ++i, ++row) {
      m(row, 0) = mean[0] + L.std * rng.normal();
      m(row, 1) = mean[1] + L.std * rng.normal();
      for (int c = 2; c < d; ++c) m(row, c) = L.tail_std > 0.0 ? L.tail_std * rng.normal() : 0.0;
      lab(row) = label;
    }
  };
  Mixture mix;
  Matrix x0(L.n_lower0 + L.n_upper0, d);
  IndexVector l0(x0.rows());
  Eigen::Index r = 0;
  draw(x0, l0, r, L.lower, L.n_lower0, 1);
  draw(x0, l0, r, L.upper, L.n_upper0, 0);
  Matrix x1(L.n_upper1 + L.n_lower_left1 + L.n_lower_right1, d);
  IndexVector l1(x1.rows());
  r = 0;
  draw(x1, l1, r, L.upper, L.n_upper1, 0);
  draw(x1, l1, r, L.lower_left, L.n_lower_left1, 1);
  draw(x1, l1, r, L.lower_right, L.n_lower_right1, 2);
  mix.data = Dataset({Snapshot(0, std::move(x0)), Snapshot(1, std::move(x1))});
  mix.labels = {std::move(l0), std::move(l1)};
  return mix;
}

Dataset gen_branching(const BranchingSpec& s, std::uint64_t seed) {
  if (s.dim < 2 || s.num_times < 2 || s.n0 < 1 || s.growth_rates.empty() || s.noise < 0.0)
    throw ValidationError("branching toy: invalid specification");
  Rng rng(seed);
  const auto K = static_cast<int>(s.growth_rates.size());
  std::vector<Snapshot> snaps;
  for (int t = 0; t < s.num_times; ++t) {
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(K));
    Eigen::Index total = 0;
    for (int k = 0; k < K; ++k) {
      counts[static_cast<std::size_t>(k)] = std::max<Eigen::Index>(
          1, std::lround(static_cast<double>(s.n0) / K * std::exp(s.growth_rates[static_cast<std::size_t>(k)] * t)));
      total += counts[static_cast<std::size_t>(k)];
    }
    Matrix pts(total, s.dim);
    Eigen::Index row = 0;
    for (int k = 0; k < K; ++k) {
      const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * k / K;
      const double ux = std::cos(angle), uy = std::sin(angle);
      const double along = s.speed * t, side = s.curvature * t * t;
      for (Eigen::Index i = 0; i < counts[static_cast<std::size_t>(k)]; ++i, ++row) {
        for (int c = 0; c < s.dim; ++c) pts(row, c) = s.noise * rng.normal();
        pts(row, 0) += along * ux - side * uy;
        pts(row, 1) += along * uy + side * ux;
      }
    }
    snaps.emplace_back(t, std::move(pts));
  }
  return Dataset(std::move(snaps));
}

BranchingSpec three_branch_spec() {
  BranchingSpec s;
  s.dim = 5;
  s.num_times = 5;
  s.n0 = 240;
  s.growth_rates = {0.35, 0.0, -0.25};
  s.speed = 1.0;
  s.curvature = 0.2;
  s.noise = 0.1;
  return s;
}

Dataset gen_linear_drift(int d, int num_times, int n, const Vector& velocity, double noise, std::uint64_t seed) {
  if (d < 1 || num_times < 2 || n < 1 || velocity.size() != d || noise < 0.0)
    throw ValidationError("linear drift toy: invalid specification");
  Rng rng(seed);
  std::vector<Snapshot> snaps;
  for (int t = 0; t < num_times; ++t) {
    // Fresh noise at each time: snapshots carry no identities.
    Matrix pts(n, d);
    for (Eigen::Index k = 0; k < pts.size(); ++k) pts.data()[k] = noise * rng.normal();
    pts.rowwise() += (t * velocity).transpose();
    snaps.emplace_back(t, std::move(pts));
  }
  return Dataset(std::move(snaps));
}

}  // namespace vgfm::datagen
