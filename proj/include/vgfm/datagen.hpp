#pragma once

#include "vgfm/core_data.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace vgfm::datagen {

// -----------------------------------------------------------------------------
// Three-gene toggle switch with stochastic division
// -----------------------------------------------------------------------------

struct GeneSimParams {
  std::array<double, 3> alpha{0.5, 1.0, 1.0};
  std::array<double, 3> gamma{0.5, 1.0, 10.0};
  std::array<double, 3> delta{0.4, 0.4, 0.4};
  std::array<double, 3> eta{0.05, 0.05, 0.05};
  double eta_division = 0.014;
  double beta = 1.0;
  double dt = 1.0;
  /// Simulation steps at which snapshots are recorded; the k-th becomes
  /// time index k.
  std::vector<int> observation_steps{0, 8, 16, 24, 32};
  /// Extra steps recorded for out-of-distribution checks (not in the dataset).
  std::vector<int> ood_steps{4, 12, 20, 28};
  std::array<double, 3> init_mean_a{2.0, 0.2, 0.0};
  std::array<double, 3> init_mean_b{0.0, 0.0, 2.0};
  /// Standard deviation of the initial clusters (variance 0.01).
  double init_std = 0.1;
  /// Leading genes written to the dataset (2 keeps X1, X2).
  int observed_genes = 2;

  /// Throws ValidationError.
  void validate() const;
  /// Simulation steps between consecutive observations (uniform spacing).
  int steps_per_gap() const;
};

/// Division probability per step: alpha_2 X2^2 / (1 + X2^2) percent.
double division_probability(double x2, const GeneSimParams& p);

/// Per-unit-time growth rate matching the dataset clock: the per-step
/// probability times the steps per observation gap.
double true_growth_rate(const Vector& x, const GeneSimParams& p);

struct GeneSimulation {
  Dataset data;
  /// Per snapshot: true growth rate of every recorded cell.
  std::vector<Vector> true_growth;
  /// Per snapshot: initial cluster (0 = active, 1 = quiescent) of each cell.
  std::vector<IndexVector> lineage;
  /// Unseen times on the dataset clock (step / steps_per_gap).
  std::vector<double> ood_times;
  std::vector<Matrix> ood_points;
  std::vector<Vector> ood_true_growth;
  /// Division events per initial cluster over the whole run.
  std::array<int, 2> divisions{0, 0};
};

GeneSimulation gen_simulation_gene(const GeneSimParams& params, int n_init_per_cluster, std::uint64_t seed);

/// Sidecar `t,cell,true_growth` covering observed and unseen times; `cell`
/// indexes rows of the snapshot (or of the unseen-time points file).
void write_gene_truth_csv(const GeneSimulation& sim, const std::filesystem::path& path);
/// Unseen-time positions as `t,cell,x1,...,xd`.
void write_ood_points_csv(const GeneSimulation& sim, const std::filesystem::path& path);

/// Both sidecars parsed back: unseen times with their points and rates.
struct OodTruth {
  std::vector<double> times;
  std::vector<Matrix> points;
  std::vector<Vector> true_growth;
};
OodTruth read_ood_truth(const std::filesystem::path& points_csv, const std::filesystem::path& truth_csv);

// -----------------------------------------------------------------------------
// Unbalanced Gaussian mixture
// -----------------------------------------------------------------------------

struct MixtureLayout {
  /// Means in the first two coordinates.
  std::array<double, 2> upper{0.0, 4.0};
  std::array<double, 2> lower{0.0, -2.0};
  std::array<double, 2> lower_left{-4.0, -2.0};
  std::array<double, 2> lower_right{4.0, -2.0};
  double std = 1.0;
  /// Standard deviation of coordinates 3..d (0 keeps them at zero).
  double tail_std = 0.0;
  int n_upper0 = 100;
  int n_lower0 = 400;
  int n_upper1 = 1000;
  int n_lower_left1 = 200;
  int n_lower_right1 = 200;
};

struct Mixture {
  Dataset data;
  /// Generating component per row: 0 upper, 1 lower (time 0) or
  /// 1 lower-left, 2 lower-right (time 1).
  std::vector<IndexVector> labels;
};

/// Time 0: lower (400) and upper (100). Time 1: upper (1000), lower-left and
/// lower-right (200 each). The upper component grows in place.
Mixture gen_gaussian_mixture(int d, std::uint64_t seed, const MixtureLayout& layout = {});

// -----------------------------------------------------------------------------
// Branching toys
// -----------------------------------------------------------------------------

struct BranchingSpec {
  int dim = 2;
  int num_times = 4;
  int n0 = 300;
  /// Log-growth rate per unit time of each branch; the size sets the
  /// number of branches (their directions are spread evenly in the plane).
  std::vector<double> growth_rates{0.4, -0.2};
  double speed = 1.0;
  /// Sideways drift proportional to t^2, bending each branch.
  double curvature = 0.25;
  double noise = 0.1;
};

/// Cells start near the origin and follow curved arms; branch k holds
/// round(n0 / K * exp(r_k t)) cells at time t.
Dataset gen_branching(const BranchingSpec& spec, std::uint64_t seed);

/// Three arms in 5 dimensions with unequal growth.
BranchingSpec three_branch_spec();

/// Points translated by `velocity` per time unit, no growth.
Dataset gen_linear_drift(int d, int num_times, int n, const Vector& velocity, double noise, std::uint64_t seed);

}  // namespace vgfm::datagen
