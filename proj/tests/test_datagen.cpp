#include "doctest.h"

#include "vgfm/datagen.hpp"

#include <filesystem>

using namespace vgfm;
using namespace vgfm::datagen;

TEST_CASE("division and growth rates") {
  const GeneSimParams p;
  CHECK(division_probability(1.0, p) == doctest::Approx(0.005));
  CHECK(division_probability(3.0, p) == doctest::Approx(0.009));
  CHECK(division_probability(0.0, p) == 0.0);
  CHECK(division_probability(1e8, p) == doctest::Approx(0.01));
  Vector x(3);
  x << 0.3, 1.0, 0.0;
  CHECK(true_growth_rate(x, p) == doctest::Approx(0.04));
  CHECK(p.steps_per_gap() == 8);
}

TEST_CASE("gene simulation with default parameters") {
  const GeneSimParams p;
  const GeneSimulation sim = gen_simulation_gene(p, 300, 1);
  REQUIRE(sim.data.num_times() == 5);
  CHECK(sim.data.dim() == 2);
  CHECK(sim.data.at(0).size() == 600);
  for (std::size_t t = 1; t < 5; ++t) CHECK(sim.data.at(t).size() >= sim.data.at(t - 1).size());
  CHECK(sim.data.at(4).size() > sim.data.at(0).size());
  for (const Snapshot& s : sim.data.snapshots()) CHECK((s.points.array() >= 0.0).all());

  // Growth happens in the active cluster; the quiescent one barely divides.
  const IndexVector& last = sim.lineage.back();
  const auto active = (last.array() == 0).count();
  const auto quiescent = (last.array() == 1).count();
  CHECK(active > 300);
  CHECK(sim.divisions[1] < 3);
  CHECK(quiescent == 300 + sim.divisions[1]);

  REQUIRE(sim.ood_times.size() == 4);
  CHECK(sim.ood_times[0] == 0.5);
  CHECK(sim.ood_times[3] == 3.5);
  for (std::size_t k = 0; k < 4; ++k) CHECK(sim.ood_points[k].rows() == sim.ood_true_growth[k].size());

  // Seed determinism.
  const GeneSimulation again = gen_simulation_gene(p, 300, 1);
  CHECK(again.data.at(4).points == sim.data.at(4).points);
  CHECK(gen_simulation_gene(p, 300, 2).data.at(4).points.rows() > 0);
}

TEST_CASE("no self-activation of X2 means no divisions") {
  GeneSimParams p;
  p.alpha[1] = 0.0;
  const GeneSimulation sim = gen_simulation_gene(p, 50, 3);
  for (const Snapshot& s : sim.data.snapshots()) CHECK(s.size() == 100);
  GeneSimParams bad;
  bad.observation_steps = {0, 8, 17};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("truth sidecars round trip") {
  const GeneSimulation sim = gen_simulation_gene(GeneSimParams{}, 20, 4);
  const auto dir = std::filesystem::temp_directory_path() / "vgfm_datagen_test";
  std::filesystem::create_directories(dir);
  write_gene_truth_csv(sim, dir / "truth.csv");
  write_ood_points_csv(sim, dir / "ood.csv");
  const OodTruth back = read_ood_truth(dir / "ood.csv", dir / "truth.csv");
  std::filesystem::remove_all(dir);
  REQUIRE(back.times == sim.ood_times);
  for (std::size_t k = 0; k < back.times.size(); ++k) {
    CHECK(back.points[k] == sim.ood_points[k]);
    CHECK(back.true_growth[k] == sim.ood_true_growth[k]);
  }
}

TEST_CASE("gaussian mixture counts and labels") {
  const Mixture mix = gen_gaussian_mixture(100, 5);
  REQUIRE(mix.data.num_times() == 2);
  CHECK(mix.data.at(0).size() == 500);
  CHECK(mix.data.at(1).size() == 1400);
  CHECK(mix.data.dim() == 100);
  CHECK(static_cast<double>(mix.data.at(1).size()) / mix.data.at(0).size() == doctest::Approx(2.8));
  CHECK((mix.labels[0].array() == 0).count() == 100);
  CHECK((mix.labels[1].array() == 0).count() == 1000);
  CHECK((mix.labels[1].array() == 2).count() == 200);

  // Nearest-mean label recovery.
  const MixtureLayout L;
  auto recover = [](const Matrix& x, const IndexVector& lab, const std::vector<std::array<double, 2>>& means) {
    int ok = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < means.size(); ++k) {
        const double d = std::hypot(x(i, 0) - means[k][0], x(i, 1) - means[k][1]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(k);
        }
      }
      ok += best == lab(i);
    }
    return static_cast<double>(ok) / x.rows();
  };
  CHECK(recover(mix.data.at(0).points, mix.labels[0], {L.upper, L.lower}) > 0.99);
  CHECK(recover(mix.data.at(1).points, mix.labels[1], {L.upper, L.lower_left, L.lower_right}) > 0.99);
  CHECK_THROWS_AS(gen_gaussian_mixture(1, 0), ValidationError);
}

TEST_CASE("branching and drift toys") {
  const Dataset three = gen_branching(three_branch_spec(), 6);
  CHECK(three.num_times() == 5);
  CHECK(three.dim() == 5);
  CHECK(three.at(0).size() == 240);
  CHECK(three.at(4).size() == std::lround(80 * std::exp(0.35 * 4)) + 80 + std::lround(80 * std::exp(-0.25 * 4)));

  BranchingSpec two;
  two.growth_rates = {std::log(2.0), 0.0};
  two.n0 = 100;
  const Dataset d2 = gen_branching(two, 7);
  CHECK(d2.at(1).size() == 150);

  Vector vel(2);
  vel << 1.0, -0.5;
  const Dataset drift = gen_linear_drift(2, 3, 200, vel, 0.1, 8);
  const Vector shift = drift.at(2).points.colwise().mean() - drift.at(0).points.colwise().mean();
  CHECK((shift - 2.0 * vel).norm() < 0.05);
}
