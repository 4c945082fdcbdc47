#include "vgfm/core_data.hpp"
#include "vgfm/datagen.hpp"
#include "vgfm/eval.hpp"
#include "vgfm/nets.hpp"
#include "vgfm/ot.hpp"
#include "vgfm/simulate.hpp"
#include "vgfm/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace vgfm;

namespace {

// Every failure leaves through here: one line on stderr, nonzero status.
[[noreturn]] void fail(const std::string& reason, int code = 1) {
  std::string line = reason;
  for (char& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error: " << line << "\n";
  std::exit(code);
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ValidationError("bad grid value '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// -----------------------------------------------------------------------------
// gen
// -----------------------------------------------------------------------------

struct GenArgs {
  std::string kind;
  fs::path out;
  std::uint64_t seed = 0;
  int dim = 0;
  int n = 0;
};

void cmd_gen(const GenArgs& a) {
  ensure_parent(a.out);
  if (a.kind == "gene") {
    const datagen::GeneSimParams params;
    const auto sim = datagen::gen_simulation_gene(params, a.n > 0 ? a.n : 300, a.seed);
    write_dataset_csv(sim.data, a.out);
    datagen::write_gene_truth_csv(sim, sibling(a.out, "_truth.csv"));
    datagen::write_ood_points_csv(sim, sibling(a.out, "_ood.csv"));
    std::printf("wrote %s (%zu times, %lld cells at the last one), truth and unseen-time sidecars\n",
                a.out.string().c_str(), sim.data.num_times(),
                static_cast<long long>(sim.data.snapshots().back().size()));
  } else if (a.kind == "gaussian") {
    const auto mix = datagen::gen_gaussian_mixture(a.dim > 0 ? a.dim : 2, a.seed);
    write_dataset_csv(mix.data, a.out);
    std::printf("wrote %s (%lld -> %lld points in %lld dimensions)\n", a.out.string().c_str(),
                static_cast<long long>(mix.data.at(0).size()), static_cast<long long>(mix.data.at(1).size()),
                static_cast<long long>(mix.data.dim()));
  } else if (a.kind == "two-branch" || a.kind == "three-branch") {
    datagen::BranchingSpec spec = a.kind == "two-branch" ? datagen::BranchingSpec{} : datagen::three_branch_spec();
    if (a.dim > 0) spec.dim = a.dim;
    if (a.n > 0) spec.n0 = a.n;
    const Dataset ds = datagen::gen_branching(spec, a.seed);
    write_dataset_csv(ds, a.out);
    std::printf("wrote %s (%zu times)\n", a.out.string().c_str(), ds.num_times());
  } else {
    fail("usage: unknown kind '" + a.kind + "' (expected gene, gaussian, two-branch or three-branch)", 2);
  }
}

// -----------------------------------------------------------------------------
// tune
// -----------------------------------------------------------------------------

struct TuneArgs {
  fs::path data;
  fs::path out;
  double eps = 0.003;
  std::string grid = "1,2,3,4,5,6,8,10,12,15,20";
  int interval = 0;
  bool normalize = false;
};

void cmd_tune(const TuneArgs& a) {
  const Dataset ds = parse_snapshot_csv(a.data);
  if (a.interval < 0 || a.interval + 1 >= static_cast<int>(ds.num_times()))
    fail("usage: interval " + std::to_string(a.interval) + " out of range", 2);
  const std::vector<double> grid = parse_grid(a.grid);
  if (grid.empty()) fail("usage: empty tau grid", 2);
  const auto curve = ot::elbow_scan_tau(ds.at(static_cast<std::size_t>(a.interval)),
                                        ds.at(static_cast<std::size_t>(a.interval) + 1), a.eps, grid, a.normalize);
  const std::string csv = ot::format_elbow_csv(curve);
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    ensure_parent(a.out);
    write_text_file(a.out, csv);
    std::printf("wrote %s (%zu rows)\n", a.out.string().c_str(), curve.size());
  }
}

// -----------------------------------------------------------------------------
// train
// -----------------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path out = "run";
  std::string preset = "gene";
  std::optional<fs::path> config;
  std::optional<fs::path> resume;
  std::optional<std::uint64_t> seed;
  std::optional<double> eps, tau, sigma;
  std::optional<int> holdout, steps_per_unit, warmup_iters, joint_epochs, big_batches;
  std::optional<std::string> fit_variant;
};

train::TrainConfig build_config(const TrainArgs& a) {
  train::TrainConfig cfg = train::default_config(a.preset);
  if (a.config) {
    std::vector<std::string> missing;
    cfg = train::TrainConfig::from_json(read_text_file(*a.config), cfg, &missing);
    for (const auto& key : missing)
      std::cerr << "warning: config has no '" << key << "', using the " << a.preset << " default\n";
  }
  // Command-line flags take precedence over the file.
  if (a.seed) cfg.seed = *a.seed;
  if (a.eps) cfg.eps = *a.eps;
  if (a.tau) cfg.tau = *a.tau;
  if (a.sigma) cfg.sigma = *a.sigma;
  if (a.steps_per_unit) cfg.steps_per_unit = *a.steps_per_unit;
  if (a.warmup_iters) cfg.warmup_iters = *a.warmup_iters;
  if (a.joint_epochs) cfg.joint_epochs = *a.joint_epochs;
  if (a.big_batches) cfg.big_batches = *a.big_batches;
  if (a.fit_variant) cfg.fit_variant = fit::FitVariant::parse(*a.fit_variant);
  cfg.validate();
  return cfg;
}

void cmd_train(const TrainArgs& a) {
  const Dataset ds = parse_snapshot_csv(a.data);
  const train::TrainConfig cfg = build_config(a);
  fs::create_directories(a.out);
  write_text_file(a.out / "config.json", cfg.to_json() + "\n");

  train::TrainOptions opts;
  opts.checkpoint_dir = a.out;
  std::optional<nets::Checkpoint> resume;
  if (a.resume) {
    resume = nets::load_checkpoint(*a.resume);
    opts.resume = &*resume;
  }
  train::TrainResult r;
  try {
    r = a.holdout ? train::holdout_train(ds, cfg, *a.holdout, opts) : train::train(ds, cfg, opts);
  } catch (const train::TrainingDiverged& e) {
    nets::save_checkpoint(e.last_good(), a.out / "last_good.ckpt");
    throw;
  }
  nets::save_checkpoint(r.checkpoint, a.out / "model.ckpt");
  write_text_file(a.out / "train_log.csv", r.report.format_csv());
  write_text_file(a.out / "warmup_log.csv", r.report.format_warmup_csv());
  for (int t : r.report.unconverged_plans)
    std::cerr << "warning: plan for interval " << t << " hit the iteration cap\n";
  std::printf("trained %lld steps in %.1f s (plans %.1f s); model in %s\n",
              static_cast<long long>(r.checkpoint.step), r.report.total_seconds, r.report.plan_seconds,
              (a.out / "model.ckpt").string().c_str());
}

// -----------------------------------------------------------------------------
// eval / simulate
// -----------------------------------------------------------------------------

int model_steps(const nets::Checkpoint& ck, std::optional<int> flag) {
  if (flag) return *flag;
  return train::TrainConfig::from_json(ck.config_json, train::TrainConfig{}).steps_per_unit;
}

struct EvalArgs {
  fs::path model;
  fs::path data;
  fs::path out = "eval";
  std::optional<int> holdout;
  std::optional<int> steps_per_unit;
  std::optional<fs::path> truth;
  std::optional<fs::path> ood;
};

void cmd_eval(const EvalArgs& a) {
  const nets::Checkpoint ck = nets::load_checkpoint(a.model);
  const Dataset ds = parse_snapshot_csv(a.data);
  const int spu = model_steps(ck, a.steps_per_unit);
  fs::create_directories(a.out);

  const auto rows = eval::evaluate(ck.velocity, ck.growth, ds, spu);
  write_text_file(a.out / "metrics.csv", eval::format_metric_csv(rows));
  write_text_file(a.out / "metrics_unweighted.csv", eval::format_unweighted_csv(rows));
  write_text_file(a.out / "mass.csv", eval::format_mass_csv(eval::mass_curve(ck.velocity, ck.growth, ds, spu)));
  std::printf("mean w1 %s, mean rme %s over %zu times\n", format_double(eval::mean_w1(rows)).c_str(),
              format_double(eval::mean_rme(rows)).c_str(), rows.size());

  if (a.holdout) {
    const auto m = eval::holdout_metric(ck.velocity, ck.growth, ds, *a.holdout, spu);
    const double baseline = eval::copy_previous_w1(ds, *a.holdout);
    write_text_file(a.out / "holdout.csv", "held,w1,w1_unweighted,rme,copy_previous_w1\n" +
                                               std::to_string(*a.holdout) + "," + format_double(m.w1) + "," +
                                               format_double(m.w1_unweighted) + "," + format_double(m.rme) + "," +
                                               format_double(baseline) + "\n");
    std::printf("hold-out t=%d: w1 %s (previous snapshot %s)\n", *a.holdout, format_double(m.w1).c_str(),
                format_double(baseline).c_str());
  }
  if (a.truth || a.ood) {
    if (!a.truth || !a.ood) fail("usage: --truth and --ood go together", 2);
    const auto truth = datagen::read_ood_truth(*a.ood, *a.truth);
    const auto r = eval::growth_correlation(ck.growth, truth.times, truth.points, truth.true_growth);
    std::string csv = "t,pearson_r\n";
    for (std::size_t k = 0; k < r.size(); ++k) csv += format_double(truth.times[k]) + "," + format_double(r[k]) + "\n";
    write_text_file(a.out / "growth_correlation.csv", csv);
    std::printf("growth correlation at %zu unseen times written\n", r.size());
  }
}

struct SimArgs {
  fs::path model;
  fs::path data;
  fs::path out = "trajectory.csv";
  int start = 0;
  std::optional<double> t_end;
  std::optional<int> steps_per_unit;
};

void cmd_simulate(const SimArgs& a) {
  const nets::Checkpoint ck = nets::load_checkpoint(a.model);
  const Dataset ds = parse_snapshot_csv(a.data);
  if (a.start < 0 || a.start >= static_cast<int>(ds.num_times()))
    fail("usage: start snapshot " + std::to_string(a.start) + " out of range", 2);
  const double t0 = a.start;
  const double t1 = a.t_end ? *a.t_end : static_cast<double>(ds.num_times() - 1);
  if (!(t1 > t0)) fail("usage: --t-end must exceed the start time", 2);
  const auto traj = simulate::integrate(ck.velocity, ck.growth, ds.at(static_cast<std::size_t>(a.start)).points,
                                        t0, t1, model_steps(ck, a.steps_per_unit));
  ensure_parent(a.out);
  write_trajectory_csv(traj, a.out);
  std::printf("wrote %s (%lld particles x %zu times)\n", a.out.string().c_str(),
              static_cast<long long>(traj.num_particles()), traj.num_times());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint velocity-growth flow matching"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("kind", gen.kind, "gene | gaussian | two-branch | three-branch")->required();
  g->add_option("--out", gen.out, "Output CSV")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--dim", gen.dim, "Dimension (gaussian, branching)");
  g->add_option("--n", gen.n, "Initial cells per cluster (gene) or in total (branching)");

  TuneArgs tune;
  auto* t = app.add_subcommand("tune", "Scan tau and write the transport cost curve");
  t->add_option("--data", tune.data, "Snapshot CSV")->required();
  t->add_option("--eps", tune.eps, "Entropic regularization");
  t->add_option("--tau", tune.grid, "Comma-separated tau grid");
  t->add_option("--interval", tune.interval, "Use snapshots k and k+1");
  t->add_flag("--normalize-cost", tune.normalize, "Divide the cost by its maximum");
  t->add_option("--out", tune.out, "Output CSV (stdout when absent)");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "Train velocity and growth networks");
  r->add_option("--data", tr.data, "Snapshot CSV")->required();
  r->add_option("--out", tr.out, "Output directory");
  r->add_option("--preset", tr.preset, "Defaults: gene | gaussian | mouse | real | toy");
  r->add_option("--config", tr.config, "JSON configuration");
  r->add_option("--resume", tr.resume, "Continue from a checkpoint");
  r->add_option("--seed", tr.seed);
  r->add_option("--eps", tr.eps);
  r->add_option("--tau", tr.tau);
  r->add_option("--sigma", tr.sigma);
  r->add_option("--holdout", tr.holdout, "Leave this snapshot out");
  r->add_option("--fit-variant", tr.fit_variant, "emd | sinkhorn | sinkhorn:<eps>");
  r->add_option("--steps-per-unit", tr.steps_per_unit);
  r->add_option("--warmup-iters", tr.warmup_iters);
  r->add_option("--epochs", tr.joint_epochs);
  r->add_option("--big-batches", tr.big_batches);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a trained model");
  e->add_option("--model", ev.model, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Snapshot CSV")->required();
  e->add_option("--out", ev.out, "Output directory");
  e->add_option("--holdout", ev.holdout, "Score the held-out snapshot");
  e->add_option("--steps-per-unit", ev.steps_per_unit);
  e->add_option("--truth", ev.truth, "Growth truth sidecar");
  e->add_option("--ood", ev.ood, "Unseen-time points sidecar");

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "Export simulated trajectories");
  s->add_option("--model", sim.model, "Checkpoint")->required();
  s->add_option("--data", sim.data, "Snapshot CSV")->required();
  s->add_option("--out", sim.out, "Trajectory CSV");
  s->add_option("--start", sim.start, "Starting snapshot");
  s->add_option("--t-end", sim.t_end, "Final time");
  s->add_option("--steps-per-unit", sim.steps_per_unit);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    fail(std::string("usage: ") + err.what(), 2);
  }

  try {
    if (*g) cmd_gen(gen);
    if (*t) cmd_tune(tune);
    if (*r) cmd_train(tr);
    if (*e) cmd_eval(ev);
    if (*s) cmd_simulate(sim);
  } catch (const std::exception& ex) {
    fail(ex.what());
  }
  return 0;
}
