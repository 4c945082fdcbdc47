#include "vgfm/trainer.hpp"

#include "vgfm/matching.hpp"
#include "vgfm/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace vgfm::train {

using json = nlohmann::json;

// -----------------------------------------------------------------------------
// Configuration
// -----------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string("config: ") + name + " must be positive");
  };
  positive(eps, "eps");
  positive(tau, "tau");
  positive(lr_warmup, "lr_warmup");
  positive(lr_joint, "lr_joint");
  positive(sinkhorn_tol, "sinkhorn_tol");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("config: sigma must be nonnegative");
  if (batch < 1) throw ValidationError("config: batch must be at least 1");
  if (warmup_iters < 0) throw ValidationError("config: warmup_iters must be nonnegative");
  if (joint_epochs < 0) throw ValidationError("config: joint_epochs must be nonnegative");
  if (steps_per_unit < 1) throw ValidationError("config: steps_per_unit must be at least 1");
  if (big_batches < 1) throw ValidationError("config: big_batches must be at least 1");
  if (width < 1) throw ValidationError("config: width must be at least 1");
  if (depth != 0 && depth < 2) throw ValidationError("config: depth must be 0 (automatic) or at least 2");
  if (sinkhorn_max_iter < 1) throw ValidationError("config: sinkhorn_max_iter must be at least 1");
  if (fit_variant.kind == fit::FitVariant::Kind::sinkhorn) positive(fit_variant.eps, "fit_variant epsilon");
}

std::string TrainConfig::to_json() const {
  json j;
  j["eps"] = eps;
  j["tau"] = tau;
  j["sigma"] = sigma;
  j["batch"] = batch;
  j["warmup_iters"] = warmup_iters;
  j["joint_epochs"] = joint_epochs;
  j["lr_warmup"] = lr_warmup;
  j["lr_joint"] = lr_joint;
  j["steps_per_unit"] = steps_per_unit;
  j["big_batches"] = big_batches;
  j["fit_variant"] = fit_variant.to_string();
  j["seed"] = seed;
  j["width"] = width;
  j["depth"] = depth;
  j["normalize_cost"] = normalize_cost;
  j["vgfm_in_joint"] = vgfm_in_joint;
  j["sinkhorn_max_iter"] = sinkhorn_max_iter;
  j["sinkhorn_tol"] = sinkhorn_tol;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text, const TrainConfig& base, std::vector<std::string>* missing) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config JSON must be an object");
  TrainConfig c = base;
  std::vector<std::string> absent;
  auto take = [&](const char* key, auto& field) {
    if (!j.contains(key)) {
      absent.emplace_back(key);
      return;
    }
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ValidationError(std::string("config: wrong type for '") + key + "'");
    }
  };
  take("eps", c.eps);
  take("tau", c.tau);
  take("sigma", c.sigma);
  take("batch", c.batch);
  take("warmup_iters", c.warmup_iters);
  take("joint_epochs", c.joint_epochs);
  take("lr_warmup", c.lr_warmup);
  take("lr_joint", c.lr_joint);
  take("steps_per_unit", c.steps_per_unit);
  take("big_batches", c.big_batches);
  std::string variant = c.fit_variant.to_string();
  take("fit_variant", variant);
  c.fit_variant = fit::FitVariant::parse(variant);
  take("seed", c.seed);
  take("width", c.width);
  take("depth", c.depth);
  take("normalize_cost", c.normalize_cost);
  take("vgfm_in_joint", c.vgfm_in_joint);
  take("sinkhorn_max_iter", c.sinkhorn_max_iter);
  take("sinkhorn_tol", c.sinkhorn_tol);
  static const std::vector<std::string> known{"eps", "tau", "sigma", "batch", "warmup_iters", "joint_epochs",
                                              "lr_warmup", "lr_joint", "steps_per_unit", "big_batches",
                                              "fit_variant", "seed", "width", "depth", "normalize_cost",
                                              "vgfm_in_joint", "sinkhorn_max_iter", "sinkhorn_tol"};
  for (const auto& item : j.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw ValidationError("config: unknown key '" + item.key() + "'");
  c.validate();
  if (missing) *missing = std::move(absent);
  return c;
}

TrainConfig TrainConfig::from_json(const std::string& text) { return from_json(text, TrainConfig{}); }

TrainConfig default_config(const std::string& kind) {
  TrainConfig c;
  if (kind == "gene") {
    c.eps = 0.003;
    c.tau = 10.0;
  } else if (kind == "gaussian") {
    c.eps = 0.03;
    c.tau = 5.0;
  } else if (kind == "mouse") {
    c.eps = 0.005;
    c.tau = 20.0;
    c.warmup_iters = 200;
    c.joint_epochs = 100;
  } else if (kind == "real") {
    c.eps = 0.01;
    c.tau = 5.0;
    c.normalize_cost = true;
    c.warmup_iters = 5000;
    c.big_batches = 5;
  } else if (kind == "toy") {
    c.eps = 0.01;
    c.tau = 10.0;
  } else {
    throw ValidationError("unknown dataset kind '" + kind + "' (expected gene, gaussian, mouse, real or toy)");
  }
  return c;
}

// -----------------------------------------------------------------------------
// Plans
// -----------------------------------------------------------------------------

TimedData TimedData::from(const Dataset& ds) {
  TimedData d;
  d.snapshots = ds.snapshots();
  for (std::size_t k = 0; k < ds.num_times(); ++k) d.times.push_back(static_cast<double>(k));
  return d;
}

namespace {

// Fixed salts keep the partition, initialization and batch streams apart.
constexpr std::uint64_t partition_salt = 0x9e3779b97f4a7c15ULL;

std::vector<std::vector<int>> partition(Eigen::Index n, int parts, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(parts));
  for (std::size_t i = 0; i < order.size(); ++i) out[i % static_cast<std::size_t>(parts)].push_back(order[i]);
  for (auto& p : out) std::sort(p.begin(), p.end());
  return out;
}

Snapshot subset(const Snapshot& s, const std::vector<int>& rows) {
  Matrix pts(static_cast<Eigen::Index>(rows.size()), s.dim());
  Vector w;
  if (!s.has_unit_weights()) w.resize(pts.rows());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    pts.row(static_cast<Eigen::Index>(k)) = s.points.row(rows[k]);
    if (w.size()) w(static_cast<Eigen::Index>(k)) = s.weights(rows[k]);
  }
  return Snapshot(s.time_index, std::move(pts), std::move(w));
}

void check_data(const TimedData& data) {
  if (data.snapshots.size() < 2) throw ValidationError("training needs at least two snapshots");
  if (data.times.size() != data.snapshots.size()) throw ValidationError("one time per snapshot required");
  for (std::size_t k = 0; k < data.snapshots.size(); ++k) {
    data.snapshots[k].validate();
    if (data.snapshots[k].dim() != data.snapshots.front().dim()) throw ValidationError("snapshot dimensions differ");
    if (k > 0 && !(data.times[k] > data.times[k - 1])) throw ValidationError("snapshot times must increase");
  }
}

}  // namespace

std::vector<IntervalPlans> precompute_plans(const TimedData& data, const TrainConfig& cfg) {
  cfg.validate();
  check_data(data);
  Rng rng(cfg.seed ^ partition_salt);
  std::vector<std::vector<std::vector<int>>> parts;
  for (const Snapshot& s : data.snapshots) {
    if (s.size() < cfg.big_batches) throw ValidationError("fewer points than big batches");
    parts.push_back(partition(s.size(), cfg.big_batches, rng));
  }
  const ot::SinkhornOptions opts{cfg.sinkhorn_max_iter, cfg.sinkhorn_tol};
  std::vector<IntervalPlans> out;
  for (std::size_t t = 0; t + 1 < data.snapshots.size(); ++t) {
    IntervalPlans ip;
    ip.t0 = data.times[t];
    ip.span = data.times[t + 1] - data.times[t];
    for (int k = 0; k < cfg.big_batches; ++k) {
      BigBatch b;
      b.source_rows = parts[t][static_cast<std::size_t>(k)];
      b.target_rows = parts[t + 1][static_cast<std::size_t>(k)];
      b.source = subset(data.snapshots[t], b.source_rows);
      b.target = subset(data.snapshots[t + 1], b.target_rows);
      try {
        b.plan = ot::semi_relaxed_sinkhorn(ot::squared_cost(b.source.points, b.target.points, cfg.normalize_cost),
                                           cfg.eps, cfg.tau, opts);
      } catch (const Error& e) {
        throw NumericalError("plan for interval " + std::to_string(t) + " failed: " + e.what());
      }
      ip.batches.push_back(std::move(b));
    }
    out.push_back(std::move(ip));
  }
  return out;
}

std::vector<IntervalPlans> precompute_plans(const Dataset& ds, const TrainConfig& cfg) {
  return precompute_plans(TimedData::from(ds), cfg);
}

// -----------------------------------------------------------------------------
// Reports
// -----------------------------------------------------------------------------

std::string TrainReport::format_csv() const {
  std::string out = "epoch,loss_vgfm,loss_ot,seconds\n";
  for (const auto& e : epochs)
    out += std::to_string(e.epoch) + "," + format_double(e.loss_vgfm) + "," + format_double(e.loss_ot) + "," +
           format_double(e.seconds) + "\n";
  return out;
}

std::string TrainReport::format_warmup_csv() const {
  std::string out = "iter,loss_vgfm,loss_velocity,loss_growth\n";
  for (const auto& w : warmup)
    out += std::to_string(w.iter) + "," + format_double(w.loss) + "," + format_double(w.velocity) + "," +
           format_double(w.growth) + "\n";
  return out;
}

// -----------------------------------------------------------------------------
// Training loop
// -----------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

void add_into(nets::NetworkParams& acc, const nets::NetworkParams& g) {
  for (std::size_t l = 0; l < acc.weights.size(); ++l) {
    acc.weights[l] += g.weights[l];
    acc.biases[l] += g.biases[l];
  }
}

struct State {
  nets::NetworkParams v;
  nets::NetworkParams g;
  nets::AdamState adam_v;
  nets::AdamState adam_g;
  std::int64_t step = 0;
  Rng rng;
};

nets::Checkpoint snapshot_state(const State& s, const TrainConfig& cfg, const std::string& phase) {
  nets::Checkpoint c;
  c.velocity = s.v;
  c.growth = s.g;
  c.adam_velocity = s.adam_v;
  c.adam_growth = s.adam_g;
  c.step = s.step;
  c.seed = cfg.seed;
  c.phase = phase;
  c.rng_state = s.rng.state();
  c.config_json = cfg.to_json();
  return c;
}

class Loop {
 public:
  Loop(const TimedData& data, const TrainConfig& cfg, const TrainOptions& opts) : data_(data), cfg_(cfg), opts_(opts) {}

  TrainResult run() {
    const auto t_start = Clock::now();
    cfg_.validate();
    check_data(data_);
    init_state();

    const auto t_plans = Clock::now();
    plans_ = precompute_plans(data_, cfg_);
    for (std::size_t t = 0; t < plans_.size(); ++t) {
      samplers_.emplace_back();
      for (const BigBatch& b : plans_[t].batches) {
        if (!b.plan.converged) report_.unconverged_plans.push_back(static_cast<int>(t));
        samplers_.back().emplace_back(b.plan);
      }
    }
    report_.plan_seconds = since(t_plans);

    const std::int64_t n_big = cfg_.big_batches;
    last_good_ = snapshot_state(state_, cfg_, phase_name());
    while (state_.step < cfg_.warmup_iters) warmup_iteration();
    if (state_.step == cfg_.warmup_iters && cfg_.warmup_iters > 0 && !resumed_past_warmup_) save("joint");

    state_.adam_v.lr = cfg_.lr_joint;
    state_.adam_g.lr = cfg_.lr_joint;
    const std::int64_t total = cfg_.warmup_iters + static_cast<std::int64_t>(cfg_.joint_epochs) * n_big;
    while (state_.step < total) joint_epoch();

    report_.total_seconds = since(t_start);
    TrainResult r;
    r.velocity = state_.v;
    r.growth = state_.g;
    r.report = std::move(report_);
    r.checkpoint = snapshot_state(state_, cfg_, "done");
    return r;
  }

 private:
  void init_state() {
    const int d = static_cast<int>(data_.snapshots.front().dim());
    const int depth = cfg_.depth == 0 ? nets::default_depth(d) : cfg_.depth;
    Rng master(cfg_.seed);
    const std::uint64_t v_seed = master.next();
    const std::uint64_t g_seed = master.next();
    state_.v = nets::init_network(d, d, depth, cfg_.width, v_seed);
    state_.g = nets::init_network(d, 1, depth, cfg_.width, g_seed);
    state_.adam_v = nets::make_adam(state_.v, cfg_.lr_warmup);
    state_.adam_g = nets::make_adam(state_.g, cfg_.lr_warmup);
    state_.rng = Rng(master.next());
    if (!opts_.resume) return;

    const nets::Checkpoint& c = *opts_.resume;
    if (!(c.velocity.arch == state_.v.arch) || !(c.growth.arch == state_.g.arch))
      throw ValidationError("resume: checkpoint architecture does not match the configuration");
    if (c.seed != cfg_.seed) throw ValidationError("resume: checkpoint seed differs from the configuration");
    state_.v = c.velocity;
    state_.g = c.growth;
    state_.adam_v = c.adam_velocity;
    state_.adam_g = c.adam_growth;
    state_.step = c.step;
    state_.rng.set_state(c.rng_state);
    resumed_past_warmup_ = c.step >= cfg_.warmup_iters;
  }

  std::string phase_name() const { return state_.step < cfg_.warmup_iters ? "warmup" : "joint"; }

  void save(const std::string& phase) {
    last_good_ = snapshot_state(state_, cfg_, phase);
    if (opts_.checkpoint_dir) {
      std::filesystem::create_directories(*opts_.checkpoint_dir);
      nets::save_checkpoint(last_good_, *opts_.checkpoint_dir / "last.ckpt");
    }
  }

  [[noreturn]] void diverged(const std::string& where) {
    std::string msg = "training diverged at step " + std::to_string(state_.step) + " (" + where + ")";
    if (opts_.checkpoint_dir) msg += "; last good state in " + (*opts_.checkpoint_dir / "last.ckpt").string();
    throw TrainingDiverged(msg, last_good_);
  }

  matching::MatchBatch draw(std::size_t t, std::size_t k) {
    const BigBatch& b = plans_[t].batches[k];
    return matching::draw_batch(b.source, b.target, b.plan, samplers_[t][k], cfg_.batch, cfg_.sigma,
                                {plans_[t].t0, plans_[t].span}, state_.rng);
  }

  void apply(nets::NetworkParams& gv, nets::NetworkParams& gg, double loss) {
    if (!std::isfinite(loss)) diverged("loss");
    if (!gv.all_finite() || !gg.all_finite()) diverged("gradient");
    nets::adam_step(state_.v, state_.adam_v, gv);
    nets::adam_step(state_.g, state_.adam_g, gg);
    ++state_.step;
    if (!state_.v.all_finite() || !state_.g.all_finite()) diverged("parameters");
  }

  void warmup_iteration() {
    nets::NetworkParams gv = state_.v.zeros_like(), gg = state_.g.zeros_like();
    WarmupRecord rec;
    rec.iter = static_cast<int>(state_.step);
    for (std::size_t t = 0; t < plans_.size(); ++t) {
      const std::size_t k = cfg_.big_batches > 1 ? state_.rng.below(static_cast<std::uint64_t>(cfg_.big_batches)) : 0;
      const matching::MatchBatch mb = draw(t, k);
      ad::Tape tape;
      const nets::TapedNet tv = nets::bind(tape, state_.v), tg = nets::bind(tape, state_.g);
      matching::LossParts parts;
      const ad::Var loss = matching::vgfm_loss(tape, tv, tg, mb, &parts);
      if (!std::isfinite(parts.total)) diverged("matching loss");
      tape.backward(loss);
      add_into(gv, nets::collect_grad(tape, tv));
      add_into(gg, nets::collect_grad(tape, tg));
      rec.loss += parts.total;
      rec.velocity += parts.velocity;
      rec.growth += parts.growth;
    }
    apply(gv, gg, rec.loss);
    report_.warmup.push_back(rec);
  }

  void joint_epoch() {
    const auto t_epoch = Clock::now();
    EpochRecord rec;
    rec.epoch = static_cast<int>((state_.step - cfg_.warmup_iters) / cfg_.big_batches) + 1;
    for (int k = 0; k < cfg_.big_batches; ++k) {
      nets::NetworkParams gv = state_.v.zeros_like(), gg = state_.g.zeros_like();
      double vgfm = 0.0, fit_total = 0.0;
      for (std::size_t t = 0; t < plans_.size(); ++t) {
        const BigBatch& b = plans_[t].batches[static_cast<std::size_t>(k)];
        ad::Tape tape;
        const nets::TapedNet tv = nets::bind(tape, state_.v), tg = nets::bind(tape, state_.g);
        ad::Var loss;
        if (cfg_.vgfm_in_joint) {
          const matching::MatchBatch mb = draw(t, static_cast<std::size_t>(k));
          matching::LossParts parts;
          loss = matching::vgfm_loss(tape, tv, tg, mb, &parts);
          vgfm += parts.total;
        }
        const ad::Var fit = fit::interval_fit_loss(tape, tv, tg, b.source.points, plans_[t].t0, plans_[t].span,
                                                   b.target, cfg_.steps_per_unit, cfg_.fit_variant);
        fit_total += tape.scalar(fit);
        loss = loss.valid() ? ad::add(tape, loss, fit) : fit;
        if (!std::isfinite(tape.scalar(loss))) diverged("fitting loss");
        tape.backward(loss);
        add_into(gv, nets::collect_grad(tape, tv));
        add_into(gg, nets::collect_grad(tape, tg));
      }
      apply(gv, gg, vgfm + fit_total);
      rec.loss_vgfm += vgfm / cfg_.big_batches;
      rec.loss_ot += fit_total / cfg_.big_batches;
    }
    rec.seconds = since(t_epoch);
    report_.epochs.push_back(rec);
    save("joint");
  }

  const TimedData& data_;
  TrainConfig cfg_;
  TrainOptions opts_;
  State state_;
  std::vector<IntervalPlans> plans_;
  std::vector<std::vector<ot::PairSampler>> samplers_;
  TrainReport report_;
  nets::Checkpoint last_good_;
  bool resumed_past_warmup_ = false;
};

}  // namespace

TrainResult train(const TimedData& data, const TrainConfig& cfg, const TrainOptions& opts) {
  return Loop(data, cfg, opts).run();
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opts) {
  return train(TimedData::from(ds), cfg, opts);
}

TrainResult holdout_train(const Dataset& ds, const TrainConfig& cfg, int held_time, const TrainOptions& opts) {
  if (held_time <= 0 || held_time + 1 >= static_cast<int>(ds.num_times()))
    throw ValidationError("held time must be an interior snapshot (0 < t < T-1)");
  TimedData d;
  for (std::size_t k = 0; k < ds.num_times(); ++k) {
    if (static_cast<int>(k) == held_time) continue;
    d.snapshots.push_back(ds.at(k));
    d.times.push_back(static_cast<double>(k));
  }
  return train(d, cfg, opts);
}

}  // namespace vgfm::train
