#pragma once

#include "vgfm/core_data.hpp"
#include "vgfm/fit_loss.hpp"
#include "vgfm/nets.hpp"
#include "vgfm/ot.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vgfm::train {

struct TrainConfig {
  double eps = 0.003;
  double tau = 10.0;
  double sigma = 0.05;
  int batch = 256;
  int warmup_iters = 500;
  int joint_epochs = 30;
  double lr_warmup = 1e-3;
  double lr_joint = 1e-4;
  int steps_per_unit = 20;
  int big_batches = 1;
  fit::FitVariant fit_variant;
  std::uint64_t seed = 0;

  /// Hidden width; depth 0 picks 3 or 5 from the dimension.
  int width = 256;
  int depth = 0;
  /// Divide the squared cost by its largest entry before solving.
  bool normalize_cost = false;
  /// Keep the matching loss in the joint phase (false trains on the fitting
  /// loss alone).
  bool vgfm_in_joint = true;
  int sinkhorn_max_iter = 5000;
  double sinkhorn_tol = 1e-9;

  /// Throws ValidationError naming the offending field.
  void validate() const;

  std::string to_json() const;
  /// Keys absent from `text` keep the values of `base`; each one is listed in
  /// `missing`. Unknown keys and wrong types throw ValidationError.
  static TrainConfig from_json(const std::string& text, const TrainConfig& base,
                               std::vector<std::string>* missing = nullptr);
  static TrainConfig from_json(const std::string& text);
};

/// Shipped defaults: "gene", "gaussian", "mouse", "real", "toy".
TrainConfig default_config(const std::string& dataset_kind);

// -----------------------------------------------------------------------------
// Plans
// -----------------------------------------------------------------------------

/// One subset pair of an interval with its semi-relaxed plan.
struct BigBatch {
  Snapshot source;
  Snapshot target;
  /// Rows of the full snapshots that make up `source` and `target`.
  std::vector<int> source_rows;
  std::vector<int> target_rows;
  TransportPlan plan;
};

struct IntervalPlans {
  double t0 = 0.0;
  double span = 1.0;
  std::vector<BigBatch> batches;
};

/// Snapshots with their positions on the time axis (hold-out training leaves
/// a two-unit gap).
struct TimedData {
  std::vector<Snapshot> snapshots;
  std::vector<double> times;

  static TimedData from(const Dataset& ds);
};

/// One plan per consecutive pair and big batch. Each snapshot is shuffled
/// once (seeded) and cut into `big_batches` near-equal parts; part k of
/// X_t is paired with part k of X_{t+1}. Throws NumericalError naming the
/// interval when a solve fails.
std::vector<IntervalPlans> precompute_plans(const TimedData& data, const TrainConfig& cfg);
std::vector<IntervalPlans> precompute_plans(const Dataset& ds, const TrainConfig& cfg);

// -----------------------------------------------------------------------------
// Training
// -----------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double loss_vgfm = 0.0;
  double loss_ot = 0.0;
  double seconds = 0.0;
};

struct WarmupRecord {
  int iter = 0;
  double loss = 0.0;
  double velocity = 0.0;
  double growth = 0.0;
};

struct TrainReport {
  std::vector<WarmupRecord> warmup;
  std::vector<EpochRecord> epochs;
  /// Intervals whose plan solve stopped at the iteration cap.
  std::vector<int> unconverged_plans;
  double plan_seconds = 0.0;
  double total_seconds = 0.0;

  /// `epoch,loss_vgfm,loss_ot,seconds`
  std::string format_csv() const;
  /// `iter,loss_vgfm,loss_velocity,loss_growth`
  std::string format_warmup_csv() const;
};

struct TrainResult {
  nets::NetworkParams velocity;
  nets::NetworkParams growth;
  TrainReport report;
  nets::Checkpoint checkpoint;
};

struct TrainOptions {
  /// When set, `last.ckpt` is rewritten after warm-up and after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Continue from a checkpoint written by an earlier run with the same data
  /// and configuration.
  const nets::Checkpoint* resume = nullptr;
};

/// Raised when a loss or parameter stops being finite. Carries the last
/// finite state (also written to the checkpoint directory, if any).
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, nets::Checkpoint last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const nets::Checkpoint& last_good() const { return last_good_; }

 private:
  nets::Checkpoint last_good_;
};

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opts);
TrainResult train(const TimedData& data, const TrainConfig& cfg, const TrainOptions& opts);
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) { return train(ds, cfg, TrainOptions{}); }
inline TrainResult train(const TimedData& data, const TrainConfig& cfg) { return train(data, cfg, TrainOptions{}); }

/// Trains without snapshot `held_time`; the neighbouring interval spans two
/// time units. Throws ValidationError when the held time is not interior.
TrainResult holdout_train(const Dataset& ds, const TrainConfig& cfg, int held_time, const TrainOptions& opts);
inline TrainResult holdout_train(const Dataset& ds, const TrainConfig& cfg, int held_time) {
  return holdout_train(ds, cfg, held_time, TrainOptions{});
}

}  // namespace vgfm::train
