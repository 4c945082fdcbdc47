#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vgfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexVector = Eigen::VectorXi;

// -----------------------------------------------------------------------------
// Errors
// -----------------------------------------------------------------------------

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV, JSON, checkpoint bytes).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Structurally well-formed data that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine left the finite range or failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// -----------------------------------------------------------------------------
// Domain types
// -----------------------------------------------------------------------------

/// A time-indexed point cloud. Rows of `points` are observations.
struct Snapshot {
  int time_index = 0;
  Matrix points;   // N_t x d
  Vector weights;  // N_t, all > 0; empty means "all ones"

  Snapshot() = default;
  Snapshot(int t, Matrix pts, Vector w = Vector());

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  bool has_unit_weights() const;
  /// Weights with the implicit default materialized.
  Vector weight_vector() const;

  /// Throws ValidationError when an invariant does not hold.
  void validate() const;
};

/// Ordered snapshots with time indices 0..T-1.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Snapshot> snapshots);

  std::size_t num_times() const { return snapshots_.size(); }
  Eigen::Index dim() const;
  const Snapshot& at(std::size_t t) const { return snapshots_.at(t); }
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  std::size_t total_points() const;

  void validate() const;

 private:
  std::vector<Snapshot> snapshots_;
};

/// Nonnegative coupling matrix and its marginals.
struct TransportPlan {
  Matrix matrix;        // n x m
  Vector row_marginal;  // n
  Vector col_marginal;  // m
  double epsilon = 0.0;
  double tau = 0.0;
  int iterations = 0;
  bool converged = true;

  TransportPlan() = default;
  TransportPlan(Matrix pi, double eps, double tau_);

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
  /// Recompute the stored marginals from `matrix`.
  void refresh_marginals();
  /// Entries finite and nonnegative, marginals consistent within 1e-9.
  void validate() const;
};

/// Simulated particles on a time grid.
struct TrajectoryBundle {
  std::vector<double> times;       // K grid times
  std::vector<Matrix> positions;   // K entries of N x d
  Matrix log_weights;              // N x K

  Eigen::Index num_particles() const { return log_weights.rows(); }
  std::size_t num_times() const { return times.size(); }
  Vector weights_at(std::size_t k) const { return log_weights.col(static_cast<Eigen::Index>(k)).array().exp(); }
  void validate() const;
};

// -----------------------------------------------------------------------------
// CSV I/O
// -----------------------------------------------------------------------------

/// Parse `t,x1,...,xd[,w]` rows into a validated Dataset.
Dataset parse_snapshot_csv(const std::filesystem::path& path);
Dataset parse_snapshot_csv_text(const std::string& text);

/// Write a Dataset with 17 significant digits; adds the `w` column only when
/// some weight differs from 1.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
std::string format_dataset_csv(const Dataset& ds);

/// Export as `particle,t,x1,...,xd,logw`, one row per particle and grid time.
void write_trajectory_csv(const TrajectoryBundle& traj, const std::filesystem::path& path);
TrajectoryBundle parse_trajectory_csv(const std::filesystem::path& path);

/// A CSV with a header row and numeric cells.
struct NumericTable {
  std::vector<std::string> header;
  Matrix rows;
  /// Index of a named column; throws ParseError when absent.
  Eigen::Index column(const std::string& name) const;
};
NumericTable read_numeric_csv(const std::filesystem::path& path);

/// Whole-file helpers; failures raise IoError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal text that round-trips a double (17 significant digits).
std::string format_double(double v);

}  // namespace vgfm
