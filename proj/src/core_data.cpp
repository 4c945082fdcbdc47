#include "vgfm/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

namespace vgfm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    // from_chars rejects "inf"/"nan" spellings on some libstdc++ versions;
    // those are invalid data anyway, so report them as validation failures.
    std::string lower(field);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower.find("nan") != std::string::npos || lower.find("inf") != std::string::npos)
      throw ValidationError("line " + std::to_string(line_no) + ": non-finite value '" + std::string(field) + "'");
    throw ParseError("cannot parse number '" + std::string(field) + "'", line_no);
  }
  return value;
}

long parse_int(std::string_view field, std::size_t line_no) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("cannot parse integer time index '" + std::string(field) + "'", line_no);
  return value;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

// -----------------------------------------------------------------------------
// Snapshot / Dataset
// -----------------------------------------------------------------------------

Snapshot::Snapshot(int t, Matrix pts, Vector w)
    : time_index(t), points(std::move(pts)), weights(std::move(w)) {}

bool Snapshot::has_unit_weights() const {
  return weights.size() == 0 || (weights.array() == 1.0).all();
}

Vector Snapshot::weight_vector() const {
  if (weights.size() == 0) return Vector::Ones(points.rows());
  return weights;
}

void Snapshot::validate() const {
  if (points.rows() < 1) throw ValidationError("snapshot " + std::to_string(time_index) + " is empty");
  if (points.cols() < 1) throw ValidationError("snapshot " + std::to_string(time_index) + " has dimension 0");
  if (!points.allFinite())
    throw ValidationError("snapshot " + std::to_string(time_index) + " contains non-finite coordinates");
  if (weights.size() != 0) {
    if (weights.size() != points.rows())
      throw ValidationError("snapshot " + std::to_string(time_index) + ": weight count does not match point count");
    if (!weights.allFinite() || (weights.array() <= 0.0).any())
      throw ValidationError("snapshot " + std::to_string(time_index) + ": weights must be finite and > 0");
  }
}

Dataset::Dataset(std::vector<Snapshot> snapshots) : snapshots_(std::move(snapshots)) { validate(); }

Eigen::Index Dataset::dim() const { return snapshots_.empty() ? 0 : snapshots_.front().dim(); }

std::size_t Dataset::total_points() const {
  std::size_t n = 0;
  for (const auto& s : snapshots_) n += static_cast<std::size_t>(s.size());
  return n;
}

void Dataset::validate() const {
  if (snapshots_.empty()) throw ValidationError("dataset has no snapshots");
  const auto d = snapshots_.front().dim();
  for (std::size_t t = 0; t < snapshots_.size(); ++t) {
    const auto& s = snapshots_[t];
    if (s.time_index != static_cast<int>(t))
      throw ValidationError("time indices must be 0..T-1 without gaps; found " + std::to_string(s.time_index) +
                            " at position " + std::to_string(t));
    s.validate();
    if (s.dim() != d) throw ValidationError("snapshot " + std::to_string(t) + " has inconsistent dimension");
  }
}

// -----------------------------------------------------------------------------
// TransportPlan / TrajectoryBundle
// -----------------------------------------------------------------------------

TransportPlan::TransportPlan(Matrix pi, double eps, double tau_)
    : matrix(std::move(pi)), epsilon(eps), tau(tau_) {
  refresh_marginals();
}

void TransportPlan::refresh_marginals() {
  row_marginal = matrix.rowwise().sum();
  col_marginal = matrix.colwise().sum().transpose();
}

void TransportPlan::validate() const {
  if (!matrix.allFinite() || (matrix.array() < 0.0).any())
    throw ValidationError("transport plan has negative or non-finite entries");
  if (row_marginal.size() != matrix.rows() || col_marginal.size() != matrix.cols())
    throw ValidationError("transport plan marginal sizes do not match the matrix");
  const Vector rows = matrix.rowwise().sum();
  const Vector cols = matrix.colwise().sum().transpose();
  if ((rows - row_marginal).cwiseAbs().maxCoeff() > 1e-9 || (cols - col_marginal).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("stored plan marginals disagree with the matrix");
}

void TrajectoryBundle::validate() const {
  if (positions.size() != times.size() || static_cast<std::size_t>(log_weights.cols()) != times.size())
    throw ValidationError("trajectory bundle: time grid and storage sizes differ");
  for (const auto& p : positions)
    if (p.rows() != log_weights.rows()) throw ValidationError("trajectory bundle: particle count mismatch");
  if (!log_weights.allFinite()) throw ValidationError("trajectory bundle: non-finite log-weights");
  if (log_weights.cols() > 0 && (log_weights.col(0).array() != 0.0).any())
    throw ValidationError("trajectory bundle: initial log-weights must be 0");
}

// -----------------------------------------------------------------------------
// CSV
// -----------------------------------------------------------------------------

Dataset parse_snapshot_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t ncols = 0;
  bool has_w = false;
  std::size_t d = 0;

  // Header
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw ParseError("empty file: missing header row");
  {
    auto fields = split_commas(line);
    if (fields.empty() || fields[0] != "t") throw ParseError("header must start with 't'", line_no);
    has_w = fields.size() >= 2 && fields.back() == "w";
    d = fields.size() - 1 - (has_w ? 1 : 0);
    if (d == 0) throw ParseError("header declares no coordinate columns", line_no);
    for (std::size_t k = 0; k < d; ++k) {
      if (fields[k + 1] != "x" + std::to_string(k + 1))
        throw ParseError("expected column 'x" + std::to_string(k + 1) + "', found '" + std::string(fields[k + 1]) + "'",
                         line_no);
    }
    ncols = fields.size();
  }

  std::map<long, std::vector<std::pair<std::vector<double>, double>>> groups;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_commas(line);
    if (fields.size() != ncols)
      throw ParseError("expected " + std::to_string(ncols) + " fields, found " + std::to_string(fields.size()), line_no);
    long t = parse_int(fields[0], line_no);
    std::vector<double> x(d);
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = parse_double(fields[k + 1], line_no);
      if (!std::isfinite(x[k])) throw ValidationError("line " + std::to_string(line_no) + ": non-finite coordinate");
    }
    double w = 1.0;
    if (has_w) {
      w = parse_double(fields.back(), line_no);
      if (!std::isfinite(w) || w <= 0.0)
        throw ValidationError("line " + std::to_string(line_no) + ": weight must be finite and > 0");
    }
    groups[t].emplace_back(std::move(x), w);
    ++rows;
  }
  if (rows == 0) throw ParseError("file has a header but no data rows");

  std::vector<Snapshot> snaps;
  long expected = 0;
  for (auto& [t, pts] : groups) {
    if (t != expected)
      throw ValidationError("non-contiguous time indices: expected " + std::to_string(expected) + ", found " +
                            std::to_string(t));
    ++expected;
    Matrix m(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(d));
    Vector w(static_cast<Eigen::Index>(pts.size()));
    bool unit = true;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = pts[i].first[k];
      w(static_cast<Eigen::Index>(i)) = pts[i].second;
      unit = unit && pts[i].second == 1.0;
    }
    snaps.emplace_back(static_cast<int>(t), std::move(m), unit ? Vector() : std::move(w));
  }
  return Dataset(std::move(snaps));
}

Dataset parse_snapshot_csv(const std::filesystem::path& path) { return parse_snapshot_csv_text(read_file(path)); }

std::string format_dataset_csv(const Dataset& ds) {
  ds.validate();
  const auto d = ds.dim();
  bool with_w = false;
  for (const auto& s : ds.snapshots()) with_w = with_w || !s.has_unit_weights();

  std::string out = "t";
  for (Eigen::Index k = 0; k < d; ++k) out += ",x" + std::to_string(k + 1);
  if (with_w) out += ",w";
  out += '\n';
  for (const auto& s : ds.snapshots()) {
    const Vector w = s.weight_vector();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      out += std::to_string(s.time_index);
      for (Eigen::Index k = 0; k < d; ++k) {
        out += ',';
        out += format_double(s.points(i, k));
      }
      if (with_w) {
        out += ',';
        out += format_double(w(i));
      }
      out += '\n';
    }
  }
  return out;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) { write_file(path, format_dataset_csv(ds)); }

void write_trajectory_csv(const TrajectoryBundle& traj, const std::filesystem::path& path) {
  traj.validate();
  const Eigen::Index d = traj.positions.empty() ? 0 : traj.positions.front().cols();
  std::string out = "particle,t";
  for (Eigen::Index k = 0; k < d; ++k) out += ",x" + std::to_string(k + 1);
  out += ",logw\n";
  for (Eigen::Index p = 0; p < traj.num_particles(); ++p) {
    for (std::size_t k = 0; k < traj.num_times(); ++k) {
      out += std::to_string(p);
      out += ',';
      out += format_double(traj.times[k]);
      for (Eigen::Index j = 0; j < d; ++j) {
        out += ',';
        out += format_double(traj.positions[k](p, j));
      }
      out += ',';
      out += format_double(traj.log_weights(p, static_cast<Eigen::Index>(k)));
      out += '\n';
    }
  }
  write_file(path, out);
}

TrajectoryBundle parse_trajectory_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty trajectory file");
  auto header = split_commas(line);
  if (header.size() < 4 || header[0] != "particle" || header[1] != "t" || header.back() != "logw")
    throw ParseError("trajectory header must be particle,t,x1,...,xd,logw", line_no);
  const std::size_t d = header.size() - 3;

  struct Row {
    long particle;
    double t;
    std::vector<double> x;
    double logw;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_commas(line);
    if (f.size() != header.size()) throw ParseError("wrong field count", line_no);
    Row r{parse_int(f[0], line_no), parse_double(f[1], line_no), std::vector<double>(d), parse_double(f.back(), line_no)};
    for (std::size_t k = 0; k < d; ++k) r.x[k] = parse_double(f[k + 2], line_no);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("trajectory file has no rows");

  std::vector<double> times;
  for (const auto& r : rows) {
    if (r.particle != rows.front().particle) break;
    times.push_back(r.t);
  }
  const std::size_t K = times.size();
  if (rows.size() % K != 0) throw ParseError("ragged trajectory file");
  const auto N = static_cast<Eigen::Index>(rows.size() / K);

  TrajectoryBundle traj;
  traj.times = times;
  traj.positions.assign(K, Matrix(N, static_cast<Eigen::Index>(d)));
  traj.log_weights.resize(N, static_cast<Eigen::Index>(K));
  for (std::size_t idx = 0; idx < rows.size(); ++idx) {
    const auto p = static_cast<Eigen::Index>(idx / K);
    const std::size_t k = idx % K;
    const auto& r = rows[idx];
    if (r.particle != p || r.t != times[k]) throw ParseError("trajectory rows out of order", idx + 2);
    for (std::size_t j = 0; j < d; ++j) traj.positions[k](p, static_cast<Eigen::Index>(j)) = r.x[j];
    traj.log_weights(p, static_cast<Eigen::Index>(k)) = r.logw;
  }
  traj.validate();
  return traj;
}

Eigen::Index NumericTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError("missing column '" + name + "'");
  return static_cast<Eigen::Index>(it - header.begin());
}

NumericTable read_numeric_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty file " + path.string());
  NumericTable table;
  for (auto h : split_commas(line)) table.header.emplace_back(h);
  std::vector<double> cells;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != table.header.size()) throw ParseError("wrong field count", line_no);
    for (auto v : f) cells.push_back(parse_double(v, line_no));
    ++n;
  }
  const auto cols = static_cast<Eigen::Index>(table.header.size());
  table.rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      cells.data(), static_cast<Eigen::Index>(n), cols);
  return table;
}

std::string read_text_file(const std::filesystem::path& path) { return read_file(path); }
void write_text_file(const std::filesystem::path& path, const std::string& text) { write_file(path, text); }

}  // namespace vgfm
