#pragma once

// Primal network simplex for dense transportation problems.
//
// Spanning-tree bookkeeping (thread / rev_thread / succ_num / last_succ) and
// the block-search pricing rule follow the classic strongly-feasible-tree
// formulation used by LEMON's NetworkSimplex, specialised to a complete
// bipartite graph so arc endpoints are computed from the arc index instead of
// being stored.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace vgfm::ot::detail {

class TransportSimplex {
 public:
  enum class Status { optimal, infeasible, max_iter_reached };

  /// supply: n source masses, demand: m sink masses, cost: n x m.
  TransportSimplex(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand, const Eigen::MatrixXd& cost);

  Status run(std::int64_t max_pivots = -1);

  Eigen::MatrixXd plan() const;
  /// Dual variables alpha (rows) and beta (cols) with alpha_i + beta_j <= c_ij.
  Eigen::VectorXd alpha() const;
  Eigen::VectorXd beta() const;
  double total_cost() const;
  std::int64_t pivots() const { return pivots_; }

 private:
  static constexpr std::int8_t kStateUpper = -1;
  static constexpr std::int8_t kStateTree = 0;
  static constexpr std::int8_t kStateLower = 1;
  static constexpr std::int8_t kDirUp = 1;
  static constexpr std::int8_t kDirDown = -1;

  int source(std::int64_t e) const {
    return e < arc_num_ ? static_cast<int>(e / m_) : art_source_[static_cast<std::size_t>(e - arc_num_)];
  }
  int target(std::int64_t e) const {
    return e < arc_num_ ? n_ + static_cast<int>(e % m_) : art_target_[static_cast<std::size_t>(e - arc_num_)];
  }
  double arc_cost(std::int64_t e) const {
    return e < arc_num_ ? cost_[static_cast<std::size_t>(e)] : art_cost_[static_cast<std::size_t>(e - arc_num_)];
  }
  double& arc_flow(std::int64_t e) {
    return e < arc_num_ ? flow_[static_cast<std::size_t>(e)] : art_flow_[static_cast<std::size_t>(e - arc_num_)];
  }
  std::int8_t& arc_state(std::int64_t e) {
    return e < arc_num_ ? state_[static_cast<std::size_t>(e)] : art_state_[static_cast<std::size_t>(e - arc_num_)];
  }

  bool find_entering_arc();
  void find_join_node();
  bool find_leaving_arc();
  void change_flow(bool change);
  void update_tree_structure();
  void update_potential();

  int n_ = 0;
  int m_ = 0;
  int node_num_ = 0;
  int root_ = 0;
  std::int64_t arc_num_ = 0;

  std::vector<double> cost_;
  std::vector<double> flow_;
  std::vector<std::int8_t> state_;

  std::vector<int> art_source_;
  std::vector<int> art_target_;
  std::vector<double> art_cost_;
  std::vector<double> art_flow_;
  std::vector<std::int8_t> art_state_;

  std::vector<double> supply_;
  std::vector<double> pi_;
  std::vector<int> parent_;
  std::vector<std::int64_t> pred_;
  std::vector<int> thread_;
  std::vector<int> rev_thread_;
  std::vector<int> succ_num_;
  std::vector<int> last_succ_;
  std::vector<std::int8_t> pred_dir_;
  std::vector<int> dirty_revs_;

  double max_cost_ = 0.0;
  double art_cost_value_ = 0.0;

  // pivot state
  std::int64_t block_size_ = 0;
  std::int64_t next_arc_ = 0;
  std::int64_t in_arc_ = -1;
  int join_ = 0;
  int u_in_ = 0;
  int v_in_ = 0;
  int u_out_ = 0;
  int v_out_ = 0;
  int first_ = 0;
  int second_ = 0;
  double delta_ = 0.0;
  std::int64_t pivots_ = 0;
};

}  // namespace vgfm::ot::detail
