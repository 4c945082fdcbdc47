#include "network_simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vgfm::ot::detail {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TransportSimplex::TransportSimplex(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                                   const Eigen::MatrixXd& cost)
    : n_(static_cast<int>(supply.size())), m_(static_cast<int>(demand.size())) {
  node_num_ = n_ + m_;
  root_ = node_num_;
  arc_num_ = static_cast<std::int64_t>(n_) * m_;

  cost_.resize(static_cast<std::size_t>(arc_num_));
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < m_; ++j) {
      const double c = cost(i, j);
      cost_[static_cast<std::size_t>(i) * m_ + j] = c;
      max_cost_ = std::max(max_cost_, std::abs(c));
    }
  flow_.assign(static_cast<std::size_t>(arc_num_), 0.0);
  state_.assign(static_cast<std::size_t>(arc_num_), kStateLower);

  supply_.resize(static_cast<std::size_t>(node_num_ + 1));
  for (int i = 0; i < n_; ++i) supply_[i] = supply(i);
  for (int j = 0; j < m_; ++j) supply_[n_ + j] = -demand(j);
  supply_[root_] = 0.0;

  const auto nodes = static_cast<std::size_t>(node_num_ + 1);
  pi_.assign(nodes, 0.0);
  parent_.assign(nodes, -1);
  pred_.assign(nodes, -1);
  thread_.assign(nodes, 0);
  rev_thread_.assign(nodes, 0);
  succ_num_.assign(nodes, 0);
  last_succ_.assign(nodes, 0);
  pred_dir_.assign(nodes, kDirUp);

  art_source_.resize(static_cast<std::size_t>(node_num_));
  art_target_.resize(static_cast<std::size_t>(node_num_));
  art_cost_.resize(static_cast<std::size_t>(node_num_));
  art_flow_.resize(static_cast<std::size_t>(node_num_));
  art_state_.assign(static_cast<std::size_t>(node_num_), kStateTree);

  art_cost_value_ = (max_cost_ + 1.0) * node_num_;

  // Initial spanning tree: every node hangs off the artificial root.
  parent_[root_] = -1;
  pred_[root_] = -1;
  thread_[root_] = 0;
  rev_thread_[0] = root_;
  succ_num_[root_] = node_num_ + 1;
  last_succ_[root_] = root_ - 1;
  pi_[root_] = 0.0;
  for (int u = 0; u < node_num_; ++u) {
    const std::int64_t e = arc_num_ + u;
    parent_[u] = root_;
    pred_[u] = e;
    thread_[u] = u + 1;
    rev_thread_[u + 1] = u;
    succ_num_[u] = 1;
    last_succ_[u] = u;
    const auto k = static_cast<std::size_t>(u);
    if (supply_[u] >= 0.0) {
      pred_dir_[u] = kDirUp;
      pi_[u] = 0.0;
      art_source_[k] = u;
      art_target_[k] = root_;
      art_flow_[k] = supply_[u];
      art_cost_[k] = 0.0;
    } else {
      pred_dir_[u] = kDirDown;
      pi_[u] = art_cost_value_;
      art_source_[k] = root_;
      art_target_[k] = u;
      art_flow_[k] = -supply_[u];
      art_cost_[k] = art_cost_value_;
    }
  }

  block_size_ = std::max<std::int64_t>(static_cast<std::int64_t>(std::sqrt(static_cast<double>(arc_num_))), 10);
  block_size_ = std::min<std::int64_t>(block_size_, std::max<std::int64_t>(arc_num_, 1));
}

bool TransportSimplex::find_entering_arc() {
  // Block search over the real arcs, starting where the previous search
  // stopped. Reduced costs below a relative round-off threshold are treated
  // as optimal.
  double min_c = 0.0;
  std::int64_t cnt = block_size_;
  in_arc_ = -1;
  const double rel = 64.0 * std::numeric_limits<double>::epsilon();

  auto scan = [&](std::int64_t from, std::int64_t to) -> bool {
    if (from >= to) return false;
    int i = static_cast<int>(from / m_);
    int j = static_cast<int>(from % m_);
    for (std::int64_t e = from; e < to; ++e) {
      const auto k = static_cast<std::size_t>(e);
      const std::int8_t st = state_[k];
      if (st != kStateTree) {
        const double pi_s = pi_[i];
        const double pi_t = pi_[n_ + j];
        const double rc = cost_[k] + pi_s - pi_t;
        const double c = st * rc;
        if (c < min_c && -c > rel * (std::abs(cost_[k]) + std::abs(pi_s) + std::abs(pi_t))) {
          min_c = c;
          in_arc_ = e;
        }
      }
      if (--cnt == 0) {
        if (in_arc_ >= 0) {
          next_arc_ = e + 1 == arc_num_ ? 0 : e + 1;
          return true;
        }
        cnt = block_size_;
      }
      if (++j == m_) {
        j = 0;
        ++i;
      }
    }
    return false;
  };

  if (scan(next_arc_, arc_num_)) return true;
  if (scan(0, next_arc_)) return true;
  if (in_arc_ < 0) return false;
  next_arc_ = 0;
  return true;
}

void TransportSimplex::find_join_node() {
  int u = source(in_arc_);
  int v = target(in_arc_);
  while (u != v) {
    if (succ_num_[u] < succ_num_[v])
      u = parent_[u];
    else
      v = parent_[v];
  }
  join_ = u;
}

bool TransportSimplex::find_leaving_arc() {
  if (arc_state(in_arc_) == kStateLower) {
    first_ = source(in_arc_);
    second_ = target(in_arc_);
  } else {
    first_ = target(in_arc_);
    second_ = source(in_arc_);
  }
  delta_ = kInf;
  int result = 0;

  for (int u = first_; u != join_; u = parent_[u]) {
    const std::int64_t e = pred_[u];
    const double d = pred_dir_[u] == kDirDown ? kInf : arc_flow(e);
    if (d < delta_) {
      delta_ = d;
      u_out_ = u;
      result = 1;
    }
  }
  for (int u = second_; u != join_; u = parent_[u]) {
    const std::int64_t e = pred_[u];
    const double d = pred_dir_[u] == kDirUp ? kInf : arc_flow(e);
    if (d <= delta_) {
      delta_ = d;
      u_out_ = u;
      result = 2;
    }
  }

  if (result == 1) {
    u_in_ = first_;
    v_in_ = second_;
  } else {
    u_in_ = second_;
    v_in_ = first_;
  }
  return result != 0;
}

void TransportSimplex::change_flow(bool change) {
  if (delta_ > 0.0) {
    const double val = arc_state(in_arc_) * delta_;
    arc_flow(in_arc_) += val;
    for (int u = source(in_arc_); u != join_; u = parent_[u]) arc_flow(pred_[u]) -= pred_dir_[u] * val;
    for (int u = target(in_arc_); u != join_; u = parent_[u]) arc_flow(pred_[u]) += pred_dir_[u] * val;
  }
  if (change) {
    arc_state(in_arc_) = kStateTree;
    const std::int64_t out = pred_[u_out_];
    arc_state(out) = arc_flow(out) == 0.0 ? kStateLower : kStateUpper;
  } else {
    arc_state(in_arc_) = static_cast<std::int8_t>(-arc_state(in_arc_));
  }
}

void TransportSimplex::update_tree_structure() {
  const int old_rev_thread = rev_thread_[u_out_];
  const int old_succ_num = succ_num_[u_out_];
  const int old_last_succ = last_succ_[u_out_];
  v_out_ = parent_[u_out_];

  if (u_in_ == u_out_) {
    parent_[u_in_] = v_in_;
    pred_[u_in_] = in_arc_;
    pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kDirUp : kDirDown;

    if (thread_[v_in_] != u_out_) {
      int after = thread_[old_last_succ];
      thread_[old_rev_thread] = after;
      rev_thread_[after] = old_rev_thread;
      after = thread_[v_in_];
      thread_[v_in_] = u_out_;
      rev_thread_[u_out_] = v_in_;
      thread_[old_last_succ] = after;
      rev_thread_[after] = old_last_succ;
    }
  } else {
    // When old_rev_thread == v_in, join and v_out coincide.
    const int thread_continue = old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

    // Re-hang the stem nodes between u_in and u_out.
    int stem = u_in_;
    int par_stem = v_in_;
    int next_stem = 0;
    int last = last_succ_[u_in_];
    int before = 0;
    int after = thread_[last];
    thread_[v_in_] = u_in_;
    dirty_revs_.clear();
    dirty_revs_.push_back(v_in_);
    while (stem != u_out_) {
      next_stem = parent_[stem];
      thread_[last] = next_stem;
      dirty_revs_.push_back(last);

      before = rev_thread_[stem];
      thread_[before] = after;
      rev_thread_[after] = before;

      parent_[stem] = par_stem;
      par_stem = stem;
      stem = next_stem;

      last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
      after = thread_[last];
    }
    parent_[u_out_] = par_stem;
    thread_[last] = thread_continue;
    rev_thread_[thread_continue] = last;
    last_succ_[u_out_] = last;

    if (old_rev_thread != v_in_) {
      thread_[old_rev_thread] = after;
      rev_thread_[after] = old_rev_thread;
    }

    for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

    int tmp_sc = 0;
    const int tmp_ls = last_succ_[u_out_];
    for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
      pred_[u] = pred_[p];
      pred_dir_[u] = static_cast<std::int8_t>(-pred_dir_[p]);
      tmp_sc += succ_num_[u] - succ_num_[p];
      succ_num_[u] = tmp_sc;
      last_succ_[p] = tmp_ls;
    }
    pred_[u_in_] = in_arc_;
    pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kDirUp : kDirDown;
    succ_num_[u_in_] = old_succ_num;
  }

  const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
  const int last_succ_out = last_succ_[u_out_];
  for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;

  if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
    for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
      last_succ_[u] = old_rev_thread;
  } else if (last_succ_out != old_last_succ) {
    for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
      last_succ_[u] = last_succ_out;
  }

  for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
  for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
}

void TransportSimplex::update_potential() {
  const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * arc_cost(in_arc_);
  const int end = thread_[last_succ_[u_in_]];
  for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
}

TransportSimplex::Status TransportSimplex::run(std::int64_t max_pivots) {
  if (n_ == 0 || m_ == 0) return Status::infeasible;
  while (find_entering_arc()) {
    if (max_pivots >= 0 && pivots_ >= max_pivots) return Status::max_iter_reached;
    find_join_node();
    const bool change = find_leaving_arc();
    if (delta_ >= kInf) return Status::infeasible;  // unbounded cannot happen with c >= 0
    change_flow(change);
    if (change) {
      update_tree_structure();
      update_potential();
    }
    ++pivots_;
  }
  // Any flow left on artificial arcs means the masses did not balance.
  double total = 0.0;
  double art = 0.0;
  for (int u = 0; u < node_num_; ++u) {
    total += std::abs(supply_[u]);
    art += std::abs(art_flow_[static_cast<std::size_t>(u)]);
  }
  if (art > 1e-7 * std::max(total, 1.0)) return Status::infeasible;
  return Status::optimal;
}

Eigen::MatrixXd TransportSimplex::plan() const {
  Eigen::MatrixXd p(n_, m_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < m_; ++j) p(i, j) = std::max(0.0, flow_[static_cast<std::size_t>(i) * m_ + j]);
  return p;
}

Eigen::VectorXd TransportSimplex::alpha() const {
  Eigen::VectorXd a(n_);
  for (int i = 0; i < n_; ++i) a(i) = -pi_[i];
  return a;
}

Eigen::VectorXd TransportSimplex::beta() const {
  Eigen::VectorXd b(m_);
  for (int j = 0; j < m_; ++j) b(j) = pi_[n_ + j];
  return b;
}

double TransportSimplex::total_cost() const {
  double s = 0.0;
  for (std::size_t k = 0; k < flow_.size(); ++k) s += flow_[k] * cost_[k];
  return s;
}

}  // namespace vgfm::ot::detail
