#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records matrix-valued nodes in evaluation order; each op stores a
// closure that pushes its output gradient to its inputs. Scalars are 1x1
// matrices. `backward` walks the tape once in reverse and releases
// intermediate storage as it goes, so a tape supports a single backward pass.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <vector>

namespace vgfm::ad {

using Matrix = Eigen::MatrixXd;

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is kept after backward().
  Var variable(Matrix value);
  /// Generic op: `fn` is called during backward only when the node received
  /// a gradient and at least one input requires one.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient of a leaf after backward(); zero matrix when none flowed in.
  Matrix grad(Var v) const;
  /// Incoming gradient of the node being processed (valid inside Backward).
  const Matrix& grad_ref(std::size_t id) const { return nodes_[id].grad; }

  void accumulate(Var v, const Matrix& g);

  /// Seeds d out / d out = 1 (out must be 1x1) and propagates.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// -----------------------------------------------------------------------------
// Primitive ops. All shapes are checked; mismatches throw std::invalid_argument.
// -----------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var cwise_mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var matmul(Tape& t, Var a, Var b);

/// x W^T + 1 b^T with x: N x in, W: out x in, b: out x 1.
Var linear(Tape& t, Var x, Var W, Var b);
Var leaky_relu(Tape& t, Var x, double negative_slope);
/// leaky_relu(linear(x, W, b)) as a single node (stores only the output).
Var dense_leaky(Tape& t, Var x, Var W, Var b, double negative_slope);

Var square(Tape& t, Var a);
Var abs(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var log(Tape& t, Var a);

/// Sum of all entries -> 1x1.
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
/// Per-row sums -> N x 1.
Var row_sum(Tape& t, Var a);
/// Per-row Euclidean norms -> N x 1 (subgradient 0 at the origin).
Var row_norm(Tape& t, Var a);
/// [a | b] column concatenation.
Var hcat(Tape& t, Var a, Var b);
/// a / s with s a 1x1 node.
Var div_scalar(Tape& t, Var a, Var s);
/// sum(a .* w) for a constant weight matrix w -> 1x1.
Var frobenius_dot(Tape& t, Var a, const Matrix& w);
/// D_ij = |p_i - y_j| for a constant point set y.
Var pairwise_distance(Tape& t, Var p, const Matrix& y);

}  // namespace vgfm::ad
