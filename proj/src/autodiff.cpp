#include "vgfm/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vgfm::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

}  // namespace

// -----------------------------------------------------------------------------
// Tape
// -----------------------------------------------------------------------------

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false, true});
  return Var{nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true, true});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool req = false;
  for (Var v : inputs) {
    if (!v.valid() || v.id >= nodes_.size()) throw std::invalid_argument("Tape::record: input from another tape");
    req = req || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), req ? std::move(fn) : nullptr, req, false});
  return Var{nodes_.size() - 1};
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("Tape::scalar: node is not 1x1");
  return m(0, 0);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var out) {
  if (consumed_) throw std::logic_error("Tape::backward called twice");
  consumed_ = true;
  if (scalar(out) != scalar(out)) throw std::domain_error("Tape::backward: loss is NaN");
  if (!nodes_[out.id].requires_grad) return;
  nodes_[out.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    if (!n.is_leaf && i != out.id) {
      // Consumers of node i all sit later on the tape and have run already.
      n.value = Matrix();
      n.grad = Matrix();
      n.backward = nullptr;
    }
  }
}

// -----------------------------------------------------------------------------
// Ops
// -----------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  return t.record(t.value(a) + t.value(b), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  return t.record(t.value(a) - t.value(b), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, -g);
  });
}

Var cwise_mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "cwise_mul");
  return t.record(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, {a}, [a, s](Tape& tp, std::size_t self) { tp.accumulate(a, tp.grad_ref(self) * s); });
}

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return t.record(t.value(a) * t.value(b), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

namespace {

void check_linear(const Matrix& x, const Matrix& W, const Matrix& b) {
  if (x.cols() != W.cols()) throw std::invalid_argument("linear: input width does not match weight columns");
  if (b.rows() != W.rows() || b.cols() != 1) throw std::invalid_argument("linear: bias must be out x 1");
}

void linear_backward(Tape& tp, Var x, Var W, Var b, const Matrix& dz) {
  if (tp.requires_grad(x)) tp.accumulate(x, dz * tp.value(W));
  if (tp.requires_grad(W)) tp.accumulate(W, dz.transpose() * tp.value(x));
  if (tp.requires_grad(b)) tp.accumulate(b, dz.colwise().sum().transpose());
}

}  // namespace

Var linear(Tape& t, Var x, Var W, Var b) {
  const Matrix& xv = t.value(x);
  const Matrix& Wv = t.value(W);
  const Matrix& bv = t.value(b);
  check_linear(xv, Wv, bv);
  Matrix z = xv * Wv.transpose();
  z.rowwise() += bv.col(0).transpose();
  return t.record(std::move(z), {x, W, b},
                  [x, W, b](Tape& tp, std::size_t self) { linear_backward(tp, x, W, b, tp.grad_ref(self)); });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  Matrix y = t.value(x).unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return t.record(std::move(y), {x}, [x, slope](Tape& tp, std::size_t self) {
    const Matrix& xv = tp.value(x);
    Matrix g = tp.grad_ref(self);
    for (Eigen::Index k = 0; k < g.size(); ++k)
      if (!(xv.data()[k] > 0.0)) g.data()[k] *= slope;
    tp.accumulate(x, g);
  });
}

Var dense_leaky(Tape& t, Var x, Var W, Var b, double slope) {
  if (!(slope > 0.0)) throw std::invalid_argument("dense_leaky: negative slope must be > 0");
  const Matrix& xv = t.value(x);
  const Matrix& Wv = t.value(W);
  const Matrix& bv = t.value(b);
  check_linear(xv, Wv, bv);
  Matrix z = xv * Wv.transpose();
  z.rowwise() += bv.col(0).transpose();
  z = z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  // With a positive slope the sign of the output equals the sign of the
  // pre-activation, so the output alone determines the local derivative.
  return t.record(std::move(z), {x, W, b}, [x, W, b, slope](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(Var{self});
    Matrix dz = tp.grad_ref(self);
    for (Eigen::Index k = 0; k < dz.size(); ++k)
      if (!(y.data()[k] > 0.0)) dz.data()[k] *= slope;
    linear_backward(tp, x, W, b, dz);
  });
}

Var square(Tape& t, Var a) {
  return t.record(t.value(a).array().square().matrix(), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a, (2.0 * tp.grad_ref(self).array() * tp.value(a).array()).matrix());
  });
}

Var abs(Tape& t, Var a) {
  return t.record(t.value(a).cwiseAbs(), {a}, [a](Tape& tp, std::size_t self) {
    const Matrix& v = tp.value(a);
    Matrix g = tp.grad_ref(self);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      const double x = v.data()[k];
      g.data()[k] *= x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
    tp.accumulate(a, g);
  });
}

Var exp(Tape& t, Var a) {
  return t.record(t.value(a).array().exp().matrix(), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a, tp.grad_ref(self).cwiseProduct(tp.value(Var{self})));
  });
}

Var log(Tape& t, Var a) {
  return t.record(t.value(a).array().log().matrix(), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a, tp.grad_ref(self).cwiseQuotient(tp.value(a)));
  });
}

Var sum(Tape& t, Var a) {
  Matrix s(1, 1);
  s(0, 0) = t.value(a).sum();
  const auto rows = t.value(a).rows();
  const auto cols = t.value(a).cols();
  return t.record(std::move(s), {a}, [a, rows, cols](Tape& tp, std::size_t self) {
    tp.accumulate(a, Matrix::Constant(rows, cols, tp.grad_ref(self)(0, 0)));
  });
}

Var mean(Tape& t, Var a) {
  const auto n = static_cast<double>(t.value(a).size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(t, sum(t, a), 1.0 / n);
}

Var row_sum(Tape& t, Var a) {
  const auto cols = t.value(a).cols();
  return t.record(t.value(a).rowwise().sum(), {a}, [a, cols](Tape& tp, std::size_t self) {
    tp.accumulate(a, tp.grad_ref(self).replicate(1, cols));
  });
}

Var row_norm(Tape& t, Var a) {
  return t.record(t.value(a).rowwise().norm(), {a}, [a](Tape& tp, std::size_t self) {
    const Matrix& v = tp.value(a);
    const Matrix& nrm = tp.value(Var{self});
    const Matrix& g = tp.grad_ref(self);
    Matrix out = Matrix::Zero(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (nrm(i, 0) > 0.0) out.row(i) = v.row(i) * (g(i, 0) / nrm(i, 0));
    tp.accumulate(a, out);
  });
}

Var hcat(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) throw std::invalid_argument("hcat: row count mismatch");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const auto ca = av.cols();
  const auto cb = bv.cols();
  return t.record(std::move(out), {a, b}, [a, b, ca, cb](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(a)) tp.accumulate(a, g.leftCols(ca));
    if (tp.requires_grad(b)) tp.accumulate(b, g.rightCols(cb));
  });
}

Var div_scalar(Tape& t, Var a, Var s) {
  const Matrix& sv = t.value(s);
  if (sv.rows() != 1 || sv.cols() != 1) throw std::invalid_argument("div_scalar: divisor must be 1x1");
  const double d = sv(0, 0);
  return t.record(t.value(a) / d, {a, s}, [a, s](Tape& tp, std::size_t self) {
    const double dv = tp.value(s)(0, 0);
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(a)) tp.accumulate(a, g / dv);
    if (tp.requires_grad(s)) {
      Matrix gs(1, 1);
      gs(0, 0) = -g.cwiseProduct(tp.value(a)).sum() / (dv * dv);
      tp.accumulate(s, gs);
    }
  });
}

Var frobenius_dot(Tape& t, Var a, const Matrix& w) {
  require_same_shape(t.value(a), w, "frobenius_dot");
  Matrix s(1, 1);
  s(0, 0) = t.value(a).cwiseProduct(w).sum();
  return t.record(std::move(s), {a}, [a, w](Tape& tp, std::size_t self) { tp.accumulate(a, w * tp.grad_ref(self)(0, 0)); });
}

Var pairwise_distance(Tape& t, Var p, const Matrix& y) {
  const Matrix& pv = t.value(p);
  if (pv.cols() != y.cols()) throw std::invalid_argument("pairwise_distance: dimension mismatch");
  Matrix D(pv.rows(), y.rows());
  for (Eigen::Index j = 0; j < y.rows(); ++j)
    D.col(j) = (pv.rowwise() - y.row(j)).rowwise().norm();
  return t.record(std::move(D), {p}, [p, y](Tape& tp, std::size_t self) {
    const Matrix& pv2 = tp.value(p);
    const Matrix& Dv = tp.value(Var{self});
    const Matrix& g = tp.grad_ref(self);
    Matrix W(g.rows(), g.cols());
    for (Eigen::Index k = 0; k < W.size(); ++k) W.data()[k] = Dv.data()[k] > 0.0 ? g.data()[k] / Dv.data()[k] : 0.0;
    Matrix out = pv2.array().colwise() * W.rowwise().sum().array();
    out -= W * y;
    tp.accumulate(p, out);
  });
}

}  // namespace vgfm::ad
