#pragma once

// Log-sum-exp reductions over a fixed cost matrix, used by every Sinkhorn
// loop. The cost is stored twice (as -C/eps and its transpose) so that both
// reductions run over contiguous columns.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace vgfm::ot::detail {

using v8d = double __attribute__((vector_size(64)));
using v8u = std::uint64_t __attribute__((vector_size(64)));

/// exp(x) for x <= 0 without branches, for double or v8d. Relative error is
/// a few ulp; arguments below -708 are clamped (result below 1e-307).
template <class D, class U>
[[gnu::always_inline]] inline D exp_nonpositive(D x) {
  constexpr double log2e = 1.4426950408889634;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  // Round-to-nearest through the 1.5 * 2^52 shifter; the biased exponent
  // k + 1023 ends up in the low mantissa bits of `t`.
  constexpr double shifter = 0x1.8p52 + 1023.0;
  const D lo = x - x - 708.0;
  x = x < lo ? lo : x;
  const D t = x * log2e + shifter;
  const D k = t - shifter;
  const D r = (x - k * ln2_hi) - k * ln2_lo;
  D p = r * (1.0 / 479001600.0) + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const U bits = std::bit_cast<U>(t) << 52;
  return p * std::bit_cast<D>(bits);
}

inline double exp_nonpositive(double x) { return exp_nonpositive<double, std::uint64_t>(x); }

/// log sum_i exp(a_i + u_i), reduced in a fixed order over eight lanes.
inline double lse_shifted(const double* a, const double* u, Eigen::Index n) {
  constexpr int lanes = 8;
  const double ninf = -std::numeric_limits<double>::infinity();
  const Eigen::Index nv = n - n % lanes;
  v8d mxv = {ninf, ninf, ninf, ninf, ninf, ninf, ninf, ninf};
  for (Eigen::Index i = 0; i < nv; i += lanes) {
    v8d av, uv;
    std::memcpy(&av, a + i, sizeof(v8d));
    std::memcpy(&uv, u + i, sizeof(v8d));
    const v8d v = av + uv;
    mxv = v > mxv ? v : mxv;
  }
  double mx = ninf;
  for (int l = 0; l < lanes; ++l) mx = std::max(mx, mxv[l]);
  for (Eigen::Index i = nv; i < n; ++i) mx = std::max(mx, a[i] + u[i]);
  if (!std::isfinite(mx)) return mx;

  // Four independent vector chains keep the polynomial pipeline full.
  v8d acc0 = {}, acc1 = {}, acc2 = {}, acc3 = {};
  const Eigen::Index nq = n - n % (4 * lanes);
  auto term = [&](Eigen::Index i) {
    v8d av, uv;
    std::memcpy(&av, a + i, sizeof(v8d));
    std::memcpy(&uv, u + i, sizeof(v8d));
    return exp_nonpositive<v8d, v8u>(av + uv - mx);
  };
  for (Eigen::Index i = 0; i < nq; i += 4 * lanes) {
    acc0 += term(i);
    acc1 += term(i + lanes);
    acc2 += term(i + 2 * lanes);
    acc3 += term(i + 3 * lanes);
  }
  for (Eigen::Index i = nq; i < nv; i += lanes) acc0 += term(i);
  const v8d acc = (acc0 + acc1) + (acc2 + acc3);
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (Eigen::Index i = nv; i < n; ++i) s += exp_nonpositive(a[i] + u[i] - mx);
  return mx + std::log(s);
}

class LogKernel {
 public:
  LogKernel(const Eigen::MatrixXd& cost, double eps) : neg_(-cost / eps), neg_t_(neg_.transpose()) {}

  Eigen::Index rows() const { return neg_.rows(); }
  Eigen::Index cols() const { return neg_.cols(); }

  /// out_j = LSE_i(-C_ij / eps + u_i), length cols().
  Eigen::VectorXd col_lse(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out(cols());
    for (Eigen::Index j = 0; j < cols(); ++j) out(j) = lse_shifted(neg_.col(j).data(), u.data(), rows());
    return out;
  }

  /// out_i = LSE_j(-C_ij / eps + v_j), length rows().
  Eigen::VectorXd row_lse(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(rows());
    for (Eigen::Index i = 0; i < rows(); ++i) out(i) = lse_shifted(neg_t_.col(i).data(), v.data(), cols());
    return out;
  }

 private:
  Eigen::MatrixXd neg_;
  Eigen::MatrixXd neg_t_;
};

}  // namespace vgfm::ot::detail
