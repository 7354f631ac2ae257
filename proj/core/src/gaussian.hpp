#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/distributions.hpp"
#include "nlmix/errors.hpp"

namespace nlmix::detail {

inline constexpr double kLog2Pi = 1.83787706640934548356;

// log N(e; 0, V). Throws NumericError when V is not numerically SPD.
inline double gaussian_logpdf(const Eigen::VectorXd& e, const Eigen::MatrixXd& v) {
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) throw NumericError("covariance matrix is not positive definite");
  const auto& l = llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += std::log(l(i, i));
  const double quad = llt.matrixL().solve(e).squaredNorm();
  return -0.5 * (static_cast<double>(e.size()) * kLog2Pi + quad) - log_det;
}

// Root C with C C^T = m: Cholesky when possible, symmetric root otherwise
// (for singular m).
inline Eigen::MatrixXd whitening_root(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd l = llt.matrixL();
    if (l.allFinite()) return l;
  }
  return psd_root(m);
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace nlmix::detail
