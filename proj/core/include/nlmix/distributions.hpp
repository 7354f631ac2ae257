#pragma once

#include <limits>

#include <Eigen/Dense>

#include "nlmix/random.hpp"

namespace nlmix {

// Univariate normal and Laplace laws in the standard-deviation convention:
// both N(mu, sigma) and L(mu, sigma) have variance sigma^2.

double normal_pdf(double t, double mu, double sigma);
double normal_logpdf(double t, double mu, double sigma);
double laplace_pdf(double t, double mu, double sigma);
double laplace_logpdf(double t, double mu, double sigma);

double normal_cdf(double t);
double laplace_cdf(double t, double mu, double sigma);

/// exp(x^2) * erfc(x), finite for all x that do not overflow exp(x^2) on the
/// negative side.
double erfcx(double x);

/// Mills ratio R(t) = (1 - Phi(t)) / phi(t). Overflows to +inf only for
/// t below about -37.6, where the true value exceeds the double range.
double mills_ratio(double t);
/// log R(t), finite for every finite t.
double log_mills_ratio(double t);

/// Modified Bessel function of the second (third) kind K_nu(x), x > 0.
double bessel_k(double nu, double x);

/// Draws mu + sigma * sqrt(E) * Z with E ~ Exp(1), Z ~ N(0, 1).
double sample_laplace_scale_mixture(double mu, double sigma, Rng& rng);

/// Zero-centred q-variate Laplace law with covariance parameter Sigma.
class MultivariateLaplace {
 public:
  /// Throws std::domain_error if Sigma is not square and symmetric, or has a
  /// negative eigenvalue.
  explicit MultivariateLaplace(Eigen::MatrixXd sigma);

  int dim() const { return static_cast<int>(sigma_.rows()); }
  const Eigen::MatrixXd& sigma() const { return sigma_; }

  /// Density; requires Sigma positive definite. At t = 0 with q >= 2 the
  /// density diverges and +inf is returned.
  double pdf(const Eigen::VectorXd& t) const;
  double logpdf(const Eigen::VectorXd& t) const;

  /// sqrt(W) * V with W ~ Exp(1), V ~ N_q(0, Sigma).
  Eigen::VectorXd sample(Rng& rng) const;

 private:
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd root_;  // root_ * root_^T == sigma_
};

double mv_laplace_pdf(const Eigen::VectorXd& t, const Eigen::MatrixXd& sigma);
Eigen::VectorXd sample_mv_laplace(const Eigen::MatrixXd& sigma, Rng& rng);

/// True when the value returned by mv_laplace_pdf is the boundary value at
/// the origin rather than a finite density.
inline bool is_boundary_density(double v) { return v == std::numeric_limits<double>::infinity(); }

/// Draws from N_q(0, Sigma) via a precomputed square root.
Eigen::VectorXd sample_mv_normal(const Eigen::MatrixXd& root, Rng& rng);

/// Square root R with R R^T = Sigma for a symmetric nonnegative-definite
/// matrix (eigen-based, so singular Sigma is allowed).
Eigen::MatrixXd psd_root(const Eigen::MatrixXd& sigma);

}  // namespace nlmix
