#include "nlmix/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nlmix {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))
constexpr double kSqrtHalfPi = 1.25331413731550025121;  // sqrt(pi/2)

void require_positive_scale(double sigma, const char* where) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::domain_error(std::string(where) + ": scale must be positive and finite, got " +
                            std::to_string(sigma));
}

// exp(x*x) with x*x split into an exactly representable head and a small tail.
double exp_square(double x) {
  const double hi = static_cast<double>(static_cast<float>(x));
  const double lo = x - hi;
  return std::exp(hi * hi) * std::exp(2.0 * hi * lo + lo * lo);
}

bool is_symmetric(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

}  // namespace

double normal_logpdf(double t, double mu, double sigma) {
  require_positive_scale(sigma, "normal_pdf");
  const double z = (t - mu) / sigma;
  return -kLogSqrt2Pi - std::log(sigma) - 0.5 * z * z;
}

double normal_pdf(double t, double mu, double sigma) { return std::exp(normal_logpdf(t, mu, sigma)); }

double laplace_logpdf(double t, double mu, double sigma) {
  require_positive_scale(sigma, "laplace_pdf");
  return -0.5 * std::log(2.0) - std::log(sigma) - std::numbers::sqrt2 * std::abs(t - mu) / sigma;
}

double laplace_pdf(double t, double mu, double sigma) { return std::exp(laplace_logpdf(t, mu, sigma)); }

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

double laplace_cdf(double t, double mu, double sigma) {
  require_positive_scale(sigma, "laplace_cdf");
  const double z = std::numbers::sqrt2 * (t - mu) / sigma;
  return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

double erfcx(double x) {
  if (x < 0.0) return 2.0 * exp_square(x) - erfcx(-x);
  if (x < 26.0) return exp_square(x) * std::erfc(x);
  // Asymptotic series; at x >= 26 the omitted terms are below 1e-16.
  const double inv2x2 = 1.0 / (2.0 * x * x);
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -(2.0 * k - 1.0) * inv2x2;
    sum += term;
  }
  return sum / (x * std::sqrt(std::numbers::pi));
}

double mills_ratio(double t) {
  if (t >= 0.0) return kSqrtHalfPi * erfcx(t / std::numbers::sqrt2);
  // Phi(-t)/phi(t); Phi(-t) is in [1/2, 1] so no cancellation.
  return 0.5 * std::erfc(t / std::numbers::sqrt2) * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * t * t);
}

double log_mills_ratio(double t) {
  if (t >= 0.0) return std::log(kSqrtHalfPi) + std::log(erfcx(t / std::numbers::sqrt2));
  return std::log(0.5 * std::erfc(t / std::numbers::sqrt2)) + kLogSqrt2Pi + 0.5 * t * t;
}

double bessel_k(double nu, double x) {
  if (!(x > 0.0)) throw std::domain_error("bessel_k: argument must be positive");
  return std::cyl_bessel_k(std::abs(nu), x);
}

namespace {

// log K_nu(x) that stays finite where K_nu underflows.
double log_bessel_k(double nu, double x) {
  if (x < 600.0) return std::log(bessel_k(nu, x));
  // Hankel expansion: K_nu(x) ~ sqrt(pi/(2x)) e^{-x} sum_k a_k(nu) / x^k.
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= (mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (k * 8.0 * x);
    sum += term;
  }
  return 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x + std::log(sum);
}

}  // namespace

double sample_laplace_scale_mixture(double mu, double sigma, Rng& rng) {
  require_positive_scale(sigma, "sample_laplace_scale_mixture");
  const double e = standard_exponential(rng);
  const double z = standard_normal(rng);
  return mu + sigma * std::sqrt(e) * z;
}

Eigen::MatrixXd psd_root(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  if (es.info() != Eigen::Success) throw std::domain_error("psd_root: eigen decomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol) throw std::domain_error("psd_root: matrix has a negative eigenvalue");
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd sample_mv_normal(const Eigen::MatrixXd& root, Rng& rng) {
  Eigen::VectorXd z(root.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = standard_normal(rng);
  return root * z;
}

MultivariateLaplace::MultivariateLaplace(Eigen::MatrixXd sigma) : sigma_(std::move(sigma)) {
  if (sigma_.rows() < 1 || !is_symmetric(sigma_))
    throw std::domain_error("MultivariateLaplace: Sigma must be square and symmetric");
  root_ = psd_root(sigma_);
}

double MultivariateLaplace::logpdf(const Eigen::VectorXd& t) const {
  const int q = dim();
  if (t.size() != q) throw std::domain_error("MultivariateLaplace::pdf: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("MultivariateLaplace::pdf: Sigma must be positive definite");
  const double quad = llt.matrixL().solve(t).squaredNorm();
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double omega = (2.0 - q) / 2.0;
  if (quad == 0.0) {
    if (q >= 2) return std::numeric_limits<double>::infinity();
    return -0.5 * std::log(2.0) - 0.5 * log_det;  // univariate peak 1/(sqrt(2) sigma)
  }
  const double x = std::sqrt(2.0 * quad);
  return std::log(2.0) - 0.5 * q * std::log(2.0 * std::numbers::pi) - 0.5 * log_det +
         0.5 * omega * std::log(quad / 2.0) + log_bessel_k(omega, x);
}

double MultivariateLaplace::pdf(const Eigen::VectorXd& t) const { return std::exp(logpdf(t)); }

Eigen::VectorXd MultivariateLaplace::sample(Rng& rng) const {
  const double w = standard_exponential(rng);
  return std::sqrt(w) * sample_mv_normal(root_, rng);
}

double mv_laplace_pdf(const Eigen::VectorXd& t, const Eigen::MatrixXd& sigma) {
  return MultivariateLaplace(sigma).pdf(t);
}

Eigen::VectorXd sample_mv_laplace(const Eigen::MatrixXd& sigma, Rng& rng) {
  return MultivariateLaplace(sigma).sample(rng);
}

}  // namespace nlmix
