#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "nlmix/random.hpp"

namespace nlmix {

/// The four cells of the normal/Laplace scheme. The first letter names the
/// law of the random effect, the second the law of the error term.
enum class ConvolutionKind { NN, NL, LN, LL };

std::string_view to_string(ConvolutionKind kind);
/// Case-insensitive; throws std::invalid_argument on unknown names.
ConvolutionKind parse_kind(std::string_view name);

constexpr bool random_effect_is_laplace(ConvolutionKind k) {
  return k == ConvolutionKind::LN || k == ConvolutionKind::LL;
}
constexpr bool error_is_laplace(ConvolutionKind k) {
  return k == ConvolutionKind::NL || k == ConvolutionKind::LL;
}

/// Scales of the two summands: sigma1 for the random effect (may be 0),
/// sigma2 for the error (> 0). Both laws are in the sd convention, so
/// var(Y) = sigma1^2 + sigma2^2 for every kind.
struct ConvolutionParams {
  double sigma1 = 1.0;
  double sigma2 = 1.0;

  /// Throws std::domain_error when sigma1 < 0 or sigma2 <= 0.
  void validate() const;
};

double nn_pdf(double y, const ConvolutionParams& p);
double nl_pdf(double y, const ConvolutionParams& p);
double ln_pdf(double y, const ConvolutionParams& p);
double ll_pdf(double y, const ConvolutionParams& p);

double nn_logpdf(double y, const ConvolutionParams& p);
double nl_logpdf(double y, const ConvolutionParams& p);
double ln_logpdf(double y, const ConvolutionParams& p);
double ll_logpdf(double y, const ConvolutionParams& p);

double convolution_pdf(ConvolutionKind kind, double y, const ConvolutionParams& p);
double convolution_logpdf(ConvolutionKind kind, double y, const ConvolutionParams& p);

/// Marginal density of y = x'beta + z'e1 + e2 where e1 has covariance Sigma1
/// (normal or multivariate Laplace) and e2 has scale sigma2. Throws
/// std::domain_error on dimension mismatch.
double regression_marginal_pdf(double y, ConvolutionKind kind, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& z, const Eigen::VectorXd& beta,
                               const Eigen::MatrixXd& sigma1, double sigma2);
double regression_marginal_logpdf(double y, ConvolutionKind kind, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& z, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& sigma1, double sigma2);

double sample_convolution(ConvolutionKind kind, const ConvolutionParams& p, Rng& rng);

using Density = std::function<double(double)>;

/// Brute-force convolution integral  int f(y - u) g(u) du  by adaptive
/// Gauss-Kronrod quadrature. `kinks_f` / `kinks_g` list points where f or g
/// is not smooth; the integration range is split there. Throws NumericError
/// if the error estimate exceeds `abs_tol`.
double numeric_convolution(const Density& f, const Density& g, double y,
                           std::span<const double> kinks_f = {}, std::span<const double> kinks_g = {},
                           double abs_tol = 1e-9);

/// Integral of a density over the real line with optional breakpoints.
double integrate_real_line(const Density& f, std::span<const double> breakpoints = {},
                           double abs_tol = 1e-11);

struct DensityCheck {
  double normalization = 0.0;
  double variance = 0.0;
};

/// Normalization and variance of a convolution density by quadrature.
DensityCheck check_density(ConvolutionKind kind, const ConvolutionParams& p);

}  // namespace nlmix
