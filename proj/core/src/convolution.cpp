#include "nlmix/convolution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "nlmix/distributions.hpp"
#include "nlmix/errors.hpp"

namespace nlmix {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
// Below this ratio sigma1/sigma2 the random-effect term is treated as absent.
constexpr double kDegenerateRatio = 1e-12;

bool degenerate(const ConvolutionParams& p) { return p.sigma1 <= kDegenerateRatio * p.sigma2; }

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Normal random effect (scale sn) plus Laplace error (scale sl).
double normal_plus_laplace_logpdf(double y, double sn, double sl) {
  const double u = y / sn;
  const double kappa = std::numbers::sqrt2 * sn / sl;
  return -0.5 * std::log(2.0) - std::log(sl) - kLogSqrt2Pi - 0.5 * u * u +
         log_add_exp(log_mills_ratio(kappa - u), log_mills_ratio(kappa + u));
}

double sinhc(double a) { return a < 1e-4 ? 1.0 + a * a / 6.0 : std::sinh(a) / a; }

}  // namespace

std::string_view to_string(ConvolutionKind kind) {
  switch (kind) {
    case ConvolutionKind::NN: return "NN";
    case ConvolutionKind::NL: return "NL";
    case ConvolutionKind::LN: return "LN";
    case ConvolutionKind::LL: return "LL";
  }
  return "?";
}

ConvolutionKind parse_kind(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "NN") return ConvolutionKind::NN;
  if (up == "NL") return ConvolutionKind::NL;
  if (up == "LN") return ConvolutionKind::LN;
  if (up == "LL") return ConvolutionKind::LL;
  throw std::invalid_argument("unknown convolution kind '" + std::string(name) + "' (expected NN, NL, LN or LL)");
}

void ConvolutionParams::validate() const {
  if (!(sigma1 >= 0.0) || !std::isfinite(sigma1))
    throw std::domain_error("sigma1 must be finite and nonnegative");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
    throw std::domain_error("sigma2 must be finite and positive");
}

double nn_logpdf(double y, const ConvolutionParams& p) {
  p.validate();
  return normal_logpdf(y, 0.0, std::hypot(p.sigma1, p.sigma2));
}

double nl_logpdf(double y, const ConvolutionParams& p) {
  p.validate();
  if (degenerate(p)) return laplace_logpdf(y, 0.0, p.sigma2);
  return normal_plus_laplace_logpdf(y, p.sigma1, p.sigma2);
}

double ln_logpdf(double y, const ConvolutionParams& p) {
  p.validate();
  if (degenerate(p)) return normal_logpdf(y, 0.0, p.sigma2);
  return normal_plus_laplace_logpdf(y, p.sigma2, p.sigma1);
}

double ll_logpdf(double y, const ConvolutionParams& p) {
  p.validate();
  if (degenerate(p)) return laplace_logpdf(y, 0.0, p.sigma2);
  // Rates s_i = sqrt(2)/sigma_i. With sbar = (s1+s2)/2 and d = (s1-s2)/2 the
  // two-branch closed form becomes
  //   f = s1 s2 / (4 sbar) * exp(-sbar r) * (sbar r sinh(d r)/(d r) + cosh(d r)),
  // which is continuous through s1 = s2 and needs no branch switch.
  const double s1 = std::numbers::sqrt2 / p.sigma1;
  const double s2 = std::numbers::sqrt2 / p.sigma2;
  const double sbar = 0.5 * (s1 + s2);
  const double d = 0.5 * std::abs(s1 - s2);
  const double r = std::abs(y);
  const double a = d * r;
  double log_v;
  if (a < 1.0) {
    log_v = std::log(sbar * r * sinhc(a) + std::cosh(a));
  } else {
    const double e = std::exp(-2.0 * a);
    log_v = a + std::log(0.5 * (sbar / d) * -std::expm1(-2.0 * a) + 0.5 * (1.0 + e));
  }
  return std::log(s1 * s2 / (4.0 * sbar)) - sbar * r + log_v;
}

double nn_pdf(double y, const ConvolutionParams& p) { return std::exp(nn_logpdf(y, p)); }
double nl_pdf(double y, const ConvolutionParams& p) { return std::exp(nl_logpdf(y, p)); }
double ln_pdf(double y, const ConvolutionParams& p) { return std::exp(ln_logpdf(y, p)); }
double ll_pdf(double y, const ConvolutionParams& p) { return std::exp(ll_logpdf(y, p)); }

double convolution_logpdf(ConvolutionKind kind, double y, const ConvolutionParams& p) {
  switch (kind) {
    case ConvolutionKind::NN: return nn_logpdf(y, p);
    case ConvolutionKind::NL: return nl_logpdf(y, p);
    case ConvolutionKind::LN: return ln_logpdf(y, p);
    case ConvolutionKind::LL: return ll_logpdf(y, p);
  }
  throw std::invalid_argument("invalid convolution kind");
}

double convolution_pdf(ConvolutionKind kind, double y, const ConvolutionParams& p) {
  return std::exp(convolution_logpdf(kind, y, p));
}

double regression_marginal_logpdf(double y, ConvolutionKind kind, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& z, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& sigma1, double sigma2) {
  if (x.size() != beta.size())
    throw std::domain_error("regression_marginal_pdf: x and beta differ in length");
  if (sigma1.rows() != sigma1.cols() || sigma1.rows() != z.size())
    throw std::domain_error("regression_marginal_pdf: z and Sigma1 dimensions disagree");
  const double var1 = std::max(0.0, z.dot(sigma1 * z));
  return convolution_logpdf(kind, y - x.dot(beta), {std::sqrt(var1), sigma2});
}

double regression_marginal_pdf(double y, ConvolutionKind kind, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& z, const Eigen::VectorXd& beta,
                               const Eigen::MatrixXd& sigma1, double sigma2) {
  return std::exp(regression_marginal_logpdf(y, kind, x, z, beta, sigma1, sigma2));
}

double sample_convolution(ConvolutionKind kind, const ConvolutionParams& p, Rng& rng) {
  p.validate();
  const double first = random_effect_is_laplace(kind)
                           ? p.sigma1 * std::sqrt(standard_exponential(rng)) * standard_normal(rng)
                           : p.sigma1 * standard_normal(rng);
  const double second = error_is_laplace(kind)
                            ? p.sigma2 * std::sqrt(standard_exponential(rng)) * standard_normal(rng)
                            : p.sigma2 * standard_normal(rng);
  return first + second;
}

double integrate_real_line(const Density& f, std::span<const double> breakpoints, double abs_tol) {
  using boost::math::quadrature::gauss_kronrod;
  std::vector<double> pts(breakpoints.begin(), breakpoints.end());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.empty()) pts.push_back(0.0);

  const double inf = std::numeric_limits<double>::infinity();
  // Relative tolerance for each piece; the absolute target is checked below.
  constexpr double rel = 1e-13;
  double total = 0.0;
  double err_total = 0.0;
  auto piece = [&](double a, double b) {
    double err = 0.0;
    total += gauss_kronrod<double, 61>::integrate(f, a, b, 20, rel, &err);
    err_total += err;
  };
  piece(-inf, pts.front());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) piece(pts[i], pts[i + 1]);
  piece(pts.back(), inf);
  if (!(err_total <= abs_tol) && !(err_total <= abs_tol * std::abs(total)))
    throw NumericError("integrate_real_line: error estimate " + std::to_string(err_total) +
                       " exceeds tolerance");
  return total;
}

double numeric_convolution(const Density& f, const Density& g, double y, std::span<const double> kinks_f,
                           std::span<const double> kinks_g, double abs_tol) {
  std::vector<double> pts(kinks_g.begin(), kinks_g.end());
  for (double k : kinks_f) pts.push_back(y - k);  // f(y - u) is kinked at u = y - k
  return integrate_real_line([&](double u) { return f(y - u) * g(u); }, pts, abs_tol);
}

DensityCheck check_density(ConvolutionKind kind, const ConvolutionParams& p) {
  p.validate();
  const double pt[] = {0.0};
  DensityCheck out;
  out.normalization = integrate_real_line([&](double y) { return convolution_pdf(kind, y, p); }, pt, 1e-9);
  out.variance = integrate_real_line([&](double y) { return y * y * convolution_pdf(kind, y, p); }, pt, 1e-8);
  return out;
}

}  // namespace nlmix
