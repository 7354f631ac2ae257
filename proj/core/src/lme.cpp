#include "nlmix/lme.hpp"

#include <cmath>
#include <limits>

#include "gaussian.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/optimize.hpp"

namespace nlmix {

double nn_profile_loglik(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& xi,
                         Eigen::VectorXd* beta_out, double* sigma2_out, Eigen::MatrixXd* cov_out) {
  const bool known = spec.residual == ResidualMode::KnownVariances;
  // In EstimatedScale mode V_i = sigma2^2 * (Z S Z^T + I) with S the scaled
  // covariance; with known variances V_i = Z Sigma1 Z^T + diag(v).
  const Eigen::MatrixXd s = xi_to_scaled(xi, spec.cov);
  const int p = data.p();
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
  factors.reserve(data.clusters.size());
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  double log_det = 0.0;
  for (const auto& c : data.clusters) {
    Eigen::MatrixXd v = c.Z * s * c.Z.transpose();
    v.diagonal() += residual_scale(c, spec.residual);
    factors.emplace_back(v);
    const auto& llt = factors.back();
    if (llt.info() != Eigen::Success) throw NumericError("marginal covariance is not positive definite");
    const Eigen::MatrixXd vx = llt.solve(c.X);
    xtx += c.X.transpose() * vx;
    xty += vx.transpose() * c.y;
    log_det += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  Eigen::LDLT<Eigen::MatrixXd> info(xtx);
  if (info.info() != Eigen::Success) throw NumericError("GLS information matrix is singular");
  const Eigen::VectorXd beta = info.solve(xty);
  double rss = 0.0;
  for (std::size_t i = 0; i < data.clusters.size(); ++i) {
    const Cluster& c = data.clusters[i];
    const Eigen::VectorXd e = c.y - c.X * beta;
    rss += e.dot(factors[i].solve(e));
  }
  const double n = data.num_obs();
  double ll, sigma2;
  if (known) {
    sigma2 = 1.0;
    ll = -0.5 * (n * detail::kLog2Pi + log_det + rss);
  } else {
    const double var = rss / n;
    sigma2 = std::sqrt(var);
    ll = -0.5 * (n * (detail::kLog2Pi + std::log(var) + 1.0) + log_det);
  }
  if (beta_out) *beta_out = beta;
  if (sigma2_out) *sigma2_out = sigma2;
  if (cov_out) *cov_out = sigma2 * sigma2 * info.solve(Eigen::MatrixXd::Identity(p, p));
  return ll;
}

FitResult fit_nn_ml(const ClusteredData& data, const ModelSpec& spec_in, const NnFitOptions& opt) {
  data.check();
  ModelSpec spec = spec_in;
  spec.kind = ConvolutionKind::NN;
  auto objective = [&](const Eigen::VectorXd& xi) {
    try {
      const double ll = nn_profile_loglik(data, spec, xi);
      return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Coarse scan over scaled identities for a start, then simplex and polish.
  double base = 1.0;
  if (spec.residual == ResidualMode::KnownVariances) {
    double sum = 0.0;
    for (const auto& c : data.clusters) sum += c.known_var->mean();
    base = sum / data.num_clusters();
  }
  Eigen::VectorXd best_x;
  double best_f = std::numeric_limits<double>::infinity();
  for (double c : {0.01, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    const Eigen::VectorXd x = scaled_to_xi(c * base * Eigen::MatrixXd::Identity(spec.cov.dim, spec.cov.dim), spec.cov);
    const double f = objective(x);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }
  if (!std::isfinite(best_f)) throw NumericError("NN likelihood is not finite at any starting value");

  NelderMeadOptions nm;
  nm.f_tol = opt.tolerance;
  nm.x_tol = 1e-7;
  const OptimResult simplex = nelder_mead(objective, best_x, nm);
  BfgsOptions bo;
  bo.g_tol = 1e-8;
  OptimResult polished = bfgs(objective, simplex.x, bo);
  const OptimResult& fin = polished.value <= simplex.value ? polished : simplex;

  FitResult fit;
  fit.spec = spec;
  fit.method = "nn-ml";
  fit.theta.xi = fin.x;
  fit.loglik = nn_profile_loglik(data, spec, fin.x, &fit.theta.beta, &fit.theta.sigma2, &fit.cov_beta);
  fit.se_beta = fit.cov_beta.diagonal().cwiseSqrt();
  fit.converged = std::isfinite(fit.loglik) && (simplex.converged || polished.converged);
  fit.iterations = simplex.iterations + polished.iterations;
  fit.loglik_nodes = 0;
  finalize_fit(fit);
  return fit;
}

}  // namespace nlmix
