#include "nlmix/fit_result.hpp"

#include <cmath>

#include "nlmix/errors.hpp"

namespace nlmix {

Eigen::VectorXd pack_theta(const Theta& t, const ModelSpec& spec) {
  const bool scale = spec.residual == ResidualMode::EstimatedScale;
  Eigen::VectorXd v(t.beta.size() + t.xi.size() + (scale ? 1 : 0));
  v << t.beta, t.xi;
  if (scale) v(v.size() - 1) = std::log(t.sigma2);
  return v;
}

Theta unpack_theta(const Eigen::VectorXd& v, const ModelSpec& spec, int p) {
  const int m = spec.cov.param_count();
  const bool scale = spec.residual == ResidualMode::EstimatedScale;
  if (v.size() != p + m + (scale ? 1 : 0)) throw std::domain_error("parameter vector has the wrong length");
  Theta t;
  t.beta = v.head(p);
  t.xi = v.segment(p, m);
  t.sigma2 = scale ? std::exp(v(p + m)) : 1.0;
  return t;
}

std::vector<std::string> theta_names(const ClusteredData& data, const ModelSpec& spec) {
  std::vector<std::string> names = data.fixed_names;
  for (int i = 0; i < spec.cov.param_count(); ++i) names.push_back(xi_name(i));
  if (spec.residual == ResidualMode::EstimatedScale) names.push_back("log_sigma2");
  return names;
}

void finalize_fit(FitResult& fit) {
  if (fit.spec.residual == ResidualMode::KnownVariances) fit.theta.sigma2 = 1.0;
  if (!(fit.theta.sigma2 > 0.0) || !std::isfinite(fit.theta.sigma2))
    throw NumericError("fitted sigma2 is not a positive finite number");
  fit.sigma1 = fit.theta.sigma1(fit.spec.cov);
  if (!fit.sigma1.allFinite()) throw NumericError("fitted Sigma1 is not finite");
}

}  // namespace nlmix
