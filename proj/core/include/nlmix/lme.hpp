#pragma once

#include "nlmix/data.hpp"
#include "nlmix/fit_result.hpp"

namespace nlmix {

struct NnFitOptions {
  int threads = 1;
  double tolerance = 1e-10;
};

/// Profiled log-likelihood of the normal-normal model at xi: beta by GLS and,
/// in EstimatedScale mode, sigma2^2 = RSS / N. Returns the maximising beta and
/// sigma2 through the optional outputs.
double nn_profile_loglik(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& xi,
                         Eigen::VectorXd* beta = nullptr, double* sigma2 = nullptr,
                         Eigen::MatrixXd* cov_beta = nullptr);

/// Exact maximum likelihood for the NN linear mixed model. spec.kind is
/// ignored. Also the source of starting values for the other fitters.
FitResult fit_nn_ml(const ClusteredData& data, const ModelSpec& spec, const NnFitOptions& opt = {});

}  // namespace nlmix
