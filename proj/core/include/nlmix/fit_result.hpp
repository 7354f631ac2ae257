#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/data.hpp"

namespace nlmix {

/// Model parameters: fixed effects, the unrestricted covariance vector xi of
/// the scaled random-effect covariance Sigma1 / sigma2^2, and the error scale.
/// In KnownVariances mode sigma2 is fixed at 1 and xi describes Sigma1 itself.
struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd xi;
  double sigma2 = 1.0;

  Eigen::MatrixXd sigma1(const CovStructure& s) const { return xi_to_sigma1(xi, s, sigma2); }
};

struct FitResult {
  ModelSpec spec;
  Theta theta;
  Eigen::MatrixXd sigma1;
  double loglik = 0.0;
  int loglik_nodes = 0;  // 0 when the log-likelihood is exact (NN)
  Eigen::VectorXd se_beta;
  Eigen::MatrixXd cov_beta;
  bool converged = false;
  int iterations = 0;
  std::string method;
  std::vector<std::string> notes;
};

/// Packs (beta, xi, log sigma2) into one vector; log sigma2 is omitted in
/// KnownVariances mode.
Eigen::VectorXd pack_theta(const Theta& t, const ModelSpec& spec);
Theta unpack_theta(const Eigen::VectorXd& v, const ModelSpec& spec, int p);

/// Names matching pack_theta order: beta names, xi1..xim, log_sigma2.
std::vector<std::string> theta_names(const ClusteredData& data, const ModelSpec& spec);

/// Fills sigma1 and checks the FitResult invariants.
void finalize_fit(FitResult& fit);

}  // namespace nlmix
