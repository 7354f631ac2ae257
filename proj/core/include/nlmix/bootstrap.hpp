#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/data.hpp"
#include "nlmix/fit_result.hpp"

namespace nlmix {

/// Refits one resampled data set. The seed is derived per replicate so
/// stochastic fitters stay reproducible.
using Fitter = std::function<FitResult(const ClusteredData&, std::uint64_t seed)>;

struct BootstrapResult {
  std::vector<std::string> names;  // beta..., xi..., sigma2 (when estimated)
  Eigen::VectorXd se;
  Eigen::MatrixXd estimates;  // one row per used replicate
  int requested = 0;
  int used = 0;
  int dropped = 0;
};

/// Block bootstrap over clusters. Clusters are first sorted by id, so the
/// result does not depend on input order. Replicates that throw or do not
/// converge are dropped; more than 20% dropped is an error.
BootstrapResult block_bootstrap_se(const ClusteredData& data, const ModelSpec& spec, const Fitter& fitter, int b,
                                   std::uint64_t seed, int threads = 1);

/// Parameter vector used by the bootstrap: beta, xi, then sigma2.
Eigen::VectorXd bootstrap_parameters(const FitResult& fit);

}  // namespace nlmix
