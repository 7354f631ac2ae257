#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/data.hpp"
#include "nlmix/fit_result.hpp"
#include "nlmix/optimize.hpp"

namespace nlmix {

/// One-dimensional rule: sum_k weights[k] f(nodes[k]).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Probabilists' Gauss-Hermite: integral of f(v) phi(v) dv.
QuadratureRule gauss_hermite_nodes(int k);
/// Gauss-Laguerre: integral over (0, inf) of f(u) exp(-u) du.
QuadratureRule gauss_laguerre_nodes(int k);

enum class RuleKind { GaussHermite, GaussLaguerre };

/// Tensor product of a 1-D rule over q dimensions. Column j of `nodes` is the
/// j-th multi-index node; weights are products of the 1-D weights.
struct QuadratureGrid {
  RuleKind kind = RuleKind::GaussHermite;
  int k = 0;
  int q = 0;
  Eigen::MatrixXd nodes;
  Eigen::VectorXd weights;

  static QuadratureGrid tensor(RuleKind kind, int k, int q);
};

struct QuadratureOptions {
  int nodes = 0;  // per dimension; 0 means default_quadrature_nodes(q)
  int threads = 1;
  /// Test hook: replace the Laplace error density by a normal one with the
  /// same variance. With kind NL this integrates the NN model.
  bool normal_errors = false;
};

/// Numerically integrated log-likelihood for NL (any covariance structure) or
/// LL (ScaledIdentity or Diagonal). Other combinations throw UnsupportedError.
double integrated_loglik(const Theta& theta, const ClusteredData& data, const ModelSpec& spec,
                         const QuadratureOptions& opt = {});

/// Quadrature marginal log-likelihood for NL, LN or LL with any Sigma1.
/// NL integrates the whitened normal random effect by Gauss-Hermite, LN
/// integrates the exponential mixing variable by Gauss-Laguerre with a closed
/// form normal inside, and LL uses both.
double marginal_loglik_quadrature(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& sigma1, double sigma2, int nodes, int threads = 1,
                                  bool normal_errors = false);

struct QuadratureFitOptions {
  QuadratureOptions quadrature;
  NelderMeadOptions nelder_mead;
  BfgsOptions bfgs;
  int restarts = 2;
  double restart_scale = 0.3;
  std::uint64_t seed = 1;
  bool compute_se = true;
  /// Starting point; an NN fit is used when empty.
  std::optional<Theta> start;
};

/// Maximises integrated_loglik over (beta, xi, log sigma2). Standard errors
/// come from the outer product of per-cluster scores at the optimum.
FitResult fit_quadrature_ml(const ClusteredData& data, const ModelSpec& spec, const QuadratureFitOptions& opt = {});

}  // namespace nlmix
