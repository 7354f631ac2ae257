#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/data.hpp"
#include "nlmix/fit_result.hpp"
#include "nlmix/random.hpp"

namespace nlmix {

/// Latent exponential scales of one cluster. `re` scales the random effect
/// (LN, LL); `err` holds one scale per observation (NL, LL). Unused parts
/// are 1 and empty respectively.
struct LatentW {
  double re = 1.0;
  Eigen::VectorXd err;
};

/// Layout for a cluster of size n with every active scale set to 1.
LatentW unit_latent(ConvolutionKind kind, int n);
bool latent_matches(ConvolutionKind kind, int n, const LatentW& w);
/// log h(w): sum of -w over the active components.
double latent_log_prior(ConvolutionKind kind, const LatentW& w);

/// Psi = a Z S Z^T + diag(b * r): (a, b) = (1, w) for NL, (w, 1) for LN,
/// (w1, w2) for LL and (1, 1) for NN. S is the scaled covariance
/// Sigma1 / sigma2^2 and r the residual-variance multipliers.
Eigen::MatrixXd build_psi(ConvolutionKind kind, const LatentW& w, const Eigen::MatrixXd& z,
                          const Eigen::MatrixXd& scaled, const Eigen::VectorXd& r);
/// Omega = sigma2^2 Psi.
Eigen::MatrixXd build_omega(ConvolutionKind kind, const LatentW& w, const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& scaled, const Eigen::VectorXd& r, double sigma2);

/// log g(y_i | w_i) + log h(w_i), with g multivariate normal N(X beta, Omega).
double complete_loglik(const Theta& theta, const Cluster& c, const LatentW& w, const ModelSpec& spec);

/// Draws per cluster: draws[i][k].
using Draws = std::vector<std::vector<LatentW>>;

struct SamplerSettings {
  int burn_in = 10;
  int thin = 1;
  double width = 1.5;  // slice width on log w
  int max_step_out = 20;
  int max_init_attempts = 10;
  /// Test hook: drop the likelihood so the chain targets the prior.
  bool prior_only = false;
};

/// Component-wise slice sampling of w | y on log scale. `state` is the chain
/// start on entry (unit scales when empty) and the final state on exit.
std::vector<LatentW> sample_w_conditional(const Cluster& c, const Theta& theta, const ModelSpec& spec, int count,
                                          Rng& rng, const SamplerSettings& settings = {},
                                          LatentW* state = nullptr);

/// (1/K) sum_k sum_i complete_loglik. Draw counts may differ per cluster.
double q_function(const Theta& theta, const Draws& draws, const ClusteredData& data, const ModelSpec& spec,
                  bool include_prior = true);

struct GlsResult {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;  // sqrt of the pooled quadratic form / N
};

/// GLS update for given Psi matrices psi[i][k], weights 1/K per draw.
GlsResult gls_step(const ClusteredData& data, const std::vector<std::vector<Eigen::MatrixXd>>& psi,
                   ResidualMode residual = ResidualMode::EstimatedScale);

struct MStepOptions {
  double g_tol = 1e-7;
  int max_iterations = 100;
};

struct MStepResult {
  Theta theta;
  double q_before = 0.0;  // without the constant log h(w) terms
  double q_after = 0.0;
  bool ok = true;
  Eigen::MatrixXd info;  // average GLS information at the returned theta
};

/// Maximises Q over theta at fixed draws: beta and sigma2 in closed form for
/// each xi, xi by quasi-Newton warm-started at current.xi.
MStepResult m_step(const Draws& draws, const ClusteredData& data, const ModelSpec& spec, const Theta& current,
                   const MStepOptions& opt = {});

enum class ConvergenceRule { QChange, ParamChange, Either };

struct MCEMConfig {
  /// K_t = min(k_growth * t, k_max) unless k_fixed > 0.
  int k_growth = 20;
  int k_max = 500;
  int k_fixed = 0;
  int max_iter = 100;
  int min_iter = 10;
  double tolerance = 5e-4;
  ConvergenceRule rule = ConvergenceRule::Either;
  std::uint64_t seed = 1;
  SamplerSettings sampler;
  MStepOptions mstep;
  int threads = 1;
  int loglik_nodes = 0;  // 0: default_quadrature_nodes(q)
  std::ostream* log = nullptr;

  int draws_at(int iteration) const;
};

/// Monte Carlo EM for NL, LN and LL. Starts from the NN fit unless `start`
/// is given.
FitResult fit_mcem(const ClusteredData& data, const ModelSpec& spec, const MCEMConfig& config = {},
                   const std::optional<Theta>& start = std::nullopt);

std::string_view to_string(ConvergenceRule rule);
ConvergenceRule parse_convergence_rule(std::string_view name);

}  // namespace nlmix
