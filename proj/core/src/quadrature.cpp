#include "nlmix/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "gaussian.hpp"
#include "nlmix/distributions.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/lme.hpp"
#include "nlmix/random.hpp"
#include "parallel.hpp"

namespace nlmix {
namespace {

constexpr double kLogSqrt2 = 0.34657359027997265471;
constexpr double kSqrt2 = 1.41421356237309504880;

// Orthonormal three-term recurrence b_{j+1} p_{j+1} = (x - a_j) p_j - b_j p_{j-1}
// with p_0 = 1 (unit total mass).
struct Recurrence {
  std::function<double(int)> a;
  std::function<double(int)> b;  // b(j) for j >= 1
};

QuadratureRule golub_welsch(int k, const Recurrence& rec) {
  if (k < 1) throw std::domain_error("quadrature needs at least one node");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < k; ++j) jac(j, j) = rec.a(j);
  for (int j = 1; j < k; ++j) jac(j, j - 1) = jac(j - 1, j) = rec.b(j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac, Eigen::EigenvaluesOnly);
  QuadratureRule rule;
  rule.nodes.resize(k);
  rule.weights.resize(k);
  for (int i = 0; i < k; ++i) {
    double x = es.eigenvalues()(i);
    // Newton polish on p_k, then Christoffel weight 1 / sum_j p_j(x)^2.
    for (int it = 0; it < 3; ++it) {
      double p_prev = 0.0, p = 1.0, d_prev = 0.0, d = 0.0;
      for (int j = 0; j < k; ++j) {
        const double bj = j > 0 ? rec.b(j) : 0.0;
        const double p_next = ((x - rec.a(j)) * p - bj * p_prev) / rec.b(j + 1);
        const double d_next = (p + (x - rec.a(j)) * d - bj * d_prev) / rec.b(j + 1);
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
        if (std::abs(p) > 1e100 || std::abs(d) > 1e100) {
          p *= 1e-100;
          p_prev *= 1e-100;
          d *= 1e-100;
          d_prev *= 1e-100;
        }
      }
      if (d == 0.0 || !std::isfinite(p / d)) break;
      const double dx = p / d;
      x -= dx;
      if (std::abs(dx) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    // The p_j grow without bound at far nodes; keep them rescaled and track
    // the scale so the weight underflows to zero instead of becoming NaN.
    double p_prev = 0.0, p = 1.0, sum = 1.0, log_scale = 0.0;
    for (int j = 0; j + 1 < k; ++j) {
      const double bj = j > 0 ? rec.b(j) : 0.0;
      const double p_next = ((x - rec.a(j)) * p - bj * p_prev) / rec.b(j + 1);
      p_prev = p;
      p = p_next;
      sum += p * p;
      if (std::abs(p) > 1e100) {
        p *= 1e-100;
        p_prev *= 1e-100;
        sum *= 1e-200;
        log_scale += 200.0 * std::log(10.0);
      }
    }
    rule.nodes[i] = x;
    rule.weights[i] = std::exp(-std::log(sum) - log_scale);
  }
  return rule;
}

std::shared_ptr<const QuadratureGrid> cached_grid(RuleKind kind, int k, int q) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const QuadratureGrid>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{static_cast<int>(kind), k, q}];
  if (!slot) slot = std::make_shared<const QuadratureGrid>(QuadratureGrid::tensor(kind, k, q));
  return slot;
}

// log of prod_j f(r_j) for every column of r, with f Laplace or normal with
// standard deviation scale(j).
Eigen::ArrayXd error_logdens(const Eigen::ArrayXXd& r, const Eigen::ArrayXd& scale, bool normal) {
  const Eigen::Index n = r.rows();
  const double log_norm_const = normal ? 0.5 * detail::kLog2Pi : kLogSqrt2;
  const double base = -static_cast<double>(n) * log_norm_const - scale.log().sum();
  if (normal) {
    const Eigen::ArrayXd inv = 0.5 / scale.square();
    return base - (r.square().colwise() * inv).colwise().sum().transpose();
  }
  const Eigen::ArrayXd inv = kSqrt2 / scale;
  return base - (r.abs().colwise() * inv).colwise().sum().transpose();
}

struct Engine {
  ConvolutionKind kind;
  ResidualMode residual;
  bool normal_errors;
  Eigen::MatrixXd sigma1;
  Eigen::MatrixXd root;
  double sigma2;
  std::shared_ptr<const QuadratureGrid> hermite;
  std::shared_ptr<const QuadratureRule> laguerre;
  Eigen::ArrayXd log_hermite_w;

  double cluster(const Cluster& c, const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd e = c.y - c.X * beta;
    const Eigen::ArrayXd var = sigma2 * sigma2 * residual_scale(c, residual).array();
    if (kind == ConvolutionKind::LN) {
      const Eigen::MatrixXd s = c.Z * sigma1 * c.Z.transpose();
      std::vector<double> terms(laguerre->nodes.size());
      for (std::size_t m = 0; m < terms.size(); ++m) {
        Eigen::MatrixXd v = laguerre->nodes[m] * s;
        v.diagonal() += var.matrix();
        terms[m] = std::log(laguerre->weights[m]) + detail::gaussian_logpdf(e, v);
      }
      return detail::log_sum_exp(terms);
    }
    const Eigen::ArrayXd scale = var.sqrt();
    const Eigen::ArrayXXd u = ((c.Z * root) * hermite->nodes).array();
    if (kind == ConvolutionKind::NL) {
      const Eigen::ArrayXXd r = (-u).colwise() + e.array();
      const Eigen::ArrayXd t = log_hermite_w + error_logdens(r, scale, normal_errors);
      return detail::log_sum_exp(std::vector<double>(t.begin(), t.end()));
    }
    // LL: Laplace random effect = sqrt(W) * C v with W standard exponential.
    std::vector<double> terms;
    terms.reserve(laguerre->nodes.size() * static_cast<std::size_t>(u.cols()));
    for (std::size_t m = 0; m < laguerre->nodes.size(); ++m) {
      const double f = std::sqrt(laguerre->nodes[m]);
      const double lw = std::log(laguerre->weights[m]);
      const Eigen::ArrayXXd r = (-f * u).colwise() + e.array();
      const Eigen::ArrayXd t = lw + log_hermite_w + error_logdens(r, scale, normal_errors);
      terms.insert(terms.end(), t.begin(), t.end());
    }
    return detail::log_sum_exp(terms);
  }
};

}  // namespace

QuadratureRule gauss_hermite_nodes(int k) {
  return golub_welsch(k, {[](int) { return 0.0; }, [](int j) { return std::sqrt(static_cast<double>(j)); }});
}

QuadratureRule gauss_laguerre_nodes(int k) {
  return golub_welsch(k, {[](int j) { return 2.0 * j + 1.0; }, [](int j) { return static_cast<double>(j); }});
}

QuadratureGrid QuadratureGrid::tensor(RuleKind kind, int k, int q) {
  if (q < 1) throw std::domain_error("quadrature grid needs q >= 1");
  const QuadratureRule rule = kind == RuleKind::GaussHermite ? gauss_hermite_nodes(k) : gauss_laguerre_nodes(k);
  long total = 1;
  for (int d = 0; d < q; ++d) {
    total *= k;
    if (total > 50'000'000) throw std::domain_error("quadrature grid too large; reduce the node count");
  }
  QuadratureGrid g;
  g.kind = kind;
  g.k = k;
  g.q = q;
  g.nodes.resize(q, total);
  g.weights.resize(total);
  for (long idx = 0; idx < total; ++idx) {
    long rest = idx;
    double w = 1.0;
    for (int d = q - 1; d >= 0; --d) {
      const int i = static_cast<int>(rest % k);
      rest /= k;
      g.nodes(d, idx) = rule.nodes[i];
      w *= rule.weights[i];
    }
    g.weights(idx) = w;
  }
  return g;
}

namespace {

std::vector<double> cluster_logliks(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& beta,
                                    const Eigen::MatrixXd& sigma1, double sigma2, int nodes, int threads,
                                    bool normal_errors) {
  if (spec.kind == ConvolutionKind::NN)
    throw UnsupportedError("NN has a closed-form likelihood; quadrature is not used");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw std::domain_error("sigma2 must be positive");
  if (!sigma1.allFinite()) throw NumericError("Sigma1 is not finite");
  const int k = nodes > 0 ? nodes : default_quadrature_nodes(data.q());

  Engine eng{spec.kind, spec.residual, normal_errors, sigma1, {}, sigma2, {}, {}, {}};
  if (spec.kind != ConvolutionKind::LN) {
    eng.root = detail::whitening_root(sigma1);
    eng.hermite = cached_grid(RuleKind::GaussHermite, k, data.q());
    eng.log_hermite_w = eng.hermite->weights.array().log();
  }
  if (random_effect_is_laplace(spec.kind))
    eng.laguerre = std::make_shared<const QuadratureRule>(gauss_laguerre_nodes(k));

  std::vector<double> parts(data.clusters.size());
  detail::parallel_for(parts.size(), threads, [&](std::size_t i) { parts[i] = eng.cluster(data.clusters[i], beta); });
  return parts;
}

void check_integrable(const ModelSpec& spec) {
  if (spec.kind != ConvolutionKind::NL && spec.kind != ConvolutionKind::LL)
    throw UnsupportedError("the integrated-likelihood fitter supports NL and LL models; use the mcem fitter for " +
                           std::string(to_string(spec.kind)));
  if (spec.kind == ConvolutionKind::LL && spec.cov.kind != CovKind::ScaledIdentity &&
      spec.cov.kind != CovKind::Diagonal)
    throw UnsupportedError("LL by quadrature needs uncorrelated random effects (identity or diagonal structure); "
                           "use the mcem fitter for a " + std::string(to_string(spec.cov.kind)) + " covariance");
}

std::vector<double> theta_cluster_logliks(const Theta& theta, const ClusteredData& data, const ModelSpec& spec,
                                          const QuadratureOptions& opt) {
  check_integrable(spec);
  const double s2 = spec.residual == ResidualMode::KnownVariances ? 1.0 : theta.sigma2;
  const Eigen::MatrixXd sigma1 = xi_to_sigma1(theta.xi, spec.cov, s2);
  return cluster_logliks(data, spec, theta.beta, sigma1, s2, opt.nodes, opt.threads, opt.normal_errors);
}

// Outer product of per-cluster scores (central differences). The integrated
// likelihood is kinked at the scale of the node spacing, so its finite
// difference Hessian is dominated by the kinks; first derivatives are not.
std::optional<Eigen::MatrixXd> opg_information(const Eigen::VectorXd& x, const ClusteredData& data,
                                               const ModelSpec& spec, const QuadratureOptions& opt, int p) {
  const auto m = static_cast<Eigen::Index>(data.clusters.size());
  Eigen::MatrixXd scores(m, x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-3 * std::max(std::abs(x(j)), 1.0);
    Eigen::VectorXd up = x, down = x;
    up(j) += h;
    down(j) -= h;
    const auto a = theta_cluster_logliks(unpack_theta(up, spec, p), data, spec, opt);
    const auto b = theta_cluster_logliks(unpack_theta(down, spec, p), data, spec, opt);
    for (Eigen::Index i = 0; i < m; ++i) scores(i, j) = (a[i] - b[i]) / (2 * h);
  }
  if (!scores.allFinite()) return std::nullopt;
  return Eigen::MatrixXd(scores.transpose() * scores);
}

}  // namespace

double marginal_loglik_quadrature(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& sigma1, double sigma2, int nodes, int threads,
                                  bool normal_errors) {
  double total = 0.0;
  for (double v : cluster_logliks(data, spec, beta, sigma1, sigma2, nodes, threads, normal_errors)) total += v;
  return total;
}

double integrated_loglik(const Theta& theta, const ClusteredData& data, const ModelSpec& spec,
                         const QuadratureOptions& opt) {
  double total = 0.0;
  for (double v : theta_cluster_logliks(theta, data, spec, opt)) total += v;
  return total;
}

FitResult fit_quadrature_ml(const ClusteredData& data, const ModelSpec& spec, const QuadratureFitOptions& opt) {
  data.check();
  Theta start;
  if (opt.start) {
    start = *opt.start;
  } else {
    ModelSpec nn = spec;
    nn.kind = ConvolutionKind::NN;
    start = fit_nn_ml(data, nn).theta;
  }
  // Validates the structure before any optimisation work.
  integrated_loglik(start, data, spec, opt.quadrature);

  const int p = data.p();
  auto objective = [&](const Eigen::VectorXd& v) {
    try {
      const double ll = integrated_loglik(unpack_theta(v, spec, p), data, spec, opt.quadrature);
      return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const std::domain_error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const Eigen::VectorXd x0 = pack_theta(start, spec);
  OptimResult best = nelder_mead(objective, x0, opt.nelder_mead);
  int total_iter = best.iterations;
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng = make_stream(opt.seed, {static_cast<std::uint64_t>(r)});
    Eigen::VectorXd x = best.x;
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += opt.restart_scale * standard_normal(rng);
    OptimResult cand = nelder_mead(objective, x, opt.nelder_mead);
    total_iter += cand.iterations;
    if (cand.value < best.value) best = cand;
  }
  OptimResult polish = bfgs(objective, best.x, opt.bfgs);
  total_iter += polish.iterations;
  const bool converged = std::isfinite(polish.value) && (polish.converged || best.converged);
  if (polish.value <= best.value) best = polish;

  FitResult fit;
  fit.spec = spec;
  fit.theta = unpack_theta(best.x, spec, p);
  fit.converged = converged;
  fit.iterations = total_iter;
  fit.method = "quadrature";
  fit.loglik = -best.value;
  fit.loglik_nodes = opt.quadrature.nodes > 0 ? opt.quadrature.nodes : default_quadrature_nodes(data.q());
  fit.se_beta = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  fit.cov_beta = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
  if (opt.compute_se) {
    const auto info = opg_information(best.x, data, spec, opt.quadrature, p);
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (info) llt.compute(*info);
    if (info && llt.info() == Eigen::Success) {
      const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(info->rows(), info->cols()));
      fit.cov_beta = cov.topLeftCorner(p, p);
      fit.se_beta = fit.cov_beta.diagonal().cwiseSqrt();
    } else {
      fit.notes.push_back("score outer product is singular; standard errors unavailable");
    }
  }
  if (!converged) fit.notes.push_back("optimizer did not meet its tolerance; best point returned");
  finalize_fit(fit);
  return fit;
}

}  // namespace nlmix
