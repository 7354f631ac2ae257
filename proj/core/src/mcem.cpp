#include "nlmix/mcem.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "gaussian.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/lme.hpp"
#include "nlmix/optimize.hpp"
#include "parallel.hpp"

namespace nlmix {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool has_re_scale(ConvolutionKind k) { return random_effect_is_laplace(k); }
bool has_err_scale(ConvolutionKind k) { return error_is_laplace(k); }

double residual_var(const Theta& t, const ModelSpec& spec) {
  return spec.residual == ResidualMode::KnownVariances ? 1.0 : t.sigma2 * t.sigma2;
}

std::string describe(const LatentW& w, const Theta& t) {
  std::ostringstream os;
  os << "w.re=" << w.re << " w.err=[" << w.err.transpose() << "] beta=[" << t.beta.transpose() << "] xi=["
     << t.xi.transpose() << "] sigma2=" << t.sigma2;
  return os.str();
}

// Unnormalised log density of u = log w for one cluster, with O(1) or O(n)
// evaluation of single-coordinate moves.
class ClusterTarget {
 public:
  ClusterTarget(const Cluster& c, const Theta& theta, const ModelSpec& spec, bool prior_only)
      : kind_(spec.kind), prior_only_(prior_only) {
    e_ = c.y - c.X * theta.beta;
    s_ = c.Z * xi_to_scaled(theta.xi, spec.cov) * c.Z.transpose();
    r_ = residual_scale(c, spec.residual);
    inv_var_ = 1.0 / residual_var(theta, spec);
  }

  double full(const LatentW& w) const {
    double prior = 0.0;
    if (has_re_scale(kind_)) prior += std::log(w.re) - w.re;
    if (has_err_scale(kind_))
      for (Eigen::Index j = 0; j < w.err.size(); ++j) prior += std::log(w.err(j)) - w.err(j);
    if (prior_only_) return prior;
    const Eigen::MatrixXd psi = psi_of(w);
    Eigen::LLT<Eigen::MatrixXd> llt(psi);
    if (llt.info() != Eigen::Success) return kNegInf;
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double quad = llt.matrixL().solve(e_).squaredNorm();
    return prior - 0.5 * log_det - 0.5 * inv_var_ * quad;
  }

  // Random-effect scale: Psi(a) = a S + D, diagonalised once per sweep.
  void prepare_re(const LatentW& w) {
    const Eigen::VectorXd d = diag_of(w);
    const Eigen::VectorXd dm = d.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd t = dm.asDiagonal() * s_ * dm.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    lambda_ = es.eigenvalues().cwiseMax(0.0);
    et2_ = (es.eigenvectors().transpose() * dm.cwiseProduct(e_)).array().square().matrix();
  }
  double re_logf(double u) const {
    const double a = std::exp(u);
    double v = u - a;
    if (prior_only_) return v;
    for (Eigen::Index k = 0; k < lambda_.size(); ++k) {
      const double f = 1.0 + a * lambda_(k);
      v -= 0.5 * (std::log(f) + inv_var_ * et2_(k) / f);
    }
    return v;
  }

  // Error scales: rank-one updates of P = Psi^{-1}.
  void prepare_err(const LatentW& w) {
    const Eigen::MatrixXd psi = psi_of(w);
    Eigen::LLT<Eigen::MatrixXd> llt(psi);
    if (llt.info() != Eigen::Success) throw NumericError("Psi is not positive definite during sampling");
    p_ = llt.solve(Eigen::MatrixXd::Identity(psi.rows(), psi.cols()));
    alpha_ = p_ * e_;
  }
  double err_logf(int j, double b_old, double u) const {
    const double b = std::exp(u);
    double v = u - b;
    if (prior_only_) return v;
    const double delta = (b - b_old) * r_(j);
    const double denom = 1.0 + delta * p_(j, j);
    if (!(denom > 0.0)) return kNegInf;
    return v - 0.5 * std::log(denom) + 0.5 * inv_var_ * delta * alpha_(j) * alpha_(j) / denom;
  }
  void accept_err(int j, double b_old, double b_new) {
    const double delta = (b_new - b_old) * r_(j);
    const double denom = 1.0 + delta * p_(j, j);
    const Eigen::VectorXd col = p_.col(j);
    const double aj = alpha_(j);
    p_.noalias() -= (delta / denom) * col * col.transpose();
    alpha_ -= (delta * aj / denom) * col;
  }

 private:
  Eigen::MatrixXd psi_of(const LatentW& w) const {
    Eigen::MatrixXd psi = (has_re_scale(kind_) ? w.re : 1.0) * s_;
    psi.diagonal() += diag_of(w);
    return psi;
  }
  Eigen::VectorXd diag_of(const LatentW& w) const {
    return has_err_scale(kind_) ? Eigen::VectorXd(w.err.cwiseProduct(r_)) : r_;
  }

  ConvolutionKind kind_;
  bool prior_only_;
  Eigen::VectorXd e_, r_;
  Eigen::MatrixXd s_;
  double inv_var_ = 1.0;
  Eigen::VectorXd lambda_, et2_;
  Eigen::MatrixXd p_;
  Eigen::VectorXd alpha_;
};

// Univariate slice sampling with stepping out and shrinkage (Neal 2003).
template <class F>
double slice_step(double x0, double f0, const F& logf, Rng& rng, double width, int max_steps) {
  const double level = f0 - standard_exponential(rng);
  double lo = x0 - width * open_uniform(rng);
  double hi = lo + width;
  int j = static_cast<int>(std::floor(max_steps * open_uniform(rng)));
  int k = max_steps - 1 - j;
  while (j-- > 0 && logf(lo) > level) lo -= width;
  while (k-- > 0 && logf(hi) > level) hi += width;
  for (int it = 0; it < 200; ++it) {
    const double x1 = lo + (hi - lo) * open_uniform(rng);
    if (logf(x1) > level) return x1;
    if (x1 < x0) lo = x1;
    else hi = x1;
  }
  return x0;
}

// Per-draw sufficient statistics with D = diag(b * r):
// G = Z'D^-1 Z, H = Z'D^-1 X, g = Z'D^-1 y, A = X'D^-1 X, c = X'D^-1 y.
class DrawStats {
 public:
  DrawStats(const ClusteredData& data, const Draws& draws, const ModelSpec& spec)
      : p_(data.p()), q_(data.q()), n_total_(data.num_obs()), residual_(spec.residual) {
    if (draws.size() != data.clusters.size()) throw std::domain_error("draws do not match the clusters");
    stride_ = q_ * q_ + q_ * p_ + q_ + p_ * p_ + p_ + 3;
    std::size_t total = 0;
    for (const auto& d : draws) total += d.size();
    buf_.reserve(total * stride_);
    for (std::size_t i = 0; i < draws.size(); ++i) {
      const Cluster& c = data.clusters[i];
      if (draws[i].empty()) throw std::domain_error("every cluster needs at least one draw");
      const double weight = 1.0 / static_cast<double>(draws[i].size());
      const Eigen::VectorXd r = residual_scale(c, spec.residual);
      for (const auto& w : draws[i]) {
        if (!latent_matches(spec.kind, c.size(), w)) throw std::domain_error("latent layout does not match the model");
        const Eigen::VectorXd d = has_err_scale(spec.kind) ? Eigen::VectorXd(w.err.cwiseProduct(r)) : r;
        const Eigen::VectorXd di = d.cwiseInverse();
        const Eigen::MatrixXd zd = c.Z.transpose() * di.asDiagonal();
        const Eigen::MatrixXd xd = c.X.transpose() * di.asDiagonal();
        const std::size_t off = buf_.size();
        buf_.resize(off + stride_);
        double* ptr = buf_.data() + off;
        ptr[0] = weight;
        ptr[1] = has_re_scale(spec.kind) ? w.re : 1.0;
        ptr[2] = d.array().log().sum();
        ptr += 3;
        auto put = [&](const Eigen::MatrixXd& m) {
          Eigen::Map<Eigen::MatrixXd>(ptr, m.rows(), m.cols()) = m;
          ptr += m.size();
        };
        put(zd * c.Z);
        put(zd * c.X);
        put(zd * c.y);
        put(xd * c.X);
        put(xd * c.y);
        yy_.push_back(c.y.dot(di.cwiseProduct(c.y)));
      }
    }
  }

  struct Totals {
    Eigen::MatrixXd info;  // sum_i (1/K_i) sum_k X'Psi^-1 X
    Eigen::VectorXd score;
    double ypy = 0.0;
    double log_det = 0.0;
    bool ok = true;
  };

  Totals totals(const Eigen::MatrixXd& scaled) const {
    Totals t;
    t.info = Eigen::MatrixXd::Zero(p_, p_);
    t.score = Eigen::VectorXd::Zero(p_);
    const Eigen::MatrixXd l = detail::whitening_root(scaled);
    Eigen::MatrixXd b(q_, q_), lh(q_, p_), rhs(q_, p_ + 1), sol(q_, p_ + 1);
    Eigen::VectorXd lg(q_);
    Eigen::LLT<Eigen::MatrixXd> llt(q_);
    const std::size_t count = yy_.size();
    for (std::size_t k = 0; k < count; ++k) {
      const double* ptr = buf_.data() + k * stride_;
      const double weight = ptr[0], a = ptr[1], log_det_d = ptr[2];
      ptr += 3;
      Eigen::Map<const Eigen::MatrixXd> g(ptr, q_, q_);
      ptr += q_ * q_;
      Eigen::Map<const Eigen::MatrixXd> h(ptr, q_, p_);
      ptr += q_ * p_;
      Eigen::Map<const Eigen::VectorXd> gy(ptr, q_);
      ptr += q_;
      Eigen::Map<const Eigen::MatrixXd> xx(ptr, p_, p_);
      ptr += p_ * p_;
      Eigen::Map<const Eigen::VectorXd> xy(ptr, p_);

      b.noalias() = a * (l.transpose() * g * l);
      b.diagonal().array() += 1.0;
      llt.compute(b);
      if (llt.info() != Eigen::Success) {
        t.ok = false;
        return t;
      }
      lh.noalias() = l.transpose() * h;
      lg.noalias() = l.transpose() * gy;
      rhs.leftCols(p_) = lh;
      rhs.col(p_) = lg;
      sol = llt.solve(rhs);
      t.info.noalias() += weight * (xx - a * lh.transpose() * sol.leftCols(p_));
      t.score.noalias() += weight * (xy - a * lh.transpose() * sol.col(p_));
      t.ypy += weight * (yy_[k] - a * lg.dot(sol.col(p_)));
      t.log_det += weight * (log_det_d + 2.0 * llt.matrixLLT().diagonal().array().log().sum());
    }
    return t;
  }

  // Q without the log h(w) terms at the given theta.
  double q_value(const Theta& theta, const Totals& t) const {
    const double var = residual_ == ResidualMode::KnownVariances ? 1.0 : theta.sigma2 * theta.sigma2;
    const double rss = t.ypy - 2.0 * theta.beta.dot(t.score) + theta.beta.dot(t.info * theta.beta);
    return -0.5 * n_total_ * (detail::kLog2Pi + std::log(var)) - 0.5 * t.log_det - 0.5 * rss / var;
  }

  // Closed-form beta and sigma2 for fixed xi; returns the profiled Q.
  double profile(const Eigen::VectorXd& xi, const CovStructure& cov, Theta* out, Totals* totals_out = nullptr) const {
    const Totals t = totals(xi_to_scaled(xi, cov));
    if (!t.ok) return kNegInf;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(t.info);
    if (ldlt.info() != Eigen::Success) return kNegInf;
    Theta th;
    th.xi = xi;
    th.beta = ldlt.solve(t.score);
    if (residual_ == ResidualMode::KnownVariances) {
      th.sigma2 = 1.0;
    } else {
      const double rss = t.ypy - th.beta.dot(t.score);
      if (!(rss > 0.0)) return kNegInf;
      th.sigma2 = std::sqrt(rss / n_total_);
    }
    if (out) *out = th;
    if (totals_out) *totals_out = t;
    return q_value(th, t);
  }

 private:
  int p_, q_, n_total_;
  ResidualMode residual_;
  std::size_t stride_ = 0;
  std::vector<double> buf_;
  std::vector<double> yy_;
};

}  // namespace

LatentW unit_latent(ConvolutionKind kind, int n) {
  LatentW w;
  if (has_err_scale(kind)) w.err = Eigen::VectorXd::Ones(n);
  return w;
}

bool latent_matches(ConvolutionKind kind, int n, const LatentW& w) {
  if (has_err_scale(kind) ? w.err.size() != n : w.err.size() != 0) return false;
  if (has_re_scale(kind) && !(w.re > 0.0)) return false;
  return !has_err_scale(kind) || (w.err.array() > 0.0).all();
}

double latent_log_prior(ConvolutionKind kind, const LatentW& w) {
  double v = 0.0;
  if (has_re_scale(kind)) v -= w.re;
  if (has_err_scale(kind)) v -= w.err.sum();
  return v;
}

Eigen::MatrixXd build_psi(ConvolutionKind kind, const LatentW& w, const Eigen::MatrixXd& z,
                          const Eigen::MatrixXd& scaled, const Eigen::VectorXd& r) {
  const int n = static_cast<int>(z.rows());
  if (!latent_matches(kind, n, w)) throw std::domain_error("latent scales do not match the " + std::string(to_string(kind)) + " layout");
  if (r.size() != n || scaled.rows() != z.cols()) throw std::domain_error("build_psi: dimension mismatch");
  const double a = has_re_scale(kind) ? w.re : 1.0;
  Eigen::MatrixXd psi = a * (z * scaled * z.transpose());
  if (has_err_scale(kind)) psi.diagonal() += w.err.cwiseProduct(r);
  else psi.diagonal() += r;
  return psi;
}

Eigen::MatrixXd build_omega(ConvolutionKind kind, const LatentW& w, const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& scaled, const Eigen::VectorXd& r, double sigma2) {
  return sigma2 * sigma2 * build_psi(kind, w, z, scaled, r);
}

double complete_loglik(const Theta& theta, const Cluster& c, const LatentW& w, const ModelSpec& spec) {
  const double var = residual_var(theta, spec);
  const Eigen::MatrixXd omega =
      var * build_psi(spec.kind, w, c.Z, xi_to_scaled(theta.xi, spec.cov), residual_scale(c, spec.residual));
  try {
    return detail::gaussian_logpdf(c.y - c.X * theta.beta, omega) + latent_log_prior(spec.kind, w);
  } catch (const NumericError&) {
    throw NumericError("Omega is not positive definite for cluster '" + c.id + "': " + describe(w, theta));
  }
}

std::vector<LatentW> sample_w_conditional(const Cluster& c, const Theta& theta, const ModelSpec& spec, int count,
                                          Rng& rng, const SamplerSettings& settings, LatentW* state) {
  if (count < 1) throw std::domain_error("sample count must be at least 1");
  if (spec.kind == ConvolutionKind::NN) throw UnsupportedError("the NN model has no latent scales");
  ClusterTarget target(c, theta, spec, settings.prior_only);
  const int n = c.size();
  LatentW w = state && latent_matches(spec.kind, n, *state) ? *state : unit_latent(spec.kind, n);
  int attempts = 0;
  while (!std::isfinite(target.full(w))) {
    if (++attempts > settings.max_init_attempts)
      throw NumericError("could not initialise the w sampler for cluster '" + c.id + "'");
    w = unit_latent(spec.kind, n);
    if (has_re_scale(spec.kind)) w.re = standard_exponential(rng);
    for (int j = 0; j < w.err.size(); ++j) w.err(j) = standard_exponential(rng);
  }

  auto sweep = [&] {
    if (has_re_scale(spec.kind)) {
      target.prepare_re(w);
      auto f = [&](double u) { return target.re_logf(u); };
      const double u0 = std::log(w.re);
      w.re = std::exp(slice_step(u0, f(u0), f, rng, settings.width, settings.max_step_out));
    }
    if (has_err_scale(spec.kind)) {
      target.prepare_err(w);
      for (int j = 0; j < n; ++j) {
        const double b_old = w.err(j);
        auto f = [&](double u) { return target.err_logf(j, b_old, u); };
        const double u0 = std::log(b_old);
        const double b_new = std::exp(slice_step(u0, f(u0), f, rng, settings.width, settings.max_step_out));
        if (b_new != b_old) {
          target.accept_err(j, b_old, b_new);
          w.err(j) = b_new;
        }
      }
    }
  };

  for (int s = 0; s < settings.burn_in; ++s) sweep();
  std::vector<LatentW> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    for (int s = 0; s < std::max(1, settings.thin); ++s) sweep();
    out.push_back(w);
  }
  if (state) *state = w;
  return out;
}

double q_function(const Theta& theta, const Draws& draws, const ClusteredData& data, const ModelSpec& spec,
                  bool include_prior) {
  if (draws.size() != data.clusters.size()) throw std::domain_error("draws do not match the clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    if (draws[i].empty()) throw std::domain_error("every cluster needs at least one draw");
    double s = 0.0;
    for (const auto& w : draws[i]) {
      s += complete_loglik(theta, data.clusters[i], w, spec);
      if (!include_prior) s -= latent_log_prior(spec.kind, w);
    }
    total += s / static_cast<double>(draws[i].size());
  }
  return total;
}

GlsResult gls_step(const ClusteredData& data, const std::vector<std::vector<Eigen::MatrixXd>>& psi,
                   ResidualMode residual) {
  if (psi.size() != data.clusters.size()) throw std::domain_error("psi does not match the clusters");
  const int p = data.p();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
  std::vector<std::vector<Eigen::LLT<Eigen::MatrixXd>>> factors(psi.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const Cluster& c = data.clusters[i];
    const double weight = 1.0 / static_cast<double>(psi[i].size());
    for (const auto& m : psi[i]) {
      factors[i].emplace_back(m);
      const auto& llt = factors[i].back();
      if (llt.info() != Eigen::Success) throw NumericError("Psi is not positive definite");
      const Eigen::MatrixXd px = llt.solve(c.X);
      info += weight * c.X.transpose() * px;
      score += weight * px.transpose() * c.y;
    }
  }
  GlsResult res;
  res.beta = info.ldlt().solve(score);
  if (residual == ResidualMode::KnownVariances) return res;
  double rss = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const Cluster& c = data.clusters[i];
    const Eigen::VectorXd e = c.y - c.X * res.beta;
    double s = 0.0;
    for (const auto& llt : factors[i]) s += e.dot(llt.solve(e));
    rss += s / static_cast<double>(psi[i].size());
  }
  res.sigma2 = std::sqrt(rss / data.num_obs());
  return res;
}

MStepResult m_step(const Draws& draws, const ClusteredData& data, const ModelSpec& spec, const Theta& current,
                   const MStepOptions& opt) {
  const DrawStats stats(data, draws, spec);
  MStepResult res;
  {
    const auto t = stats.totals(xi_to_scaled(current.xi, spec.cov));
    res.q_before = t.ok ? stats.q_value(current, t) : kNegInf;
  }
  auto objective = [&](const Eigen::VectorXd& xi) {
    const double q = stats.profile(xi, spec.cov, nullptr);
    return std::isfinite(q) ? -q : std::numeric_limits<double>::infinity();
  };
  BfgsOptions bo;
  bo.g_tol = opt.g_tol;
  bo.max_iterations = opt.max_iterations;
  const OptimResult r = bfgs(objective, current.xi, bo);
  DrawStats::Totals totals;
  Theta best;
  const double q_new = stats.profile(r.x, spec.cov, &best, &totals);
  if (!std::isfinite(q_new) || q_new < res.q_before) {
    // Never step downhill: keep the entering point.
    res.theta = current;
    res.q_after = res.q_before;
    res.ok = std::isfinite(q_new);
    const auto t = stats.totals(xi_to_scaled(current.xi, spec.cov));
    res.info = t.info;
    return res;
  }
  res.theta = best;
  res.q_after = q_new;
  res.ok = r.converged;
  res.info = totals.info;
  return res;
}

int MCEMConfig::draws_at(int iteration) const {
  if (k_fixed > 0) return k_fixed;
  return std::max(1, std::min(k_growth * iteration, k_max));
}

std::string_view to_string(ConvergenceRule rule) {
  switch (rule) {
    case ConvergenceRule::QChange: return "q";
    case ConvergenceRule::ParamChange: return "param";
    case ConvergenceRule::Either: return "either";
  }
  return "?";
}

ConvergenceRule parse_convergence_rule(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "q" || s == "qchange") return ConvergenceRule::QChange;
  if (s == "param" || s == "paramchange") return ConvergenceRule::ParamChange;
  if (s == "either") return ConvergenceRule::Either;
  throw std::invalid_argument("unknown convergence rule '" + std::string(name) + "' (expected q, param or either)");
}

FitResult fit_mcem(const ClusteredData& data, const ModelSpec& spec, const MCEMConfig& config,
                   const std::optional<Theta>& start) {
  data.check();
  if (spec.kind == ConvolutionKind::NN)
    throw UnsupportedError("NN has a closed-form likelihood; use the exact fitter");
  if (config.max_iter < 1 || !(config.tolerance > 0.0)) throw std::invalid_argument("invalid MCEM configuration");

  Theta theta;
  if (start) {
    theta = *start;
  } else {
    theta = fit_nn_ml(data, spec, {config.threads}).theta;
  }
  if (spec.residual == ResidualMode::KnownVariances) theta.sigma2 = 1.0;

  const std::size_t m = data.clusters.size();
  std::vector<LatentW> states(m);
  for (std::size_t i = 0; i < m; ++i) states[i] = unit_latent(spec.kind, data.clusters[i].size());

  FitResult fit;
  fit.spec = spec;
  fit.method = "mcem";
  Eigen::MatrixXd info;
  for (int t = 1; t <= config.max_iter; ++t) {
    const int k = config.draws_at(t);
    Draws draws(m);
    detail::parallel_for(m, config.threads, [&](std::size_t i) {
      Rng rng = make_stream(config.seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i)});
      draws[i] = sample_w_conditional(data.clusters[i], theta, spec, k, rng, config.sampler, &states[i]);
    });
    const MStepResult ms = m_step(draws, data, spec, theta, config.mstep);
    const Eigen::VectorXd old_v = pack_theta(theta, spec);
    const Eigen::VectorXd new_v = pack_theta(ms.theta, spec);
    double d_theta = 0.0;
    for (Eigen::Index l = 0; l < old_v.size(); ++l)
      d_theta = std::max(d_theta, std::abs(new_v(l) - old_v(l)) / std::max(std::abs(old_v(l)), 1.0));
    const double d_q = (ms.q_after - ms.q_before) / std::max(std::abs(ms.q_before), 1e-300);
    theta = ms.theta;
    info = ms.info;
    fit.iterations = t;
    if (config.log) {
      *config.log << "iter=" << t << " K=" << k << " q=" << ms.q_after << " dq=" << d_q << " dtheta=" << d_theta;
      for (Eigen::Index l = 0; l < new_v.size(); ++l) *config.log << " theta" << l << "=" << new_v(l);
      *config.log << '\n';
    }
    const bool q_ok = d_q < config.tolerance;
    const bool p_ok = d_theta < config.tolerance;
    const bool done = config.rule == ConvergenceRule::QChange   ? q_ok
                      : config.rule == ConvergenceRule::ParamChange ? p_ok
                                                                    : (q_ok || p_ok);
    if (t >= config.min_iter && done) {
      fit.converged = true;
      break;
    }
  }

  fit.theta = theta;
  finalize_fit(fit);
  const int p = data.p();
  const double var = residual_var(theta, spec);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  fit.cov_beta = var * ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  fit.se_beta = fit.cov_beta.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.loglik_nodes = config.loglik_nodes > 0 ? config.loglik_nodes : default_quadrature_nodes(data.q());
  fit.loglik = loglik_marginal(data, spec, theta.beta, fit.sigma1, theta.sigma2, fit.loglik_nodes, config.threads);
  if (!fit.converged) fit.notes.push_back("maximum number of EM iterations reached");
  return fit;
}

}  // namespace nlmix
