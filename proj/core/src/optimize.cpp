#include "nlmix/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace nlmix {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_eval(const Objective& f, const Eigen::VectorXd& x, int& count) {
  ++count;
  const double v = f(x);
  return std::isfinite(v) ? v : kInf;
}

double step_for(double x, double rel) { return rel * std::max(std::abs(x), 1.0); }

}  // namespace

OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opt) {
  const int n = static_cast<int>(x0.size());
  OptimResult res;
  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  for (int i = 0; i < n; ++i) simplex[i + 1](i) += opt.initial_step * std::max(std::abs(x0(i)), 1.0);
  for (int i = 0; i <= n; ++i) values[i] = safe_eval(f, simplex[i], res.evaluations);

  std::vector<int> order(n + 1);
  while (res.evaluations < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    const int best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (int i = 0; i <= n; ++i) diameter = std::max(diameter, (simplex[i] - simplex[best]).cwiseAbs().maxCoeff());
    const double spread = values[worst] - values[best];
    if (std::isfinite(values[worst]) && spread <= opt.f_tol * (std::abs(values[best]) + opt.f_tol) &&
        diameter <= opt.x_tol * std::max(1.0, simplex[best].cwiseAbs().maxCoeff())) {
      res.converged = true;
      break;
    }
    ++res.iterations;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= n;

    const Eigen::VectorXd xr = centroid + (centroid - simplex[worst]);
    const double fr = safe_eval(f, xr, res.evaluations);
    if (fr < values[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = safe_eval(f, xe, res.evaluations);
      if (fe < fr) {
        simplex[worst] = xe;
        values[worst] = fe;
      } else {
        simplex[worst] = xr;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = xr;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Eigen::VectorXd xc =
        outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = safe_eval(f, xc, res.evaluations);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = xc;
      values[worst] = fc;
      continue;
    }
    for (int i = 0; i <= n; ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = safe_eval(f, simplex[i], res.evaluations);
    }
  }
  const auto it = std::min_element(values.begin(), values.end());
  res.x = simplex[it - values.begin()];
  res.value = *it;
  return res;
}

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step_for(x(i), rel_step);
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

OptimResult bfgs(const Objective& f, const Eigen::VectorXd& x0, const BfgsOptions& opt) {
  const auto n = x0.size();
  OptimResult res;
  int grad_evals = 0;
  auto grad = [&](const Eigen::VectorXd& x) {
    grad_evals += 2 * static_cast<int>(n);
    return numeric_gradient(f, x, opt.gradient_step);
  };

  Eigen::VectorXd x = x0;
  double fx = safe_eval(f, x, res.evaluations);
  res.x = x;
  res.value = fx;
  if (!std::isfinite(fx)) return res;

  Eigen::VectorXd g = grad(x);
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    if (!g.allFinite()) break;
    if (g.cwiseAbs().maxCoeff() <= opt.g_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd d = -h * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      h.setIdentity();
      d = -g;
      slope = -g.squaredNorm();
    }
    // Cap the first trial step so one bad curvature estimate cannot jump far.
    double t = std::min(1.0, 1.0 / std::max(1e-12, d.cwiseAbs().maxCoeff()));
    if (it > 0) t = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + t * d;
      f_new = safe_eval(f, x_new, res.evaluations);
      if (f_new <= fx + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!(f_new < fx)) {
      res.converged = g.cwiseAbs().maxCoeff() <= 1e3 * opt.g_tol * std::max(1.0, std::abs(fx));
      break;
    }
    const Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double decrease = fx - f_new;
    x = x_new;
    fx = f_new;
    g = g_new;
    res.x = x;
    res.value = fx;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      if (it == 0) h *= sy / yv.squaredNorm();
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
      h = (i_n - rho * s * yv.transpose()) * h * (i_n - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    if (decrease <= opt.f_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
  }
  res.evaluations += grad_evals;
  return res;
}

Eigen::MatrixXd numeric_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  const auto n = x.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd step(n);
  for (Eigen::Index i = 0; i < n; ++i) step(i) = step_for(x(i), rel_step);
  const double f0 = f(x);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + step(i);
    const double fp = f(xp);
    xp(i) = x(i) - step(i);
    const double fm = f(xp);
    xp(i) = x(i);
    hess(i, i) = (fp - 2.0 * f0 + fm) / (step(i) * step(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      auto eval = [&](double si, double sj) {
        xp(i) = x(i) + si * step(i);
        xp(j) = x(j) + sj * step(j);
        const double v = f(xp);
        xp(i) = x(i);
        xp(j) = x(j);
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * step(i) * step(j));
      hess(i, j) = hess(j, i) = v;
    }
  }
  return hess;
}

}  // namespace nlmix
