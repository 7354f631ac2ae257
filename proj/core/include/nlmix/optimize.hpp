#pragma once

#include <functional>

#include <Eigen/Dense>

namespace nlmix {

/// Objective to be minimised. Non-finite values are treated as +infinity.
using Objective = std::function<double(const Eigen::VectorXd&)>;

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  int iterations = 0;
  bool converged = false;
};

struct NelderMeadOptions {
  double initial_step = 0.5;
  double f_tol = 1e-8;  // spread of simplex values
  double x_tol = 1e-6;  // simplex diameter
  int max_evaluations = 20000;
};

OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {});

struct BfgsOptions {
  double gradient_step = 1e-5;  // relative central-difference step
  double g_tol = 1e-6;
  double f_tol = 1e-12;  // relative decrease below which the run stops
  int max_iterations = 200;
};

/// Quasi-Newton with central finite-difference gradients and a backtracking
/// Armijo line search. Never returns a point worse than x0.
OptimResult bfgs(const Objective& f, const Eigen::VectorXd& x0, const BfgsOptions& opt = {});

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step = 1e-5);

/// Central-difference Hessian with step h_i = rel_step * max(|x_i|, 1).
Eigen::MatrixXd numeric_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step = 1e-4);

}  // namespace nlmix
