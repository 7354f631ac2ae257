#pragma once

#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace nlmix {

enum class CovKind { ScaledIdentity, Diagonal, CompoundSymmetric, GeneralSPD };

std::string_view to_string(CovKind kind);
/// Accepts "identity", "diagonal", "compound", "general" (and the enum names).
CovKind parse_cov_kind(std::string_view name);

/// Structure of the q x q random-effect covariance matrix.
struct CovStructure {
  CovKind kind = CovKind::GeneralSPD;
  int dim = 1;

  /// Length m of the unrestricted vector xi.
  int param_count() const;
};

// Unrestricted parameterization of the scaled covariance S = Sigma1 / sigma2^2
// (the inverse of the relative precision sigma2^2 Sigma1^{-1}).
//
//   GeneralSPD:        S = expm(2 L), L symmetric; xi is the upper triangle
//                      of L in row-major order, i.e. L = log(S^{1/2}).
//   Diagonal:          S = diag(exp(2 xi_j)).
//   ScaledIdentity:    S = exp(2 xi) I.
//   CompoundSymmetric: S = exp(2 xi_1) ((1 - rho) I + rho 1 1'), with
//                      rho = lo + (1 - lo) logistic(xi_2), lo = -1/(q-1).
//
// The restricted forms coincide with GeneralSPD on their own subspace except
// for the compound-symmetric correlation coordinate.

/// Total map: any finite xi gives a symmetric positive-definite matrix.
/// Throws std::domain_error only on a length mismatch.
Eigen::MatrixXd xi_to_scaled(const Eigen::VectorXd& xi, const CovStructure& s);

/// Inverse of xi_to_scaled. Throws std::domain_error when the matrix is not
/// symmetric positive definite or not representable in the structure.
Eigen::VectorXd scaled_to_xi(const Eigen::MatrixXd& scaled, const CovStructure& s);

Eigen::MatrixXd xi_to_sigma1(const Eigen::VectorXd& xi, const CovStructure& s, double sigma2);
Eigen::VectorXd sigma1_to_xi(const Eigen::MatrixXd& sigma1, const CovStructure& s, double sigma2);

/// Names of the xi coordinates ("xi1", "xi2", ...) in storage order.
std::string xi_name(int index);

}  // namespace nlmix
