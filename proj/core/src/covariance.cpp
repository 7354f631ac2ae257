#include "nlmix/covariance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace nlmix {
namespace {

constexpr double kStructureTol = 1e-9;

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_length(const Eigen::VectorXd& xi, const CovStructure& s) {
  if (s.dim < 1) throw std::domain_error("covariance dimension must be at least 1");
  if (xi.size() != s.param_count())
    throw std::domain_error("xi has length " + std::to_string(xi.size()) + ", structure " +
                            std::string(to_string(s.kind)) + " needs " + std::to_string(s.param_count()));
}

double cs_lower(int q) { return -1.0 / (q - 1); }

// f(S) for symmetric S via its eigen decomposition.
template <class F>
Eigen::MatrixXd spectral_apply(const Eigen::MatrixXd& m, F f) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::domain_error("eigen decomposition failed");
  const Eigen::VectorXd fv = es.eigenvalues().unaryExpr(f);
  Eigen::MatrixXd out = es.eigenvectors() * fv.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

void require_symmetric(const Eigen::MatrixXd& m, int q) {
  if (m.rows() != q || m.cols() != q)
    throw std::domain_error("covariance matrix must be " + std::to_string(q) + "x" + std::to_string(q));
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kStructureTol * scale)
    throw std::domain_error("covariance matrix is not symmetric");
}

}  // namespace

std::string_view to_string(CovKind kind) {
  switch (kind) {
    case CovKind::ScaledIdentity: return "identity";
    case CovKind::Diagonal: return "diagonal";
    case CovKind::CompoundSymmetric: return "compound";
    case CovKind::GeneralSPD: return "general";
  }
  return "?";
}

CovKind parse_cov_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "identity" || s == "scaledidentity") return CovKind::ScaledIdentity;
  if (s == "diagonal" || s == "diag") return CovKind::Diagonal;
  if (s == "compound" || s == "compoundsymmetric" || s == "cs") return CovKind::CompoundSymmetric;
  if (s == "general" || s == "generalspd" || s == "spd") return CovKind::GeneralSPD;
  throw std::invalid_argument("unknown covariance structure '" + std::string(name) +
                              "' (expected identity, diagonal, compound or general)");
}

int CovStructure::param_count() const {
  switch (kind) {
    case CovKind::ScaledIdentity: return 1;
    case CovKind::Diagonal: return dim;
    case CovKind::CompoundSymmetric: return 2;
    case CovKind::GeneralSPD: return dim * (dim + 1) / 2;
  }
  return 0;
}

std::string xi_name(int index) { return "xi" + std::to_string(index + 1); }

Eigen::MatrixXd xi_to_scaled(const Eigen::VectorXd& xi, const CovStructure& s) {
  check_length(xi, s);
  const int q = s.dim;
  switch (s.kind) {
    case CovKind::ScaledIdentity:
      return std::exp(2.0 * xi(0)) * Eigen::MatrixXd::Identity(q, q);
    case CovKind::Diagonal:
      return (2.0 * xi.array()).exp().matrix().asDiagonal();
    case CovKind::CompoundSymmetric: {
      if (q < 2) throw std::domain_error("compound symmetry needs dimension >= 2");
      const double lo = cs_lower(q);
      const double rho = lo + (1.0 - lo) * logistic(xi(1));
      Eigen::MatrixXd m = Eigen::MatrixXd::Constant(q, q, rho);
      m.diagonal().setOnes();
      return std::exp(2.0 * xi(0)) * m;
    }
    case CovKind::GeneralSPD: {
      Eigen::MatrixXd log_root(q, q);
      int k = 0;
      for (int i = 0; i < q; ++i)
        for (int j = i; j < q; ++j) log_root(i, j) = log_root(j, i) = xi(k++);
      return spectral_apply(log_root, [](double v) { return std::exp(2.0 * v); });
    }
  }
  throw std::domain_error("invalid covariance structure");
}

Eigen::VectorXd scaled_to_xi(const Eigen::MatrixXd& scaled, const CovStructure& s) {
  const int q = s.dim;
  require_symmetric(scaled, q);
  const double scale = scaled.cwiseAbs().maxCoeff();
  Eigen::VectorXd xi(s.param_count());
  switch (s.kind) {
    case CovKind::ScaledIdentity:
    case CovKind::Diagonal: {
      Eigen::MatrixXd off = scaled;
      off.diagonal().setZero();
      if (off.cwiseAbs().maxCoeff() > kStructureTol * scale)
        throw std::domain_error("matrix has nonzero off-diagonal entries; not representable as " +
                                std::string(to_string(s.kind)));
      const Eigen::VectorXd d = scaled.diagonal();
      if (d.minCoeff() <= 0.0)
        throw std::domain_error("covariance matrix is singular; add a small ridge to the diagonal");
      if (s.kind == CovKind::ScaledIdentity) {
        if (d.maxCoeff() - d.minCoeff() > kStructureTol * scale)
          throw std::domain_error("diagonal entries differ; not representable as a scaled identity");
        xi(0) = 0.5 * std::log(d.mean());
      } else {
        xi = 0.5 * d.array().log();
      }
      return xi;
    }
    case CovKind::CompoundSymmetric: {
      if (q < 2) throw std::domain_error("compound symmetry needs dimension >= 2");
      const Eigen::VectorXd d = scaled.diagonal();
      double off_sum = 0.0, off_min = scaled(0, 1), off_max = scaled(0, 1);
      for (int i = 0; i < q; ++i)
        for (int j = i + 1; j < q; ++j) {
          off_sum += scaled(i, j);
          off_min = std::min(off_min, scaled(i, j));
          off_max = std::max(off_max, scaled(i, j));
        }
      if (d.maxCoeff() - d.minCoeff() > kStructureTol * scale || off_max - off_min > kStructureTol * scale)
        throw std::domain_error("matrix is not compound symmetric");
      const double v = d.mean();
      if (v <= 0.0) throw std::domain_error("covariance matrix is singular; add a small ridge to the diagonal");
      const double rho = off_sum / (q * (q - 1) / 2) / v;
      const double lo = cs_lower(q);
      const double frac = (rho - lo) / (1.0 - lo);
      if (!(frac > 0.0 && frac < 1.0))
        throw std::domain_error("compound-symmetric matrix is singular or indefinite; add a small ridge");
      xi(0) = 0.5 * std::log(v);
      xi(1) = std::log(frac / (1.0 - frac));
      return xi;
    }
    case CovKind::GeneralSPD: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
      if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
        throw std::domain_error("covariance matrix is singular or indefinite; add a small ridge to the diagonal");
      const Eigen::MatrixXd log_root = spectral_apply(scaled, [](double v) { return 0.5 * std::log(v); });
      int k = 0;
      for (int i = 0; i < q; ++i)
        for (int j = i; j < q; ++j) xi(k++) = log_root(i, j);
      return xi;
    }
  }
  throw std::domain_error("invalid covariance structure");
}

Eigen::MatrixXd xi_to_sigma1(const Eigen::VectorXd& xi, const CovStructure& s, double sigma2) {
  return sigma2 * sigma2 * xi_to_scaled(xi, s);
}

Eigen::VectorXd sigma1_to_xi(const Eigen::MatrixXd& sigma1, const CovStructure& s, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::domain_error("sigma2 must be positive");
  return scaled_to_xi(sigma1 / (sigma2 * sigma2), s);
}

}  // namespace nlmix
