#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/convolution.hpp"
#include "nlmix/covariance.hpp"

namespace nlmix {

/// One cluster (study, patient, animal): y_i = X_i beta + Z_i e1_i + e2_i.
struct Cluster {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  /// Known per-observation error variances (meta-analysis mode).
  std::optional<Eigen::VectorXd> known_var;

  int size() const { return static_cast<int>(y.size()); }
};

/// Clustered data set. Immutable after construction by convention; all
/// fitters take it by const reference.
struct ClusteredData {
  std::vector<Cluster> clusters;
  std::vector<std::string> fixed_names;   // columns of X
  std::vector<std::string> random_names;  // columns of Z

  int num_clusters() const { return static_cast<int>(clusters.size()); }
  int num_obs() const;
  int p() const { return static_cast<int>(fixed_names.size()); }
  int q() const { return static_cast<int>(random_names.size()); }
  bool has_known_var() const;

  /// Throws DataError if the structural invariants fail (M >= 1, n_i >= 1,
  /// consistent p and q, finite values, known variances for all or none).
  void check() const;
};

enum class ResidualMode { EstimatedScale, KnownVariances };

std::string_view to_string(ResidualMode mode);

struct ModelSpec {
  ConvolutionKind kind = ConvolutionKind::NN;
  CovStructure cov{CovKind::GeneralSPD, 1};
  ResidualMode residual = ResidualMode::EstimatedScale;
};

/// How columns of a long-format CSV file map onto the model.
struct ColumnMapping {
  std::string cluster;
  std::string response;
  std::vector<std::string> fixed;
  std::vector<std::string> random;
  /// Prepend a column of ones named "(Intercept)" to X / Z.
  bool intercept_fixed = false;
  bool intercept_random = false;
  std::optional<std::string> known_var;
};

inline const std::string kInterceptName = "(Intercept)";

/// Reads a long-format CSV (header row, one observation per row). Rows are
/// grouped by cluster id; clusters appear in order of first occurrence and
/// rows keep file order within a cluster. Throws DataError naming the missing
/// column, or the row and column of a non-numeric cell.
ClusteredData load_csv(const std::string& path, const ColumnMapping& mapping);
ClusteredData read_csv(std::istream& in, const ColumnMapping& mapping);

/// Writes the data back in long format: cluster, response, covariates and
/// optional known_var. Numbers use the shortest round-trip representation.
void write_csv(std::ostream& out, const ClusteredData& data);
void save_csv(const std::string& path, const ClusteredData& data);

/// Mapping that reads back what write_csv produced.
ColumnMapping round_trip_mapping(const ClusteredData& data);

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

/// Checks rank(X) = p, positive known variances, q <= min n_i (warning),
/// structure and residual-mode consistency.
ValidationReport validate(const ClusteredData& data, const ModelSpec& spec);

/// Marginal log-likelihood. Exact for NN; for NL/LN/LL a tensor Gauss-Hermite
/// (random effect) and Gauss-Laguerre (Laplace mixing variable) quadrature
/// with `nodes` points per dimension (default: default_quadrature_nodes(q)).
/// In KnownVariances mode sigma2 is ignored.
double loglik_marginal(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& beta,
                       const Eigen::MatrixXd& sigma1, double sigma2, int nodes = 0, int threads = 1);

/// 25 nodes for q <= 2, 11 for q in {3, 4}, 5 beyond.
int default_quadrature_nodes(int q);

/// Per-observation error variance multipliers: ones, or the known variances.
Eigen::VectorXd residual_scale(const Cluster& c, ResidualMode mode);

}  // namespace nlmix
