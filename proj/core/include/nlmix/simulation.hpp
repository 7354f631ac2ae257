#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlmix/data.hpp"
#include "nlmix/mcem.hpp"
#include "nlmix/quadrature.hpp"
#include "nlmix/random.hpp"

namespace nlmix {

/// Data-generating design: y_ij = b0 + b1 x_ij + (1, x_ij) e1_i + e2_ij with
/// x_ij = g_i + z_ij, g and z standard normal. Scenario 1..4 selects the
/// NN, NL, LN, LL laws of (e1, e2).
struct ScenarioSpec {
  int scenario = 1;
  int clusters = 100;
  int per_cluster = 5;
  Eigen::Vector2d beta{1.0, 2.0};
  Eigen::Matrix2d sigma1{{3.0, 1.0}, {1.0, 2.0}};
  double sigma2 = 2.0;
  int replicates = 100;
  std::uint64_t seed = 1;

  ConvolutionKind truth() const;
  void validate() const;
};

ClusteredData generate_scenario(const ScenarioSpec& spec, Rng& rng);
/// Replicate r drawn from its own stream make_stream(seed, {r}), so it is the
/// same whether generated alone or in a batch.
ClusteredData generate_replicate(const ScenarioSpec& spec, int r);

enum class Backend { Exact, Mcem, Quadrature };

struct FitterChoice {
  ConvolutionKind kind = ConvolutionKind::NN;
  Backend backend = Backend::Exact;
  std::string label() const;
};

/// Parses "nn", "nl", "ll", "nl:quadrature", "ln:mcem".
FitterChoice parse_fitter(std::string_view text);
/// NN plus the model matching the scenario (all four for scenario 1).
std::vector<FitterChoice> default_fitters(int scenario);

struct StudyOptions {
  MCEMConfig mcem;
  QuadratureFitOptions quadrature;
  int threads = 1;
  std::ostream* progress = nullptr;
};

struct CellStats {
  double bias = 0.0;
  double variance = 0.0;  // 1/R denominator, so mse = variance + bias^2
  double mse = 0.0;
  // Ratios to the NN fitter on the same scenario; NaN for NN itself.
  double rel_bias = 0.0;
  double rel_variance = 0.0;
  double rel_mse = 0.0;
};

struct ModelReport {
  FitterChoice fitter;
  int converged = 0;
  int excluded = 0;
  std::vector<CellStats> cells;  // one per parameter
  Eigen::MatrixXd raw;           // replicates x parameters, NaN rows for excluded fits
  std::vector<bool> ok;
};

struct SimReport {
  ScenarioSpec spec;
  std::vector<std::string> parameters;  // beta0, beta1, xi1, xi2, xi3
  Eigen::VectorXd truth;
  std::vector<ModelReport> models;
};

/// Fits every replicate with every fitter and aggregates the moments. The NN
/// fitter must be present; it is the baseline for the ratios.
SimReport run_study(const ScenarioSpec& spec, const std::vector<FitterChoice>& fitters,
                    const StudyOptions& opt = {});

/// FitResult for one fitter choice on one data set.
FitResult fit_with(const FitterChoice& choice, const ClusteredData& data, const ModelSpec& spec,
                   const StudyOptions& opt, std::uint64_t seed);

void write_report_csv(std::ostream& out, const std::vector<SimReport>& reports, int digits = 17);
void write_report_table(std::ostream& out, const std::vector<SimReport>& reports);
void write_raw_csv(std::ostream& out, const std::vector<SimReport>& reports, int digits = 17);

}  // namespace nlmix
