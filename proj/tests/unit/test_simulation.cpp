#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"

using namespace nlmix;

namespace {

// Least squares of v on (1, x, x^2).
Eigen::Vector3d quadratic_fit(const std::vector<double>& x, const std::vector<double>& v) {
  Eigen::MatrixXd a(x.size(), 3);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    a.row(i) << 1, x[i], x[i] * x[i];
    b(i) = v[i];
  }
  return a.colPivHouseholderQr().solve(b);
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("scenario defaults and truth") {
  ScenarioSpec s;
  CHECK(s.clusters == 100);
  CHECK(s.per_cluster == 5);
  CHECK(s.sigma2 == 2.0);
  CHECK(s.beta == Eigen::Vector2d(1, 2));
  const ConvolutionKind kinds[] = {ConvolutionKind::NN, ConvolutionKind::NL, ConvolutionKind::LN,
                                   ConvolutionKind::LL};
  for (int i = 1; i <= 4; ++i) {
    s.scenario = i;
    CHECK(s.truth() == kinds[i - 1]);
  }
  s.scenario = 5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.scenario = 1;
  s.sigma1 << 1, 2, 2, 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("replicates come from their own streams") {
  ScenarioSpec s;
  s.scenario = 4;
  s.clusters = 7;
  const ClusteredData alone = generate_replicate(s, 3);
  Rng rng = make_stream(s.seed, {3});
  const ClusteredData direct = generate_scenario(s, rng);
  for (int i = 0; i < 7; ++i) {
    CHECK(alone.clusters[i].y == direct.clusters[i].y);
    CHECK(alone.clusters[i].X == direct.clusters[i].X);
  }
  CHECK(alone.clusters[0].Z == alone.clusters[0].X);
  CHECK(alone.clusters[0].id == "c00001");
  CHECK(generate_replicate(s, 4).clusters[0].y != alone.clusters[0].y);
  CHECK(validate(alone, {ConvolutionKind::LL, {CovKind::GeneralSPD, 2}, {}}).ok);
}

TEST_CASE("conditional variance of the response") {
  // y - X beta = z^T e1 + e2 with z = (1, x), so E[r^2 | x] = 3 + 2x + 2x^2 + 4.
  for (int sc : {1, 4}) {
    ScenarioSpec s;
    s.scenario = sc;
    s.clusters = 100000;
    const ClusteredData d = generate_replicate(s, 0);
    std::vector<double> x, r2;
    for (const auto& c : d.clusters)
      for (int j = 0; j < c.size(); ++j) {
        const double r = c.y(j) - c.X.row(j).dot(s.beta);
        x.push_back(c.X(j, 1));
        r2.push_back(r * r);
      }
    const Eigen::Vector3d coef = quadratic_fit(x, r2);
    CAPTURE(sc);
    CAPTURE(coef.transpose());
    CHECK(std::abs(coef(0) / 7 - 1) < 0.02);
    CHECK(std::abs(coef(1) - 2) < 0.15);
    CHECK(std::abs(coef(2) - 2) < 0.1);
  }
}

TEST_CASE("random effects have covariance Sigma1") {
  for (int sc : {1, 3}) {
    ScenarioSpec s;
    s.scenario = sc;
    s.clusters = 100000;
    s.per_cluster = 2;
    s.sigma2 = 1e-4;
    const ClusteredData d = generate_replicate(s, 1);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& c : d.clusters) {
      const Eigen::Vector2d b = c.Z.partialPivLu().solve(c.y - c.X * s.beta);
      cov += b * b.transpose();
    }
    cov /= s.clusters;
    CAPTURE(sc);
    CAPTURE(cov);
    CHECK((cov.array() / s.sigma1.array() - 1).abs().maxCoeff() < 0.02 * 2);
    CHECK(std::abs(cov(0, 0) / 3 - 1) < 0.02);
    CHECK(std::abs(cov(1, 1) / 2 - 1) < 0.02);
  }
}

TEST_CASE("Laplace errors have excess kurtosis 3") {
  ScenarioSpec s;
  s.scenario = 4;
  s.clusters = 100000;
  s.sigma1 = 1e-12 * Eigen::Matrix2d::Identity();
  const ClusteredData d = generate_replicate(s, 2);
  std::vector<double> e;
  for (const auto& c : d.clusters)
    for (int j = 0; j < c.size(); ++j) e.push_back(c.y(j) - c.X.row(j).dot(s.beta));
  const auto m = testing::moments(e);
  CHECK(std::abs(m.var / 4 - 1) < 0.02);
  CHECK(std::abs(m.excess_kurtosis - 3) < 0.3);
}

TEST_CASE("fitter names") {
  CHECK(parse_fitter("nn").kind == ConvolutionKind::NN);
  CHECK(parse_fitter("NL").backend == Backend::Mcem);
  CHECK(parse_fitter("nl:quadrature").backend == Backend::Quadrature);
  CHECK(parse_fitter("ln:mcem").kind == ConvolutionKind::LN);
  CHECK(parse_fitter("nl:quad").label() == "NL-quad");
  CHECK_THROWS_AS(parse_fitter("nn:mcem"), std::invalid_argument);
  CHECK_THROWS_AS(parse_fitter("ll:gibbs"), std::invalid_argument);
  CHECK(default_fitters(1).size() == 4);
  CHECK(default_fitters(4).size() == 2);
  CHECK(default_fitters(4)[1].kind == ConvolutionKind::LL);
}

TEST_CASE("study report moments") {
  ScenarioSpec s;
  s.replicates = 12;
  s.clusters = 40;
  s.seed = 7;
  StudyOptions opt;
  opt.mcem.max_iter = 2;  // below min_iter, so every MCEM fit is flagged unconverged
  opt.mcem.k_growth = 5;
  opt.mcem.loglik_nodes = 5;
  const std::vector<FitterChoice> fitters{parse_fitter("nn"), parse_fitter("ln")};
  const SimReport rep = run_study(s, fitters, opt);
  REQUIRE(rep.models.size() == 2);
  CHECK(rep.parameters == std::vector<std::string>{"beta0", "beta1", "xi1", "xi2", "xi3"});
  CHECK(std::abs(rep.truth(2) + 0.183) < 1e-3);
  CHECK(std::abs(rep.truth(3) - 0.215) < 1e-3);
  CHECK(std::abs(rep.truth(4) + 0.398) < 1e-3);

  const ModelReport& nn = rep.models[0];
  CHECK(nn.converged == 12);
  for (int p = 0; p < 5; ++p) {
    const CellStats& c = nn.cells[p];
    CHECK(std::abs(c.mse - (c.variance + c.bias * c.bias)) < 1e-10);
    CHECK(std::isnan(c.rel_mse));
  }
  // Each row is the NN fit of that replicate on its own.
  const ModelSpec model{ConvolutionKind::NN, {CovKind::GeneralSPD, 2}, {}};
  const FitResult f5 = fit_nn_ml(generate_replicate(s, 5), model);
  CHECK(nn.raw(5, 0) == f5.theta.beta(0));
  CHECK(nn.raw(5, 4) == f5.theta.xi(2));

  const ModelReport& ln = rep.models[1];
  CHECK(ln.converged == 0);
  CHECK(ln.excluded == 12);
  CHECK(std::isnan(ln.cells[0].bias));

  StudyOptions threaded = opt;
  threaded.threads = 3;
  CHECK(run_study(s, {parse_fitter("nn")}, threaded).models[0].raw == nn.raw);
  CHECK_THROWS_AS(run_study(s, {parse_fitter("ln")}, opt), std::invalid_argument);

  std::ostringstream csv, table, raw;
  write_report_csv(csv, {rep});
  write_report_table(table, {rep});
  write_raw_csv(raw, {rep});
  CHECK(count_lines(csv.str()) == 1 + 2 * 5);
  CHECK(count_lines(raw.str()) == 1 + 2 * 12);
  CHECK(table.str().find("(") != std::string::npos);
  CHECK(csv.str().rfind("scenario,model,parameter,truth,bias,variance,mse", 0) == 0);
}

TEST_CASE("relative cells divide by the NN baseline") {
  ScenarioSpec s;
  s.replicates = 6;
  s.clusters = 30;
  s.scenario = 2;
  StudyOptions opt;
  opt.mcem.max_iter = 3;
  opt.mcem.min_iter = 2;
  opt.mcem.k_growth = 5;
  opt.mcem.tolerance = 1.0;  // stop at min_iter
  opt.mcem.loglik_nodes = 5;
  const SimReport rep = run_study(s, default_fitters(2), opt);
  const auto& base = rep.models[0].cells;
  const auto& nl = rep.models[1];
  REQUIRE(nl.converged == 6);
  for (int p = 0; p < 5; ++p) {
    CHECK(nl.cells[p].rel_mse == doctest::Approx(nl.cells[p].mse / base[p].mse));
    CHECK(nl.cells[p].rel_variance == doctest::Approx(nl.cells[p].variance / base[p].variance));
    CHECK(nl.cells[p].rel_bias == doctest::Approx(nl.cells[p].bias / base[p].bias));
    CHECK(std::abs(nl.cells[p].mse - (nl.cells[p].variance + nl.cells[p].bias * nl.cells[p].bias)) < 1e-10);
  }
}
