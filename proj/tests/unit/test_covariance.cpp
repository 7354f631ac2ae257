#include <cmath>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "test_support.hpp"

using namespace nlmix;

namespace {

Eigen::MatrixXd paper_sigma1() {
  Eigen::MatrixXd s(2, 2);
  s << 3, 1, 1, 2;
  return s;
}

double min_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

Eigen::VectorXd uniform_vec(Rng& rng, int n, double lo, double hi) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = lo + (hi - lo) * open_uniform(rng);
  return v;
}

}  // namespace

TEST_CASE("structure names and parameter counts") {
  for (auto k : {CovKind::ScaledIdentity, CovKind::Diagonal, CovKind::CompoundSymmetric, CovKind::GeneralSPD})
    CHECK(parse_cov_kind(to_string(k)) == k);
  CHECK(parse_cov_kind("general") == CovKind::GeneralSPD);
  CHECK(parse_cov_kind("identity") == CovKind::ScaledIdentity);
  CHECK_THROWS_AS(parse_cov_kind("banded"), std::invalid_argument);
  CHECK(CovStructure{CovKind::ScaledIdentity, 4}.param_count() == 1);
  CHECK(CovStructure{CovKind::Diagonal, 4}.param_count() == 4);
  CHECK(CovStructure{CovKind::CompoundSymmetric, 4}.param_count() == 2);
  CHECK(CovStructure{CovKind::GeneralSPD, 4}.param_count() == 10);
  CHECK(xi_name(0) == "xi1");
}

TEST_CASE("published anchor for the general structure") {
  const CovStructure s{CovKind::GeneralSPD, 2};
  const Eigen::VectorXd xi = sigma1_to_xi(paper_sigma1(), s, 2.0);
  // 50-digit values of the upper triangle of logm(Sigma1 / 4) / 2.
  CHECK(testing::rel_err(xi(0), -0.18318546721041920604) < 1e-12);
  CHECK(testing::rel_err(xi(1), 0.21520447048200201944) < 1e-12);
  CHECK(testing::rel_err(xi(2), -0.39838993769242122549) < 1e-12);
  CHECK(std::abs(xi(0) + 0.183) < 1e-3);
  CHECK(std::abs(xi(1) - 0.215) < 1e-3);
  CHECK(std::abs(xi(2) + 0.398) < 1e-3);

  Eigen::VectorXd printed(3);
  printed << -0.183, 0.215, -0.398;
  const Eigen::MatrixXd back = xi_to_sigma1(printed, s, 2.0);
  CHECK((back - paper_sigma1()).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("zero vector gives the identity") {
  for (auto k : {CovKind::ScaledIdentity, CovKind::Diagonal, CovKind::GeneralSPD}) {
    const CovStructure s{k, 3};
    CHECK(xi_to_sigma1(Eigen::VectorXd::Zero(s.param_count()), s, 1.0).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-15));
    CHECK(sigma1_to_xi(Eigen::MatrixXd::Identity(3, 3), s, 1.0).norm() < 1e-14);
  }
  CHECK(xi_to_sigma1(Eigen::VectorXd::Zero(1), {CovKind::ScaledIdentity, 1}, 1.0)(0, 0) == 1.0);
}

TEST_CASE("totality over wide random inputs") {
  Rng rng = make_stream(7, {});
  for (int q : {1, 2, 3, 5})
    for (auto k : {CovKind::ScaledIdentity, CovKind::Diagonal, CovKind::CompoundSymmetric, CovKind::GeneralSPD}) {
      if (k == CovKind::CompoundSymmetric && q < 2) continue;
      const CovStructure s{k, q};
      const int trials = (k == CovKind::GeneralSPD && q == 2) ? 1000 : 200;
      for (int t = 0; t < trials; ++t) {
        // Entries of moderate size; exp(2 * 10) keeps the condition number within double range.
        const Eigen::VectorXd xi = uniform_vec(rng, s.param_count(), -10, 10) / (k == CovKind::GeneralSPD ? q : 1);
        const Eigen::MatrixXd m = xi_to_sigma1(xi, s, 1.3);
        REQUIRE(m.allFinite());
        CHECK((m - m.transpose()).norm() == 0.0);
        CHECK(min_eig(m) > 0.0);
      }
    }
}

TEST_CASE("round trips") {
  Rng rng = make_stream(8, {});
  for (int q : {1, 2, 3, 4}) {
    const CovStructure s{CovKind::GeneralSPD, q};
    double worst_spd = 0, worst_xi = 0;
    for (int t = 0; t < 100; ++t) {
      Eigen::MatrixXd a(q, q);
      for (int i = 0; i < q * q; ++i) a.data()[i] = standard_normal(rng);
      const Eigen::MatrixXd spd = a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(q, q);
      const double s2 = 0.5 + 2 * open_uniform(rng);
      const Eigen::MatrixXd back = xi_to_sigma1(sigma1_to_xi(spd, s, s2), s, s2);
      worst_spd = std::max(worst_spd, (back - spd).cwiseAbs().maxCoeff() / std::max(1.0, spd.cwiseAbs().maxCoeff()));
      const Eigen::VectorXd xi = uniform_vec(rng, s.param_count(), -2, 2);
      worst_xi = std::max(worst_xi, (sigma1_to_xi(xi_to_sigma1(xi, s, s2), s, s2) - xi).cwiseAbs().maxCoeff());
    }
    CAPTURE(q);
    CHECK(worst_spd < 1e-8);
    CHECK(worst_xi < 1e-8);
  }
  for (auto k : {CovKind::ScaledIdentity, CovKind::Diagonal, CovKind::CompoundSymmetric}) {
    const CovStructure s{k, 3};
    for (int t = 0; t < 50; ++t) {
      const Eigen::VectorXd xi = uniform_vec(rng, s.param_count(), -2, 2);
      CHECK((sigma1_to_xi(xi_to_sigma1(xi, s, 1.7), s, 1.7) - xi).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("restricted structures have the stated form") {
  Eigen::VectorXd xi(2);
  xi << 0.3, -0.4;
  const Eigen::MatrixXd cs = xi_to_sigma1(xi, {CovKind::CompoundSymmetric, 3}, 1.0);
  CHECK(cs(0, 0) == doctest::Approx(std::exp(0.6)));
  CHECK(cs(1, 1) == doctest::Approx(cs(0, 0)));
  CHECK(cs(0, 1) == doctest::Approx(cs(1, 2)));
  const double lo = -0.5;
  const double rho = lo + (1 - lo) / (1 + std::exp(0.4));
  CHECK(cs(0, 1) / cs(0, 0) == doctest::Approx(rho));
  // Strongly negative correlation coordinate still gives a valid matrix (near -40 rho rounds onto its bound).
  xi << 0, -10;
  CHECK(min_eig(xi_to_sigma1(xi, {CovKind::CompoundSymmetric, 3}, 1.0)) > 0);

  Eigen::VectorXd d(3);
  d << 0.1, -0.2, 0.5;
  const Eigen::MatrixXd dm = xi_to_sigma1(d, {CovKind::Diagonal, 3}, 2.0);
  CHECK(dm.isApprox(Eigen::Vector3d(4 * std::exp(0.2), 4 * std::exp(-0.4), 4 * std::exp(1.0)).asDiagonal().toDenseMatrix()));
}

TEST_CASE("scale consistency") {
  Eigen::VectorXd xi(3);
  xi << 0.4, -0.7, 0.1;
  const CovStructure s{CovKind::GeneralSPD, 2};
  const Eigen::MatrixXd a = xi_to_sigma1(xi, s, 1.0);
  for (double s2 : {0.01, 0.5, 3.0, 100.0}) CHECK(xi_to_sigma1(xi, s, s2).isApprox(s2 * s2 * a, 1e-14));
  CHECK(xi_to_scaled(xi, s).isApprox(a));
}

TEST_CASE("inverse rejects what the structure cannot hold") {
  Eigen::MatrixXd full = paper_sigma1();
  CHECK_THROWS_AS(sigma1_to_xi(full, {CovKind::Diagonal, 2}, 1.0), std::domain_error);
  CHECK_THROWS_AS(sigma1_to_xi(full, {CovKind::ScaledIdentity, 2}, 1.0), std::domain_error);
  Eigen::MatrixXd singular(2, 2);
  singular << 1, 1, 1, 1;
  CHECK_THROWS_AS(sigma1_to_xi(singular, {CovKind::GeneralSPD, 2}, 1.0), std::domain_error);
  Eigen::MatrixXd asym(2, 2);
  asym << 2, 0.5, 0.1, 2;
  CHECK_THROWS_AS(sigma1_to_xi(asym, {CovKind::GeneralSPD, 2}, 1.0), std::domain_error);
  Eigen::MatrixXd ncs(3, 3);
  ncs << 2, 0.5, 0.5, 0.5, 2, 0.1, 0.5, 0.1, 2;
  CHECK_THROWS_AS(sigma1_to_xi(ncs, {CovKind::CompoundSymmetric, 3}, 1.0), std::domain_error);
  CHECK_THROWS_AS(xi_to_sigma1(Eigen::VectorXd::Zero(2), {CovKind::GeneralSPD, 2}, 1.0), std::domain_error);
  CHECK_THROWS_AS(sigma1_to_xi(full, {CovKind::GeneralSPD, 3}, 1.0), std::domain_error);
}
