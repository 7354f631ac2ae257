#include <algorithm>
#include <cmath>
#include <mutex>

#include "doctest.h"
#include "test_support.hpp"

using namespace nlmix;

namespace {

const ModelSpec kNN{ConvolutionKind::NN, {CovKind::ScaledIdentity, 1}, {}};

Fitter exact_fitter(const ModelSpec& spec) {
  return [spec](const ClusteredData& d, std::uint64_t) { return fit_nn_ml(d, spec); };
}

ClusteredData intercept_data(int m, std::uint64_t seed) {
  Rng rng = make_stream(seed, {});
  ClusteredData d;
  d.fixed_names = {kInterceptName, "x"};
  d.random_names = {kInterceptName};
  for (int i = 0; i < m; ++i) {
    Cluster c;
    c.id = "g" + std::to_string(1000 + i);
    c.X.resize(4, 2);
    c.y.resize(4);
    const double b = standard_normal(rng);
    for (int j = 0; j < 4; ++j) {
      c.X.row(j) << 1, standard_normal(rng);
      c.y(j) = 1 + 0.5 * c.X(j, 1) + b + 0.7 * standard_normal(rng);
    }
    c.Z = c.X.leftCols(1);
    d.clusters.push_back(c);
  }
  return d;
}

}  // namespace

TEST_CASE("a single cluster resamples to itself") {
  ClusteredData d = intercept_data(1, 1);
  const BootstrapResult r = block_bootstrap_se(d, kNN, exact_fitter(kNN), 2, 9);
  CHECK(r.used == 2);
  CHECK(r.dropped == 0);
  REQUIRE(r.se.size() == 4);
  CHECK(r.se.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.names == std::vector<std::string>{kInterceptName, "x", "xi1", "sigma2"});
}

TEST_CASE("bootstrap is deterministic and ignores cluster order") {
  const ClusteredData d = intercept_data(30, 2);
  ClusteredData shuffled = d;
  std::reverse(shuffled.clusters.begin(), shuffled.clusters.end());
  std::swap(shuffled.clusters[3], shuffled.clusters[17]);
  const auto a = block_bootstrap_se(d, kNN, exact_fitter(kNN), 20, 5);
  const auto b = block_bootstrap_se(d, kNN, exact_fitter(kNN), 20, 5);
  const auto c = block_bootstrap_se(shuffled, kNN, exact_fitter(kNN), 20, 5, 3);
  CHECK(a.se == b.se);
  CHECK(a.se == c.se);
  CHECK(a.estimates == c.estimates);
  CHECK(block_bootstrap_se(d, kNN, exact_fitter(kNN), 20, 6).se != a.se);
}

TEST_CASE("bootstrap standard error agrees with the model standard error") {
  const ClusteredData d = intercept_data(300, 3);
  const FitResult fit = fit_nn_ml(d, kNN);
  const auto r = block_bootstrap_se(d, kNN, exact_fitter(kNN), 200, 4);
  for (int l = 0; l < 2; ++l) {
    CAPTURE(l);
    CHECK(testing::rel_err(r.se(l), fit.se_beta(l)) < 0.3);
  }
}

TEST_CASE("failed replicates are dropped and counted") {
  const ClusteredData d = intercept_data(10, 5);
  int calls = 0;
  std::mutex mu;
  auto flaky = [&](const ClusteredData& s, std::uint64_t seed) {
    {
      std::lock_guard<std::mutex> lock(mu);
      ++calls;
    }
    FitResult f = fit_nn_ml(s, kNN);
    if (seed % 10 == 0) f.converged = false;
    if (seed % 10 == 1) throw NumericError("synthetic failure");
    return f;
  };
  const auto r = block_bootstrap_se(d, kNN, flaky, 100, 6);
  CHECK(calls == 100);
  CHECK(r.used + r.dropped == 100);
  CHECK(r.dropped > 5);
  CHECK(r.estimates.rows() == r.used);

  auto always = [](const ClusteredData&, std::uint64_t) -> FitResult { throw NumericError("no"); };
  CHECK_THROWS_AS(block_bootstrap_se(d, kNN, always, 10, 6), NumericError);
  CHECK_THROWS_AS(block_bootstrap_se(d, kNN, exact_fitter(kNN), 1, 6), std::invalid_argument);
}
