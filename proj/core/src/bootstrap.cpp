#include "nlmix/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "nlmix/errors.hpp"
#include "nlmix/random.hpp"
#include "parallel.hpp"

namespace nlmix {

Eigen::VectorXd bootstrap_parameters(const FitResult& fit) {
  const bool scale = fit.spec.residual == ResidualMode::EstimatedScale;
  Eigen::VectorXd v(fit.theta.beta.size() + fit.theta.xi.size() + (scale ? 1 : 0));
  v << fit.theta.beta, fit.theta.xi;
  if (scale) v(v.size() - 1) = fit.theta.sigma2;
  return v;
}

BootstrapResult block_bootstrap_se(const ClusteredData& data, const ModelSpec& spec, const Fitter& fitter, int b,
                                   std::uint64_t seed, int threads) {
  if (b < 2) throw std::invalid_argument("bootstrap needs at least 2 replicates");
  data.check();
  std::vector<std::size_t> order(data.clusters.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return data.clusters[a].id < data.clusters[c].id; });

  const std::size_t m = order.size();
  std::vector<std::optional<Eigen::VectorXd>> results(b);
  detail::parallel_for(static_cast<std::size_t>(b), threads, [&](std::size_t r) {
    Rng rng = make_stream(seed, {static_cast<std::uint64_t>(r)});
    ClusteredData sample;
    sample.fixed_names = data.fixed_names;
    sample.random_names = data.random_names;
    sample.clusters.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto k = std::min(m - 1, static_cast<std::size_t>(open_uniform(rng) * static_cast<double>(m)));
      Cluster c = data.clusters[order[k]];
      c.id += "#" + std::to_string(j);
      sample.clusters.push_back(std::move(c));
    }
    const std::uint64_t fit_seed = rng();
    try {
      const FitResult fit = fitter(sample, fit_seed);
      const Eigen::VectorXd v = bootstrap_parameters(fit);
      if (fit.converged && v.allFinite()) results[r] = v;
    } catch (const NumericError&) {
    } catch (const DataError&) {
    }
  });

  BootstrapResult res;
  res.requested = b;
  res.names = data.fixed_names;
  for (int i = 0; i < spec.cov.param_count(); ++i) res.names.push_back(xi_name(i));
  if (spec.residual == ResidualMode::EstimatedScale) res.names.push_back("sigma2");
  for (const auto& r : results)
    if (r) ++res.used;
  res.dropped = b - res.used;
  if (res.dropped * 5 > b)
    throw NumericError("bootstrap dropped " + std::to_string(res.dropped) + " of " + std::to_string(b) +
                       " replicates (more than 20%)");
  if (res.used < 2) throw NumericError("fewer than two bootstrap replicates converged");
  const auto dim = static_cast<Eigen::Index>(res.names.size());
  res.estimates.resize(res.used, dim);
  int row = 0;
  for (const auto& r : results)
    if (r) {
      if (r->size() != dim) throw std::logic_error("fitter returned a parameter vector of unexpected size");
      res.estimates.row(row++) = r->transpose();
    }
  const Eigen::RowVectorXd mean = res.estimates.colwise().mean();
  res.se = ((res.estimates.rowwise() - mean).array().square().colwise().sum() / (res.used - 1)).sqrt().transpose();
  return res;
}

}  // namespace nlmix
