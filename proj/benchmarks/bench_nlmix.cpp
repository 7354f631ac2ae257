#include <benchmark/benchmark.h>

#include <nlmix/nlmix.hpp>

using namespace nlmix;

namespace {

const ClusteredData& scenario_data(int scenario) {
  static const ClusteredData d[4] = {
      [] { ScenarioSpec s; s.scenario = 1; return generate_replicate(s, 0); }(),
      [] { ScenarioSpec s; s.scenario = 2; return generate_replicate(s, 0); }(),
      [] { ScenarioSpec s; s.scenario = 3; return generate_replicate(s, 0); }(),
      [] { ScenarioSpec s; s.scenario = 4; return generate_replicate(s, 0); }(),
  };
  return d[scenario - 1];
}

Theta truth() {
  ScenarioSpec s;
  Theta t;
  t.beta = s.beta;
  t.sigma2 = s.sigma2;
  t.xi = sigma1_to_xi(s.sigma1, {CovKind::GeneralSPD, 2}, s.sigma2);
  return t;
}

void BM_Density(benchmark::State& state) {
  const auto kind = static_cast<ConvolutionKind>(state.range(0));
  const ConvolutionParams p{1.3, 0.8};
  double y = -4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(convolution_logpdf(kind, y, p));
    y = y > 4 ? -4 : y + 0.01;
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_Density)->DenseRange(0, 3);

void BM_LaplaceSampler(benchmark::State& state) {
  Rng rng = make_stream(1, {});
  for (auto _ : state) benchmark::DoNotOptimize(sample_laplace_scale_mixture(0.0, 1.0, rng));
}
BENCHMARK(BM_LaplaceSampler);

void BM_XiToSigma1(benchmark::State& state) {
  const Eigen::Vector3d xi(-0.18, 0.21, -0.4);
  for (auto _ : state) benchmark::DoNotOptimize(xi_to_sigma1(xi, {CovKind::GeneralSPD, 2}, 2.0));
}
BENCHMARK(BM_XiToSigma1);

void BM_NnLoglik(benchmark::State& state) {
  const auto& d = scenario_data(1);
  const Theta t = truth();
  const ModelSpec spec{ConvolutionKind::NN, {CovKind::GeneralSPD, 2}, {}};
  for (auto _ : state) benchmark::DoNotOptimize(loglik_marginal(d, spec, t.beta, t.sigma1(spec.cov), t.sigma2));
}
BENCHMARK(BM_NnLoglik);

void BM_NnFit(benchmark::State& state) {
  const auto& d = scenario_data(1);
  const ModelSpec spec{ConvolutionKind::NN, {CovKind::GeneralSPD, 2}, {}};
  for (auto _ : state) benchmark::DoNotOptimize(fit_nn_ml(d, spec));
}
BENCHMARK(BM_NnFit)->Unit(benchmark::kMillisecond);

void BM_IntegratedLoglik(benchmark::State& state) {
  const auto& d = scenario_data(2);
  const ModelSpec spec{ConvolutionKind::NL, {CovKind::GeneralSPD, 2}, {}};
  QuadratureOptions o;
  o.nodes = static_cast<int>(state.range(0));
  const Theta t = truth();
  for (auto _ : state) benchmark::DoNotOptimize(integrated_loglik(t, d, spec, o));
}
BENCHMARK(BM_IntegratedLoglik)->Arg(11)->Arg(25)->Unit(benchmark::kMillisecond);

void BM_EStep(benchmark::State& state) {
  const auto& d = scenario_data(4);
  const ModelSpec spec{ConvolutionKind::LL, {CovKind::GeneralSPD, 2}, {}};
  const Theta t = truth();
  Rng rng = make_stream(2, {});
  for (auto _ : state)
    for (const auto& c : d.clusters) benchmark::DoNotOptimize(sample_w_conditional(c, t, spec, 20, rng));
  state.SetItemsProcessed(state.iterations() * d.num_clusters() * 20);
}
BENCHMARK(BM_EStep)->Unit(benchmark::kMillisecond);

void BM_MStep(benchmark::State& state) {
  const auto& d = scenario_data(4);
  const ModelSpec spec{ConvolutionKind::LL, {CovKind::GeneralSPD, 2}, {}};
  const Theta t = truth();
  Rng rng = make_stream(3, {});
  Draws draws;
  for (const auto& c : d.clusters)
    draws.push_back(sample_w_conditional(c, t, spec, static_cast<int>(state.range(0)), rng));
  for (auto _ : state) benchmark::DoNotOptimize(m_step(draws, d, spec, t));
}
BENCHMARK(BM_MStep)->Arg(20)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
