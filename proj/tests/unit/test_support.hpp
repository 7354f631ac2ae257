#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlmix/nlmix.hpp>

namespace testing {

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Moments {
  double mean = 0, var = 0, excess_kurtosis = 0;
};

inline Moments moments(const std::vector<double>& x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  for (double v : x) m.mean += v;
  m.mean /= n;
  double m2 = 0, m4 = 0;
  for (double v : x) {
    const double d = (v - m.mean) * (v - m.mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  m.var = m2;
  m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  return m;
}

// Random-intercept-and-slope data with one cluster per id, small and fixed.
inline nlmix::ClusteredData tiny_data() {
  nlmix::ClusteredData d;
  d.fixed_names = {nlmix::kInterceptName, "x"};
  d.random_names = {nlmix::kInterceptName};
  const double ys[3][3] = {{1.0, 2.5, 2.9}, {0.2, 1.1, 2.4}, {2.0, 3.1, 4.6}};
  for (int i = 0; i < 3; ++i) {
    nlmix::Cluster c;
    c.id = "k" + std::to_string(i);
    c.y = Eigen::Map<const Eigen::Vector3d>(ys[i]);
    c.X.resize(3, 2);
    c.X << 1, 0, 1, 1, 1, 2;
    c.Z = c.X.leftCols(1);
    d.clusters.push_back(c);
  }
  return d;
}

}  // namespace testing

namespace testing {

// Two-sided one-sample KS test p-value (asymptotic Kolmogorov distribution
// with the Stephens small-sample correction).
template <class Cdf>
double ks_pvalue(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k < 200; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace testing
