#include "nlmix/simulation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>

#include "nlmix/distributions.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/lme.hpp"
#include "parallel.hpp"

namespace nlmix {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, int digits) {
  if (std::isnan(v)) return "NA";
  if (digits >= 17) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  }
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::uint64_t fitter_seed(std::uint64_t seed, int r, const FitterChoice& f) {
  Rng rng = make_stream(seed, {static_cast<std::uint64_t>(r),
                               1000u + 10u * static_cast<unsigned>(f.kind) + static_cast<unsigned>(f.backend)});
  return rng();
}

}  // namespace

ConvolutionKind ScenarioSpec::truth() const {
  switch (scenario) {
    case 1: return ConvolutionKind::NN;
    case 2: return ConvolutionKind::NL;
    case 3: return ConvolutionKind::LN;
    case 4: return ConvolutionKind::LL;
  }
  throw std::invalid_argument("scenario must be 1, 2, 3 or 4");
}

void ScenarioSpec::validate() const {
  truth();
  if (clusters < 1 || per_cluster < 1 || replicates < 1)
    throw std::invalid_argument("clusters, per-cluster size and replicates must be positive");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  if (!sigma1.isApprox(sigma1.transpose()) || sigma1.determinant() <= 0.0 || sigma1(0, 0) <= 0.0)
    throw std::invalid_argument("Sigma1 must be symmetric positive definite");
}

ClusteredData generate_scenario(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  const ConvolutionKind kind = spec.truth();
  const Eigen::MatrixXd root = psd_root(spec.sigma1);
  ClusteredData data;
  data.fixed_names = {kInterceptName, "x1"};
  data.random_names = {kInterceptName, "x1"};
  const int n = spec.per_cluster;
  for (int i = 0; i < spec.clusters; ++i) {
    Cluster c;
    char id[32];
    std::snprintf(id, sizeof(id), "c%05d", i + 1);
    c.id = id;
    const double gamma = standard_normal(rng);
    c.X.resize(n, 2);
    for (int j = 0; j < n; ++j) {
      c.X(j, 0) = 1.0;
      c.X(j, 1) = gamma + standard_normal(rng);
    }
    c.Z = c.X;
    Eigen::VectorXd b = sample_mv_normal(root, rng);
    if (random_effect_is_laplace(kind)) b *= std::sqrt(standard_exponential(rng));
    c.y = c.X * spec.beta + c.Z * b;
    for (int j = 0; j < n; ++j)
      c.y(j) += error_is_laplace(kind) ? sample_laplace_scale_mixture(0.0, spec.sigma2, rng)
                                       : spec.sigma2 * standard_normal(rng);
    data.clusters.push_back(std::move(c));
  }
  return data;
}

ClusteredData generate_replicate(const ScenarioSpec& spec, int r) {
  Rng rng = make_stream(spec.seed, {static_cast<std::uint64_t>(r)});
  return generate_scenario(spec, rng);
}

std::string FitterChoice::label() const {
  std::string s(to_string(kind));
  if (backend == Backend::Quadrature) s += "-quad";
  return s;
}

FitterChoice parse_fitter(std::string_view text) {
  const std::string s = lower(text);
  const auto colon = s.find(':');
  FitterChoice f;
  f.kind = parse_kind(s.substr(0, colon));
  if (f.kind == ConvolutionKind::NN) {
    f.backend = Backend::Exact;
    if (colon != std::string::npos && s.substr(colon + 1) != "exact")
      throw std::invalid_argument("the NN model is always fitted exactly");
    return f;
  }
  f.backend = Backend::Mcem;
  if (colon != std::string::npos) {
    const std::string b = s.substr(colon + 1);
    if (b == "quadrature" || b == "quad") f.backend = Backend::Quadrature;
    else if (b != "mcem") throw std::invalid_argument("unknown fitter backend '" + b + "' (expected mcem or quadrature)");
  }
  return f;
}

std::vector<FitterChoice> default_fitters(int scenario) {
  std::vector<FitterChoice> out{{ConvolutionKind::NN, Backend::Exact}};
  auto add = [&](ConvolutionKind k) { out.push_back({k, Backend::Mcem}); };
  switch (scenario) {
    case 1:
      add(ConvolutionKind::NL);
      add(ConvolutionKind::LN);
      add(ConvolutionKind::LL);
      break;
    case 2: add(ConvolutionKind::NL); break;
    case 3: add(ConvolutionKind::LN); break;
    case 4: add(ConvolutionKind::LL); break;
    default: throw std::invalid_argument("scenario must be 1, 2, 3 or 4");
  }
  return out;
}

FitResult fit_with(const FitterChoice& choice, const ClusteredData& data, const ModelSpec& spec_in,
                   const StudyOptions& opt, std::uint64_t seed) {
  ModelSpec spec = spec_in;
  spec.kind = choice.kind;
  if (choice.kind == ConvolutionKind::NN || choice.backend == Backend::Exact) return fit_nn_ml(data, spec);
  if (choice.backend == Backend::Quadrature) {
    QuadratureFitOptions q = opt.quadrature;
    q.seed = seed;
    return fit_quadrature_ml(data, spec, q);
  }
  MCEMConfig c = opt.mcem;
  c.seed = seed;
  return fit_mcem(data, spec, c);
}

SimReport run_study(const ScenarioSpec& spec, const std::vector<FitterChoice>& fitters, const StudyOptions& opt) {
  spec.validate();
  const auto nn = std::find_if(fitters.begin(), fitters.end(),
                               [](const FitterChoice& f) { return f.kind == ConvolutionKind::NN; });
  if (nn == fitters.end()) throw std::invalid_argument("the study needs the NN fitter as its baseline");

  const ModelSpec model{ConvolutionKind::NN, {CovKind::GeneralSPD, 2}, ResidualMode::EstimatedScale};
  SimReport rep;
  rep.spec = spec;
  rep.parameters = {"beta0", "beta1", "xi1", "xi2", "xi3"};
  rep.truth.resize(5);
  rep.truth << spec.beta, sigma1_to_xi(spec.sigma1, model.cov, spec.sigma2);

  const int r_total = spec.replicates;
  const auto f_total = fitters.size();
  std::vector<Eigen::MatrixXd> raw(f_total, Eigen::MatrixXd::Constant(r_total, 5, kNaN));
  std::mutex progress_mutex;
  detail::parallel_for(static_cast<std::size_t>(r_total), opt.threads, [&](std::size_t ri) {
    const int r = static_cast<int>(ri);
    const ClusteredData data = generate_replicate(spec, r);
    StudyOptions inner = opt;
    inner.mcem.threads = 1;
    inner.quadrature.quadrature.threads = 1;
    for (std::size_t f = 0; f < f_total; ++f) {
      try {
        const FitResult fit = fit_with(fitters[f], data, model, inner, fitter_seed(spec.seed, r, fitters[f]));
        if (fit.converged) raw[f].row(r) << fit.theta.beta.transpose(), fit.theta.xi.transpose();
      } catch (const NumericError&) {
      }
    }
    if (opt.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      *opt.progress << "scenario=" << spec.scenario << " replicate=" << r + 1 << "/" << r_total << '\n';
    }
  });

  for (std::size_t f = 0; f < f_total; ++f) {
    ModelReport m;
    m.fitter = fitters[f];
    m.raw = raw[f];
    m.ok.resize(r_total);
    for (int r = 0; r < r_total; ++r) {
      m.ok[r] = m.raw.row(r).allFinite();
      m.converged += m.ok[r] ? 1 : 0;
    }
    m.excluded = r_total - m.converged;
    for (int p = 0; p < 5; ++p) {
      CellStats cell;
      if (m.converged == 0) {
        cell.bias = cell.variance = cell.mse = kNaN;
      } else {
        double mean = 0.0;
        for (int r = 0; r < r_total; ++r)
          if (m.ok[r]) mean += m.raw(r, p);
        mean /= m.converged;
        double var = 0.0, mse = 0.0;
        for (int r = 0; r < r_total; ++r)
          if (m.ok[r]) {
            var += (m.raw(r, p) - mean) * (m.raw(r, p) - mean);
            mse += (m.raw(r, p) - rep.truth(p)) * (m.raw(r, p) - rep.truth(p));
          }
        cell.bias = mean - rep.truth(p);
        cell.variance = var / m.converged;
        cell.mse = mse / m.converged;
      }
      m.cells.push_back(cell);
    }
    rep.models.push_back(std::move(m));
  }
  const ModelReport& base = rep.models[nn - fitters.begin()];
  for (auto& m : rep.models)
    for (int p = 0; p < 5; ++p) {
      CellStats& c = m.cells[p];
      if (m.fitter.kind == ConvolutionKind::NN) {
        c.rel_bias = c.rel_variance = c.rel_mse = kNaN;
      } else {
        c.rel_bias = c.bias / base.cells[p].bias;
        c.rel_variance = c.variance / base.cells[p].variance;
        c.rel_mse = c.mse / base.cells[p].mse;
      }
    }
  return rep;
}

void write_report_csv(std::ostream& out, const std::vector<SimReport>& reports, int digits) {
  out << "scenario,model,parameter,truth,bias,variance,mse,rel_bias,rel_variance,rel_mse,n_converged,n_excluded\n";
  for (const auto& rep : reports)
    for (const auto& m : rep.models)
      for (std::size_t p = 0; p < rep.parameters.size(); ++p) {
        const CellStats& c = m.cells[p];
        out << rep.spec.scenario << ',' << m.fitter.label() << ',' << rep.parameters[p] << ','
            << fmt(rep.truth(p), digits) << ',' << fmt(c.bias, digits) << ',' << fmt(c.variance, digits) << ','
            << fmt(c.mse, digits) << ',' << fmt(c.rel_bias, digits) << ',' << fmt(c.rel_variance, digits) << ','
            << fmt(c.rel_mse, digits) << ',' << m.converged << ',' << m.excluded << '\n';
      }
}

void write_report_table(std::ostream& out, const std::vector<SimReport>& reports) {
  struct Block {
    const char* title;
    double CellStats::*abs;
    double CellStats::*rel;
  };
  const Block blocks[] = {{"Bias", &CellStats::bias, &CellStats::rel_bias},
                          {"Variance", &CellStats::variance, &CellStats::rel_variance},
                          {"MSE", &CellStats::mse, &CellStats::rel_mse}};
  for (const auto& b : blocks) {
    out << b.title << " (NN absolute in parentheses, other models relative to NN)\n";
    out << std::left << std::setw(10) << "scenario" << std::setw(10) << "model";
    if (!reports.empty())
      for (const auto& p : reports.front().parameters) out << std::right << std::setw(11) << p;
    out << std::right << std::setw(8) << "conv" << '\n';
    for (const auto& rep : reports)
      for (const auto& m : rep.models) {
        out << std::left << std::setw(10) << rep.spec.scenario << std::setw(10) << m.fitter.label() << std::right;
        for (const auto& c : m.cells) {
          std::ostringstream cell;
          cell << std::fixed << std::setprecision(3);
          if (m.fitter.kind == ConvolutionKind::NN) cell << '(' << c.*(b.abs) << ')';
          else cell << c.*(b.rel);
          out << std::setw(11) << cell.str();
        }
        out << std::setw(8) << m.converged << '\n';
      }
    out << '\n';
  }
}

void write_raw_csv(std::ostream& out, const std::vector<SimReport>& reports, int digits) {
  out << "scenario,model,replicate,converged";
  if (!reports.empty())
    for (const auto& p : reports.front().parameters) out << ',' << p;
  out << '\n';
  for (const auto& rep : reports)
    for (const auto& m : rep.models)
      for (Eigen::Index r = 0; r < m.raw.rows(); ++r) {
        out << rep.spec.scenario << ',' << m.fitter.label() << ',' << r + 1 << ',' << (m.ok[r] ? 1 : 0);
        for (Eigen::Index p = 0; p < m.raw.cols(); ++p) out << ',' << fmt(m.raw(r, p), digits);
        out << '\n';
      }
}

}  // namespace nlmix
