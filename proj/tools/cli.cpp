#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <nlmix/nlmix.hpp>

#include "CLI11.hpp"
#include "json.hpp"

namespace nlmix::cli {
namespace {

using json = nlohmann::ordered_json;

// Reads JSON config files: top-level keys are global options, nested
// objects named after a subcommand hold that subcommand's options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config values must be strings, numbers, booleans or arrays of those");
  }

  static void collect(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        collect(*it, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      items.push_back(std::move(item));
    }
  }
};

struct Global {
  int threads = std::max(1u, std::thread::hardware_concurrency());
  int digits = 17;
};

struct DataArgs {
  std::string input;
  std::string cluster;
  std::string response;
  std::vector<std::string> fixed;
  std::vector<std::string> random;
  bool no_intercept = false;
  bool no_random_intercept = false;
  std::string known_var;
};

struct ModelArgs {
  std::string kind = "NN";
  std::string cov = "general";
  std::string fitter = "auto";
  std::uint64_t seed = 0;
  int nodes = 0;
  int max_iter = 100;
  int min_iter = 10;
  int k_growth = 20;
  int k_max = 500;
  int k_fixed = 0;
  double tolerance = 5e-4;
  std::string rule = "either";
  bool verbose = false;
};

struct DensityArgs {
  std::string kind;
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  std::vector<double> at;
  std::vector<double> grid;
  bool check = false;
  std::string output;
};

struct FitArgs {
  DataArgs data;
  ModelArgs model;
  int replicates = 200;  // bootstrap only
  std::string output;
};

struct SimulateArgs {
  std::vector<int> scenarios{1, 2, 3, 4};
  std::vector<std::string> fitters;
  int replicates = 100;
  int clusters = 100;
  int per_cluster = 5;
  std::uint64_t seed = 0;
  int max_iter = 100;
  int k_max = 500;
  double tolerance = 5e-4;
  std::string output;
  std::string table;
  std::string raw;
  bool progress = false;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string number(double v, int digits) {
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

// JSON numbers rounded to the requested significant digits; null for NaN.
json jnum(double v, int digits) {
  if (!std::isfinite(v)) return nullptr;
  if (digits >= 17) return v;
  return std::stod(number(v, digits));
}

json jvec(const Eigen::VectorXd& v, int digits) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(jnum(v(i), digits));
  return a;
}

json jmat(const Eigen::MatrixXd& m, int digits) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(jvec(m.row(i).transpose(), digits));
  return a;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Writes to the named file, or to `fallback` when the name is empty.
template <class Fn>
void emit(const std::string& path, std::ostream& fallback, Fn&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream f(path);
  if (!f) throw UsageError("cannot open '" + path + "' for writing");
  write(f);
  if (!f) throw NumericError("failed writing '" + path + "'");
}

ColumnMapping mapping_of(const DataArgs& a) {
  ColumnMapping m;
  m.cluster = a.cluster;
  m.response = a.response;
  m.fixed = a.fixed;
  m.random = a.random;
  m.intercept_fixed = !a.no_intercept;
  m.intercept_random = !a.no_random_intercept;
  if (!a.known_var.empty()) m.known_var = a.known_var;
  return m;
}

ModelSpec spec_of(const ModelArgs& a, const ClusteredData& data) {
  ModelSpec s;
  s.kind = parse_kind(a.kind);
  s.cov = {parse_cov_kind(a.cov), data.q()};
  s.residual = data.has_known_var() ? ResidualMode::KnownVariances : ResidualMode::EstimatedScale;
  return s;
}

MCEMConfig mcem_of(const ModelArgs& a, int threads, std::ostream* log) {
  MCEMConfig c;
  c.seed = a.seed;
  c.max_iter = a.max_iter;
  c.min_iter = a.min_iter;
  c.k_growth = a.k_growth;
  c.k_max = a.k_max;
  c.k_fixed = a.k_fixed;
  c.tolerance = a.tolerance;
  c.rule = parse_convergence_rule(a.rule);
  c.loglik_nodes = a.nodes;
  c.threads = threads;
  c.log = log;
  return c;
}

std::string resolved_fitter(const ModelArgs& a, ConvolutionKind kind) {
  std::string f = a.fitter;
  std::transform(f.begin(), f.end(), f.begin(), [](unsigned char c) { return std::tolower(c); });
  if (f == "auto") return kind == ConvolutionKind::NN ? "exact" : "mcem";
  if (f != "exact" && f != "mcem" && f != "quadrature") throw UsageError("unknown fitter '" + a.fitter + "'");
  if (kind == ConvolutionKind::NN && f != "exact") throw UsageError("the NN model is fitted exactly; use --fitter exact");
  if (kind != ConvolutionKind::NN && f == "exact") throw UsageError("only the NN model has an exact fitter");
  return f;
}

FitResult run_fit(const std::string& fitter, const ClusteredData& data, const ModelSpec& spec, const ModelArgs& a,
                  std::uint64_t seed, int threads, std::ostream* log) {
  if (fitter == "exact") return fit_nn_ml(data, spec, {threads});
  if (fitter == "quadrature") {
    QuadratureFitOptions q;
    q.quadrature.nodes = a.nodes;
    q.quadrature.threads = threads;
    q.seed = seed;
    return fit_quadrature_ml(data, spec, q);
  }
  MCEMConfig c = mcem_of(a, threads, log);
  c.seed = seed;
  return fit_mcem(data, spec, c);
}

json data_config(const DataArgs& a) {
  return {{"input", a.input},
          {"cluster", a.cluster},
          {"response", a.response},
          {"fixed", a.fixed},
          {"random", a.random},
          {"intercept", !a.no_intercept},
          {"random_intercept", !a.no_random_intercept},
          {"known_var", a.known_var.empty() ? json(nullptr) : json(a.known_var)}};
}

json model_config(const ModelArgs& a, const std::string& fitter) {
  return {{"kind", a.kind},        {"cov", a.cov},           {"fitter", fitter},
          {"seed", a.seed},        {"nodes", a.nodes},       {"max_iter", a.max_iter},
          {"min_iter", a.min_iter}, {"k_growth", a.k_growth}, {"k_max", a.k_max},
          {"k_fixed", a.k_fixed},  {"tolerance", a.tolerance}, {"rule", a.rule}};
}

json fit_json(const FitResult& f, const ClusteredData& data, int digits) {
  json fe = json::array();
  for (int i = 0; i < data.p(); ++i)
    fe.push_back({{"name", data.fixed_names[i]},
                  {"estimate", jnum(f.theta.beta(i), digits)},
                  {"se", jnum(i < f.se_beta.size() ? f.se_beta(i) : std::nan(""), digits)}});
  const bool known = f.spec.residual == ResidualMode::KnownVariances;
  return {{"method", f.method},
          {"kind", std::string(to_string(f.spec.kind))},
          {"covariance", std::string(to_string(f.spec.cov.kind))},
          {"residual", std::string(to_string(f.spec.residual))},
          {"converged", f.converged},
          {"iterations", f.iterations},
          {"loglik", jnum(f.loglik, digits)},
          {"loglik_nodes", f.loglik_nodes},
          {"fixed_effects", fe},
          {"random_names", data.random_names},
          {"xi", jvec(f.theta.xi, digits)},
          {"sigma1", jmat(f.sigma1, digits)},
          {"sigma2", known ? json(nullptr) : jnum(f.theta.sigma2, digits)},
          {"notes", f.notes}};
}

ClusteredData load_checked(const DataArgs& d, const ModelArgs& m, ModelSpec& spec, std::ostream& err,
                           json& warnings) {
  const ClusteredData data = load_csv(d.input, mapping_of(d));
  spec = spec_of(m, data);
  const ValidationReport v = validate(data, spec);
  warnings = v.warnings;
  for (const auto& w : v.warnings) err << "warning: " << w << '\n';
  if (!v.ok) {
    std::string msg = "invalid data or model";
    for (const auto& e : v.errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  return data;
}

int cmd_density(const DensityArgs& a, const Global& g, std::ostream& out) {
  const ConvolutionKind kind = parse_kind(a.kind);
  const ConvolutionParams p{a.sigma1, a.sigma2};
  try {
    p.validate();
  } catch (const std::domain_error& e) {
    throw UsageError(e.what());
  }
  std::vector<double> ys = a.at;
  if (!a.grid.empty()) {
    if (a.grid.size() != 3 || a.grid[2] < 2 || a.grid[2] != std::floor(a.grid[2]) || !(a.grid[1] > a.grid[0]))
      throw UsageError("--grid takes FROM TO POINTS with FROM < TO and an integer POINTS >= 2");
    const int n = static_cast<int>(a.grid[2]);
    for (int i = 0; i < n; ++i) ys.push_back(a.grid[0] + (a.grid[1] - a.grid[0]) * i / (n - 1));
  }
  if (ys.empty() && !a.check) throw UsageError("give --at values, a --grid, or --check");
  emit(a.output, out, [&](std::ostream& os) {
    if (!ys.empty()) {
      os << "y,pdf\n";
      for (double y : ys) os << number(y, g.digits) << ',' << number(convolution_pdf(kind, y, p), g.digits) << '\n';
    }
    if (a.check) {
      const DensityCheck c = check_density(kind, p);
      os << "# normalization " << number(c.normalization, g.digits) << '\n';
      os << "# variance " << number(c.variance, g.digits) << " (expected "
         << number(a.sigma1 * a.sigma1 + a.sigma2 * a.sigma2, g.digits) << ")\n";
    }
  });
  return kOk;
}

int cmd_fit(const FitArgs& a, const Global& g, bool bootstrap, std::ostream& out, std::ostream& err) {
  ModelSpec spec;
  json warnings;
  const ClusteredData data = load_checked(a.data, a.model, spec, err, warnings);
  const std::string fitter = resolved_fitter(a.model, spec.kind);
  std::ostream* log = a.model.verbose ? &err : nullptr;
  const FitResult fit = run_fit(fitter, data, spec, a.model, a.model.seed, g.threads, log);

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["software"] = {{"name", "nlmix"}, {"version", std::string(version())}};
  doc["command"] = bootstrap ? "bootstrap" : "fit";
  doc["timestamp"] = timestamp();
  doc["seed"] = a.model.seed;
  json cfg = {{"threads", g.threads}, {"digits", g.digits}, {"data", data_config(a.data)},
              {"model", model_config(a.model, fitter)}};
  if (bootstrap) cfg["replicates"] = a.replicates;
  doc["config"] = cfg;
  doc["data"] = {{"clusters", data.num_clusters()}, {"observations", data.num_obs()}, {"warnings", warnings}};
  doc["result"] = fit_json(fit, data, g.digits);

  if (bootstrap) {
    const Fitter refit = [&](const ClusteredData& d, std::uint64_t seed) {
      return run_fit(fitter, d, spec, a.model, seed, 1, nullptr);
    };
    const BootstrapResult b = block_bootstrap_se(data, spec, refit, a.replicates, a.model.seed, g.threads);
    json se = json::object();
    for (std::size_t i = 0; i < b.names.size(); ++i) se[b.names[i]] = jnum(b.se(static_cast<Eigen::Index>(i)), g.digits);
    doc["bootstrap"] = {{"requested", b.requested}, {"used", b.used}, {"dropped", b.dropped}, {"se", se}};
  }
  emit(a.output, out, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
  if (!fit.converged) {
    err << "warning: the fit did not converge";
    for (const auto& n : fit.notes) err << "; " << n;
    err << '\n';
    return kNotConverged;
  }
  return kOk;
}

int cmd_simulate(const SimulateArgs& a, const Global& g, std::ostream& out, std::ostream& err) {
  StudyOptions opt;
  opt.threads = g.threads;
  opt.mcem.max_iter = a.max_iter;
  opt.mcem.k_max = a.k_max;
  opt.mcem.tolerance = a.tolerance;
  if (a.progress) opt.progress = &err;
  std::vector<SimReport> reports;
  for (int sc : a.scenarios) {
    ScenarioSpec s;
    s.scenario = sc;
    s.replicates = a.replicates;
    s.clusters = a.clusters;
    s.per_cluster = a.per_cluster;
    s.seed = a.seed;
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    std::vector<FitterChoice> fitters;
    if (a.fitters.empty()) fitters = default_fitters(sc);
    for (const auto& f : a.fitters) fitters.push_back(parse_fitter(f));
    reports.push_back(run_study(s, fitters, opt));
  }
  emit(a.output, out, [&](std::ostream& os) { write_report_csv(os, reports, g.digits); });
  if (!a.table.empty()) emit(a.table, out, [&](std::ostream& os) { write_report_table(os, reports); });
  if (!a.raw.empty()) emit(a.raw, out, [&](std::ostream& os) { write_raw_csv(os, reports, g.digits); });
  return kOk;
}

void add_data_options(CLI::App* sub, DataArgs& d) {
  sub->add_option("--input,-i", d.input, "long-format CSV file")->required()->check(CLI::ExistingFile);
  sub->add_option("--cluster", d.cluster, "cluster id column")->required();
  sub->add_option("--response", d.response, "response column")->required();
  sub->add_option("--fixed", d.fixed, "fixed-effect covariate columns");
  sub->add_option("--random", d.random, "random-effect covariate columns");
  sub->add_flag("--no-intercept", d.no_intercept, "drop the fixed intercept");
  sub->add_flag("--no-random-intercept", d.no_random_intercept, "drop the random intercept");
  sub->add_option("--known-var", d.known_var, "column of known error variances (meta-analysis)");
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--kind", m.kind, "NN, NL, LN or LL")->capture_default_str();
  sub->add_option("--cov", m.cov, "identity, diagonal, cs or general")->capture_default_str();
  sub->add_option("--fitter", m.fitter, "auto, exact, mcem or quadrature")->capture_default_str();
  sub->add_option("--seed", m.seed, "random seed")->required();
  sub->add_option("--nodes", m.nodes, "quadrature nodes per dimension (0: default)")->check(CLI::NonNegativeNumber);
  sub->add_option("--max-iter", m.max_iter, "MCEM iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--min-iter", m.min_iter, "MCEM iterations before convergence may be declared")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--k-growth", m.k_growth, "MCEM draws added per iteration")->check(CLI::PositiveNumber);
  sub->add_option("--k-max", m.k_max, "MCEM draw cap")->check(CLI::PositiveNumber);
  sub->add_option("--k-fixed", m.k_fixed, "fixed MCEM draw count (0: growing schedule)")->check(CLI::NonNegativeNumber);
  sub->add_option("--tolerance", m.tolerance, "MCEM relative tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--rule", m.rule, "MCEM stopping rule: q, param or either");
  sub->add_flag("--verbose,-v", m.verbose, "log MCEM iterations to stderr");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed models with normal and Laplace random effects and errors"};
  app.set_version_flag("--version", std::string(version()));
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON configuration file (command-line flags take precedence)");
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--digits", g.digits, "significant digits in numeric output (17: round trip)")
      ->check(CLI::Range(1, 17));

  DensityArgs dens;
  auto* density = app.add_subcommand("density", "evaluate a convolution density");
  density->add_option("--kind", dens.kind, "NN, NL, LN or LL")->required();
  density->add_option("--sigma1", dens.sigma1, "random-effect scale (>= 0)")->required();
  density->add_option("--sigma2", dens.sigma2, "error scale (> 0)")->required();
  density->add_option("--at", dens.at, "points at which to evaluate");
  density->add_option("--grid", dens.grid, "FROM TO POINTS")->expected(3);
  density->add_flag("--check", dens.check, "report normalization and variance by quadrature");
  density->add_option("--output,-o", dens.output, "output file (default stdout)");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit a mixed model and write JSON");
  add_data_options(fit_cmd, fit.data);
  add_model_options(fit_cmd, fit.model);
  fit_cmd->add_option("--output,-o", fit.output, "output file (default stdout)");

  FitArgs boot;
  auto* boot_cmd = app.add_subcommand("bootstrap", "fit, then block-bootstrap the clusters");
  add_data_options(boot_cmd, boot.data);
  add_model_options(boot_cmd, boot.model);
  boot_cmd->add_option("--replicates,-B", boot.replicates, "bootstrap replicates")
      ->check(CLI::Range(2, 1000000))
      ->capture_default_str();
  boot_cmd->add_option("--output,-o", boot.output, "output file (default stdout)");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "run the simulation study");
  sim_cmd->add_option("--scenario", sim.scenarios, "scenarios 1-4 (default all)")->check(CLI::Range(1, 4));
  sim_cmd->add_option("--fitters", sim.fitters, "fitters such as nn, nl, ll, nl:quadrature (default: matched)");
  sim_cmd->add_option("--replicates", sim.replicates, "replicates per scenario")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--clusters", sim.clusters, "clusters per data set")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--per-cluster", sim.per_cluster, "observations per cluster")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "random seed")->required();
  sim_cmd->add_option("--max-iter", sim.max_iter, "MCEM iteration cap")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--k-max", sim.k_max, "MCEM draw cap")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--tolerance", sim.tolerance, "MCEM relative tolerance")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--output,-o", sim.output, "report CSV (default stdout)");
  sim_cmd->add_option("--table", sim.table, "formatted table file");
  sim_cmd->add_option("--raw", sim.raw, "replicate-level estimates CSV");
  sim_cmd->add_flag("--progress", sim.progress, "report progress on stderr");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << "run '" << sub->get_name() << " --help' for usage\n";
    else
      err << "run --help for usage\n";
    return kUsage;
  }

  try {
    if (density->parsed()) return cmd_density(dens, g, out);
    if (fit_cmd->parsed()) return cmd_fit(fit, g, false, out, err);
    if (boot_cmd->parsed()) return cmd_fit(boot, g, true, out, err);
    if (sim_cmd->parsed()) return cmd_simulate(sim, g, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace nlmix::cli
