#include "nlmix/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "gaussian.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/quadrature.hpp"
#include "parallel.hpp"

namespace nlmix {
namespace {

// Splits one CSV record; handles double-quoted fields with "" escapes.
std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& cell, std::size_t line_no, const std::string& column) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (t.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw DataError("row " + std::to_string(line_no) + ", column '" + column + "': cannot parse '" + t +
                    "' as a finite number");
  return v;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(ResidualMode mode) {
  return mode == ResidualMode::KnownVariances ? "known_variances" : "estimated_scale";
}

int ClusteredData::num_obs() const {
  int n = 0;
  for (const auto& c : clusters) n += c.size();
  return n;
}

bool ClusteredData::has_known_var() const {
  return !clusters.empty() && clusters.front().known_var.has_value();
}

void ClusteredData::check() const {
  if (clusters.empty()) throw DataError("data set has no clusters");
  const bool kv = has_known_var();
  for (const auto& c : clusters) {
    const auto n = c.y.size();
    if (n < 1) throw DataError("cluster '" + c.id + "' is empty");
    if (c.X.rows() != n || c.X.cols() != p())
      throw DataError("cluster '" + c.id + "': X must be " + std::to_string(n) + "x" + std::to_string(p()));
    if (c.Z.rows() != n || c.Z.cols() != q())
      throw DataError("cluster '" + c.id + "': Z must be " + std::to_string(n) + "x" + std::to_string(q()));
    if (!c.y.allFinite() || !c.X.allFinite() || !c.Z.allFinite())
      throw DataError("cluster '" + c.id + "' contains non-finite values");
    if (c.known_var.has_value() != kv)
      throw DataError("known variances must be present for all clusters or none");
    if (kv && (c.known_var->size() != n || !c.known_var->allFinite()))
      throw DataError("cluster '" + c.id + "': known variances malformed");
  }
}

ClusteredData read_csv(std::istream& in, const ColumnMapping& mapping) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV input is empty (a header row is required)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_record(line);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[trim(header[i])] = i;
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("missing column '" + name + "' in CSV header");
    return it->second;
  };

  const std::size_t id_col = column(mapping.cluster);
  const std::size_t y_col = column(mapping.response);
  std::vector<std::size_t> x_cols, z_cols;
  for (const auto& n : mapping.fixed) x_cols.push_back(column(n));
  for (const auto& n : mapping.random) z_cols.push_back(column(n));
  std::optional<std::size_t> kv_col;
  if (mapping.known_var) kv_col = column(*mapping.known_var);

  ClusteredData data;
  if (mapping.intercept_fixed) data.fixed_names.push_back(kInterceptName);
  data.fixed_names.insert(data.fixed_names.end(), mapping.fixed.begin(), mapping.fixed.end());
  if (mapping.intercept_random) data.random_names.push_back(kInterceptName);
  data.random_names.insert(data.random_names.end(), mapping.random.begin(), mapping.random.end());

  struct Rows {
    std::vector<double> y, kv;
    std::vector<std::vector<double>> x, z;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> groups;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_record(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    const std::string id = trim(cells[id_col]);
    auto [it, inserted] = groups.try_emplace(id);
    if (inserted) order.push_back(id);
    Rows& r = it->second;
    r.y.push_back(parse_number(cells[y_col], line_no, mapping.response));
    std::vector<double> xr, zr;
    if (mapping.intercept_fixed) xr.push_back(1.0);
    for (std::size_t k = 0; k < x_cols.size(); ++k)
      xr.push_back(parse_number(cells[x_cols[k]], line_no, mapping.fixed[k]));
    if (mapping.intercept_random) zr.push_back(1.0);
    for (std::size_t k = 0; k < z_cols.size(); ++k)
      zr.push_back(parse_number(cells[z_cols[k]], line_no, mapping.random[k]));
    r.x.push_back(std::move(xr));
    r.z.push_back(std::move(zr));
    if (kv_col) r.kv.push_back(parse_number(cells[*kv_col], line_no, *mapping.known_var));
  }
  if (order.empty()) throw DataError("CSV input has a header but no data rows");

  const int p = data.p(), q = data.q();
  for (const auto& id : order) {
    const Rows& r = groups.at(id);
    const int n = static_cast<int>(r.y.size());
    Cluster c;
    c.id = id;
    c.y = Eigen::Map<const Eigen::VectorXd>(r.y.data(), n);
    c.X.resize(n, p);
    c.Z.resize(n, q);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) c.X(i, j) = r.x[i][j];
      for (int j = 0; j < q; ++j) c.Z(i, j) = r.z[i][j];
    }
    if (kv_col) c.known_var = Eigen::Map<const Eigen::VectorXd>(r.kv.data(), n);
    data.clusters.push_back(std::move(c));
  }
  data.check();
  return data;
}

ClusteredData load_csv(const std::string& path, const ColumnMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, mapping);
}

ColumnMapping round_trip_mapping(const ClusteredData& data) {
  ColumnMapping m;
  m.cluster = "cluster";
  m.response = "y";
  for (const auto& n : data.fixed_names) {
    if (n == kInterceptName) m.intercept_fixed = true;
    else m.fixed.push_back(n);
  }
  for (const auto& n : data.random_names) {
    if (n == kInterceptName) m.intercept_random = true;
    else m.random.push_back(n);
  }
  if (data.has_known_var()) m.known_var = "known_var";
  return m;
}

void write_csv(std::ostream& out, const ClusteredData& data) {
  const ColumnMapping m = round_trip_mapping(data);
  // Each covariate column is written once even if it appears in both X and Z.
  std::vector<std::pair<std::string, std::pair<bool, int>>> cols;  // name -> (in X?, index)
  auto known = [&](const std::string& n) {
    for (const auto& c : cols)
      if (c.first == n) return true;
    return false;
  };
  for (int j = 0; j < data.p(); ++j)
    if (data.fixed_names[j] != kInterceptName) cols.push_back({data.fixed_names[j], {true, j}});
  for (int j = 0; j < data.q(); ++j)
    if (data.random_names[j] != kInterceptName && !known(data.random_names[j]))
      cols.push_back({data.random_names[j], {false, j}});

  out << "cluster,y";
  for (const auto& c : cols) out << ',' << quote_if_needed(c.first);
  if (m.known_var) out << ",known_var";
  out << '\n';
  for (const auto& cl : data.clusters) {
    for (int i = 0; i < cl.size(); ++i) {
      out << quote_if_needed(cl.id) << ',' << format_number(cl.y(i));
      for (const auto& c : cols)
        out << ',' << format_number(c.second.first ? cl.X(i, c.second.second) : cl.Z(i, c.second.second));
      if (m.known_var) out << ',' << format_number((*cl.known_var)(i));
      out << '\n';
    }
  }
}

void save_csv(const std::string& path, const ClusteredData& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, data);
}

ValidationReport validate(const ClusteredData& data, const ModelSpec& spec) {
  ValidationReport rep;
  auto error = [&](std::string msg) {
    rep.ok = false;
    rep.errors.push_back(std::move(msg));
  };
  try {
    data.check();
  } catch (const DataError& e) {
    error(e.what());
    return rep;
  }
  if (data.p() < 1) error("model has no fixed-effect columns");
  if (data.q() < 1) error("model has no random-effect columns");
  if (spec.cov.dim != data.q())
    error("covariance structure has dimension " + std::to_string(spec.cov.dim) + " but Z has " +
          std::to_string(data.q()) + " columns");
  if (spec.cov.kind == CovKind::CompoundSymmetric && spec.cov.dim < 2)
    error("compound-symmetric covariance needs at least two random effects");

  if (data.p() >= 1) {
    Eigen::MatrixXd stacked(data.num_obs(), data.p());
    int row = 0;
    for (const auto& c : data.clusters) {
      stacked.middleRows(row, c.size()) = c.X;
      row += c.size();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
    if (qr.rank() < data.p())
      error("fixed-effect design is rank deficient (rank " + std::to_string(qr.rank()) + " < p = " +
            std::to_string(data.p()) + ")");
  }

  int min_n = data.clusters.front().size();
  for (const auto& c : data.clusters) min_n = std::min(min_n, c.size());
  if (data.q() > min_n)
    rep.warnings.push_back("q = " + std::to_string(data.q()) + " exceeds the smallest cluster size " +
                           std::to_string(min_n));

  if (spec.residual == ResidualMode::KnownVariances) {
    if (!data.has_known_var()) {
      error("known-variance mode requires a known-variance column");
    } else {
      for (const auto& c : data.clusters)
        if ((c.known_var->array() <= 0.0).any()) {
          error("cluster '" + c.id + "' has a non-positive known variance");
          break;
        }
    }
  }
  return rep;
}

Eigen::VectorXd residual_scale(const Cluster& c, ResidualMode mode) {
  if (mode == ResidualMode::KnownVariances) {
    if (!c.known_var) throw DataError("known-variance mode requires known variances");
    return *c.known_var;
  }
  return Eigen::VectorXd::Ones(c.size());
}

int default_quadrature_nodes(int q) {
  if (q <= 2) return 25;
  if (q <= 4) return 11;
  return 5;
}

double loglik_marginal(const ClusteredData& data, const ModelSpec& spec, const Eigen::VectorXd& beta,
                       const Eigen::MatrixXd& sigma1, double sigma2, int nodes, int threads) {
  data.check();
  if (beta.size() != data.p() || sigma1.rows() != data.q() || sigma1.cols() != data.q())
    throw std::domain_error("loglik_marginal: parameter dimensions do not match the data");
  const double s2 = spec.residual == ResidualMode::KnownVariances ? 1.0 : sigma2;
  if (spec.kind != ConvolutionKind::NN)
    return marginal_loglik_quadrature(data, spec, beta, sigma1, s2, nodes > 0 ? nodes : default_quadrature_nodes(data.q()),
                                      threads);

  std::vector<double> parts(data.clusters.size());
  detail::parallel_for(parts.size(), threads, [&](std::size_t i) {
    const Cluster& c = data.clusters[i];
    Eigen::MatrixXd v = c.Z * sigma1 * c.Z.transpose();
    v.diagonal() += s2 * s2 * residual_scale(c, spec.residual);
    parts[i] = detail::gaussian_logpdf(c.y - c.X * beta, v);
  });
  double total = 0.0;
  for (double v : parts) total += v;
  return total;
}

}  // namespace nlmix
