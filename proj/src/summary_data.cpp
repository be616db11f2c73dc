#include "cismvmr/summary_data.hpp"

#include "cismvmr/errors.hpp"
#include "cismvmr/pruning.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cismvmr {
namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

std::optional<double> parse_double(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    // from_chars rejects "inf"/"nan" spellings some writers use; keep them
    // parseable so validation can report them.
    if (cell == "inf" || cell == "Inf" || cell == "-inf" || cell == "-Inf" || cell == "nan" ||
        cell == "NaN" || cell == "NA") {
      return std::strtod(cell == "NA" ? "nan" : cell.c_str(), nullptr);
    }
    return std::nullopt;
  }
  return v;
}

double require_double(const std::string& cell, const std::string& where) {
  auto v = parse_double(cell);
  if (!v) throw ParseError("non-numeric cell '" + cell + "' at " + where);
  return *v;
}

std::vector<std::vector<std::string>> read_rows(std::istream& in, char& delim) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    if (first) {
      delim = detect_delimiter(line);
      first = false;
    }
    rows.push_back(split(line, delim));
  }
  return rows;
}

std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

}  // namespace

ExposureCorrelation::ExposureCorrelation(MatrixXd phi) : phi_(std::move(phi)) {
  if (phi_.rows() != phi_.cols() || phi_.rows() == 0) {
    throw ValidationError("exposure correlation must be a non-empty square matrix");
  }
  if (!phi_.allFinite()) throw ValidationError("exposure correlation has non-finite entries");
  if (max_abs_asymmetry(phi_) > kCorrelationTolerance) {
    throw ValidationError("exposure correlation is not symmetric");
  }
  if ((phi_.diagonal().array() - 1.0).abs().maxCoeff() > kCorrelationTolerance) {
    throw ValidationError("exposure correlation must have a unit diagonal");
  }
  if (phi_.cwiseAbs().maxCoeff() > 1.0 + kCorrelationTolerance) {
    throw ValidationError("exposure correlation entries must lie in [-1, 1]");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(phi_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -kCorrelationTolerance) {
    throw ValidationError("exposure correlation is not positive semi-definite");
  }
}

ExposureCorrelation ExposureCorrelation::identity(Eigen::Index k) {
  return ExposureCorrelation(MatrixXd::Identity(k, k));
}

bool ValidationReport::has(const std::string& kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.kind == kind; });
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& v : violations) {
    os << v.kind;
    if (!v.where.empty()) {
      os << " at (";
      for (std::size_t i = 0; i < v.where.size(); ++i) os << (i ? "," : "") << v.where[i];
      os << ")";
    }
    if (!v.detail.empty()) os << ": " << v.detail;
    os << "\n";
  }
  return os.str();
}

ValidationReport validate(const SummaryDataset& d) {
  ValidationReport r;
  auto add = [&](std::string kind, std::vector<Eigen::Index> where, std::string detail = {}) {
    r.violations.push_back({std::move(kind), std::move(where), std::move(detail)});
  };

  const Eigen::Index J = d.beta_y.size();
  const Eigen::Index K = d.beta_x.cols();
  if (J < 1) add("no_variants", {});
  if (K < 1) add("no_exposures", {});

  bool shapes_ok = true;
  auto shape = [&](bool ok, const char* what) {
    if (!ok) {
      add("dimension_mismatch", {}, what);
      shapes_ok = false;
    }
  };
  shape(d.beta_x.rows() == J, "beta_x rows != J");
  shape(d.se_x.rows() == J && d.se_x.cols() == K, "se_x shape != J x K");
  shape(d.se_y.size() == J, "se_y length != J");
  shape(d.rho.rows() == J && d.rho.cols() == J, "rho shape != J x J");
  shape(static_cast<Eigen::Index>(d.variant_ids.size()) == J, "variant_ids length != J");
  shape(static_cast<Eigen::Index>(d.exposure_ids.size()) == K, "exposure_ids length != K");
  if (!shapes_ok) return r;

  std::unordered_set<std::string> seen;
  for (Eigen::Index j = 0; j < J; ++j) {
    if (!seen.insert(d.variant_ids[j]).second) add("duplicate_variant", {j}, d.variant_ids[j]);
  }

  for (Eigen::Index j = 0; j < J; ++j) {
    if (!std::isfinite(d.beta_y(j))) add("nonfinite_beta_y", {j});
    if (!(std::isfinite(d.se_y(j)) && d.se_y(j) > 0.0)) add("nonpositive_se_y", {j});
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!std::isfinite(d.beta_x(j, k))) add("nonfinite_beta_x", {j, k});
      if (!(std::isfinite(d.se_x(j, k)) && d.se_x(j, k) > 0.0)) add("nonpositive_se_x", {j, k});
    }
  }

  for (Eigen::Index a = 0; a < J; ++a) {
    const double diag = d.rho(a, a);
    if (!std::isfinite(diag) || std::abs(diag - 1.0) > kCorrelationTolerance) {
      add("rho_diagonal", {a, a});
    }
    for (Eigen::Index b = a + 1; b < J; ++b) {
      const double x = d.rho(a, b);
      const double y = d.rho(b, a);
      if (!std::isfinite(x) || !std::isfinite(y)) {
        add("rho_nonfinite", {a, b});
        continue;
      }
      if (std::abs(x - y) > kCorrelationTolerance) add("rho_asymmetry", {a, b});
      if (std::abs(x) > 1.0 + kCorrelationTolerance || std::abs(y) > 1.0 + kCorrelationTolerance) {
        add("rho_out_of_range", {a, b});
      }
    }
  }
  return r;
}

const SummaryDataset& require_valid(const SummaryDataset& d) {
  auto report = validate(d);
  if (!report.ok()) throw ValidationError("invalid summary data:\n" + report.summary());
  return d;
}

void repair_correlation(MatrixXd& rho, std::vector<std::string>& warnings) {
  if (rho.rows() != rho.cols() || rho.size() == 0 || !rho.allFinite()) return;
  const double asym = max_abs_asymmetry(rho);
  if (asym > kCorrelationTolerance && asym <= kRepairTolerance) {
    rho = 0.5 * (rho + rho.transpose()).eval();
    warnings.push_back("correlation matrix symmetrized (max asymmetry " +
                       format_number(asym, 3) + ")");
  }
  const double diag = (rho.diagonal().array() - 1.0).abs().maxCoeff();
  if (diag > kCorrelationTolerance && diag <= kRepairTolerance) {
    rho.diagonal().setOnes();
    warnings.push_back("correlation diagonal reset to 1 (max deviation " +
                       format_number(diag, 3) + ")");
  }
}

char detect_delimiter(const std::string& first_line) {
  return first_line.find('\t') != std::string::npos ? '\t' : ',';
}

char detect_delimiter(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty() && line.front() != '#') return detect_delimiter(line);
  }
  return ',';
}

SummaryDataset parse_summary_data(std::istream& assoc, std::istream& corr,
                                  std::vector<std::string>* warnings) {
  char delim = ',';
  auto rows = read_rows(assoc, delim);
  if (rows.empty()) throw ParseError("association file is empty");

  const auto& header = rows.front();
  if (header.empty() || header[0] != "variant") {
    throw ParseError("association header must start with 'variant'");
  }
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!col.emplace(header[c], c).second) throw ParseError("duplicate column '" + header[c] + "'");
  }
  if (!col.count("beta_y") || !col.count("se_y")) {
    throw ParseError("association header lacks beta_y/se_y");
  }

  SummaryDataset d;
  std::vector<std::size_t> beta_cols, se_cols;
  std::size_t recognized = 3;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto& name = header[c];
    if (name.rfind("beta_", 0) == 0 && name != "beta_y") {
      std::string e = name.substr(5);
      auto it = col.find("se_" + e);
      if (it == col.end()) throw ParseError("missing column se_" + e);
      d.exposure_ids.push_back(e);
      beta_cols.push_back(c);
      se_cols.push_back(it->second);
      recognized += 2;
    }
  }
  if (recognized != header.size()) throw ParseError("unrecognized columns in association header");
  if (d.exposure_ids.empty()) throw ParseError("no exposure columns (beta_<e>, se_<e>)");

  const auto J = static_cast<Eigen::Index>(rows.size() - 1);
  const auto K = static_cast<Eigen::Index>(d.exposure_ids.size());
  d.beta_x.resize(J, K);
  d.se_x.resize(J, K);
  d.beta_y.resize(J);
  d.se_y.resize(J);
  std::unordered_map<std::string, Eigen::Index> index_of;
  const std::size_t by = col["beta_y"], sy = col["se_y"];
  for (Eigen::Index j = 0; j < J; ++j) {
    const auto& row = rows[j + 1];
    const std::string where = "association row " + std::to_string(j + 2);
    if (row.size() != header.size()) throw ParseError("wrong cell count at " + where);
    if (row[0].empty()) throw ParseError("missing variant id at " + where);
    if (!index_of.emplace(row[0], j).second) throw ParseError("duplicate variant id " + row[0]);
    d.variant_ids.push_back(row[0]);
    for (Eigen::Index k = 0; k < K; ++k) {
      d.beta_x(j, k) = require_double(row[beta_cols[k]], where);
      d.se_x(j, k) = require_double(row[se_cols[k]], where);
    }
    d.beta_y(j) = require_double(row[by], where);
    d.se_y(j) = require_double(row[sy], where);
  }

  char cdelim = ',';
  auto crows = read_rows(corr, cdelim);
  std::vector<std::string> col_labels;
  if (!crows.empty()) {
    const bool numeric_header = std::all_of(crows[0].begin(), crows[0].end(), [](const auto& c) {
      return parse_double(c).has_value();
    });
    if (!numeric_header) {
      col_labels = crows.front();
      crows.erase(crows.begin());
      // A corner cell above the row labels.
      if (static_cast<Eigen::Index>(col_labels.size()) == J + 1) col_labels.erase(col_labels.begin());
    }
  }
  if (static_cast<Eigen::Index>(crows.size()) != J) {
    throw ParseError("dimension mismatch: correlation matrix has " + std::to_string(crows.size()) +
                     " rows for " + std::to_string(J) + " variants");
  }
  if (!col_labels.empty() && static_cast<Eigen::Index>(col_labels.size()) != J) {
    throw ParseError("dimension mismatch: correlation header has " +
                     std::to_string(col_labels.size()) + " labels");
  }

  std::vector<std::string> row_labels;
  MatrixXd raw(J, J);
  for (Eigen::Index r = 0; r < J; ++r) {
    const auto& row = crows[r];
    const std::string where = "correlation row " + std::to_string(r + 1);
    std::size_t offset = 0;
    if (static_cast<Eigen::Index>(row.size()) == J + 1 && !parse_double(row[0])) {
      row_labels.push_back(row[0]);
      offset = 1;
    } else if (static_cast<Eigen::Index>(row.size()) != J) {
      throw ParseError("dimension mismatch at " + where);
    }
    for (Eigen::Index c = 0; c < J; ++c) raw(r, c) = require_double(row[c + offset], where);
  }
  if (!row_labels.empty() && static_cast<Eigen::Index>(row_labels.size()) != J) {
    throw ParseError("row labels present on some correlation rows only");
  }

  auto permutation = [&](const std::vector<std::string>& labels, const char* what) {
    std::vector<Eigen::Index> perm(J);  // perm[file position] = dataset index
    std::unordered_set<std::string> seen;
    for (Eigen::Index i = 0; i < J; ++i) {
      auto it = index_of.find(labels[i]);
      if (it == index_of.end()) throw ParseError(std::string(what) + " label '" + labels[i] + "' is not a variant");
      if (!seen.insert(labels[i]).second) throw ParseError(std::string(what) + " label '" + labels[i] + "' repeated");
      perm[i] = it->second;
    }
    return perm;
  };
  std::vector<Eigen::Index> row_perm(J), col_perm(J);
  for (Eigen::Index i = 0; i < J; ++i) row_perm[i] = col_perm[i] = i;
  if (!row_labels.empty()) row_perm = permutation(row_labels, "row");
  if (!col_labels.empty()) col_perm = permutation(col_labels, "column");
  if (row_labels.empty() && !col_labels.empty()) row_perm = col_perm;
  if (col_labels.empty() && !row_labels.empty()) col_perm = row_perm;

  d.rho.resize(J, J);
  for (Eigen::Index r = 0; r < J; ++r) {
    for (Eigen::Index c = 0; c < J; ++c) d.rho(row_perm[r], col_perm[c]) = raw(r, c);
  }

  std::vector<std::string> local;
  repair_correlation(d.rho, warnings ? *warnings : local);
  require_valid(d);
  return d;
}

SummaryDataset load_summary_data(const std::filesystem::path& assoc_path,
                                 const std::filesystem::path& corr_path,
                                 std::vector<std::string>* warnings) {
  std::ifstream assoc(assoc_path);
  if (!assoc) throw ParseError("cannot open " + assoc_path.string());
  std::ifstream corr(corr_path);
  if (!corr) throw ParseError("cannot open " + corr_path.string());
  return parse_summary_data(assoc, corr, warnings);
}

MatrixXd load_square_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  char delim = ',';
  auto rows = read_rows(in, delim);
  if (!rows.empty() && std::any_of(rows.front().begin(), rows.front().end(),
                                   [](const std::string& c) { return !c.empty() && !parse_double(c); })) {
    rows.erase(rows.begin());
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& row = rows[i];
    if (static_cast<Eigen::Index>(row.size()) == n + 1) row.erase(row.begin());
    if (static_cast<Eigen::Index>(row.size()) != n) {
      throw ParseError(path.string() + ": row " + std::to_string(i + 1) + " has " +
                       std::to_string(row.size()) + " values, expected " + std::to_string(n));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = require_double(row[j], path.string() + " row " + std::to_string(i + 1));
    }
  }
  return m;
}

void write_associations(std::ostream& out, const SummaryDataset& d, char delimiter, int precision) {
  out << "variant";
  for (const auto& e : d.exposure_ids) out << delimiter << "beta_" << e << delimiter << "se_" << e;
  out << delimiter << "beta_y" << delimiter << "se_y\n";
  for (Eigen::Index j = 0; j < d.num_variants(); ++j) {
    out << d.variant_ids[j];
    for (Eigen::Index k = 0; k < d.num_exposures(); ++k) {
      out << delimiter << format_number(d.beta_x(j, k), precision) << delimiter
          << format_number(d.se_x(j, k), precision);
    }
    out << delimiter << format_number(d.beta_y(j), precision) << delimiter
        << format_number(d.se_y(j), precision) << "\n";
  }
}

void write_correlation(std::ostream& out, const SummaryDataset& d, char delimiter, int precision) {
  out << "variant";
  for (const auto& id : d.variant_ids) out << delimiter << id;
  out << "\n";
  for (Eigen::Index r = 0; r < d.num_variants(); ++r) {
    out << d.variant_ids[r];
    for (Eigen::Index c = 0; c < d.num_variants(); ++c) {
      out << delimiter << format_number(d.rho(r, c), precision);
    }
    out << "\n";
  }
}

void write_summary_data(const SummaryDataset& d, const std::filesystem::path& assoc_path,
                        const std::filesystem::path& corr_path, char delimiter, int precision) {
  std::ofstream a(assoc_path);
  if (!a) throw ParseError("cannot write " + assoc_path.string());
  write_associations(a, d, delimiter, precision);
  std::ofstream c(corr_path);
  if (!c) throw ParseError("cannot write " + corr_path.string());
  write_correlation(c, d, delimiter, precision);
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

VectorXd max_abs_z(const SummaryDataset& d) {
  return d.beta_x.cwiseQuotient(d.se_x).cwiseAbs().rowwise().maxCoeff();
}

VectorXd min_p_values(const SummaryDataset& d) {
  VectorXd z = max_abs_z(d);
  return z.unaryExpr([](double v) { return two_sided_p(v); });
}

FilterResult significance_filter(const SummaryDataset& d, double p_threshold) {
  if (!(p_threshold > 0.0 && p_threshold <= 1.0)) {
    throw std::invalid_argument("p_threshold must lie in (0, 1]");
  }
  FilterResult out;
  if (d.num_variants() > 0 && d.num_exposures() > 0) {
    const VectorXd p = min_p_values(d);
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      if (p(j) < p_threshold) out.kept.push_back(j);
    }
  }
  out.data = subset(d, out.kept);
  return out;
}

}  // namespace cismvmr
