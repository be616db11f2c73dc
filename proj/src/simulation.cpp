#include "cismvmr/simulation.hpp"

#include "cismvmr/errors.hpp"
#include "cismvmr/pruning.hpp"
#include "cismvmr/random_correlation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <charconv>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace cismvmr {
namespace {

constexpr double kZ975 = 1.959963984540054;

struct CentredGenotypes {
  MatrixXd centred;
  VectorXd sxx;
};

CentredGenotypes centre(const MatrixXd& g) {
  if (g.rows() < 3) throw std::invalid_argument("need at least 3 individuals");
  CentredGenotypes c;
  c.centred = g.rowwise() - g.colwise().mean();
  c.sxx = c.centred.colwise().squaredNorm().transpose();
  for (Eigen::Index j = 0; j < c.sxx.size(); ++j) {
    if (!(c.sxx(j) > 0.0)) {
      throw std::invalid_argument("genotype column " + std::to_string(j) + " has zero variance");
    }
  }
  return c;
}

RegressionSummary regress(const CentredGenotypes& g, const VectorXd& phenotype) {
  const auto n = static_cast<double>(g.centred.rows());
  const VectorXd yc = phenotype.array() - phenotype.mean();
  const double syy = yc.squaredNorm();
  const VectorXd sxy = g.centred.transpose() * yc;

  RegressionSummary r;
  r.beta = sxy.cwiseQuotient(g.sxx);
  r.se.resize(sxy.size());
  for (Eigen::Index j = 0; j < sxy.size(); ++j) {
    const double rss = syy - r.beta(j) * sxy(j);
    if (rss <= 1e-12 * syy) {
      r.se(j) = 0.0;
      r.exact_fit.push_back(j);
    } else {
      r.se(j) = std::sqrt(rss / (n - 2.0) / g.sxx(j));
    }
  }
  return r;
}

struct Sample {
  MatrixXd genotypes;
  MatrixXd exposures;
  VectorXd outcome;
};

Sample draw_sample(const ScenarioConfig& cfg, const MatrixXd& factor, const MatrixXd& effects,
                   Eigen::Index n, Rng& rng) {
  const Eigen::Index J = cfg.n_variants;
  const Eigen::Index K = cfg.n_exposures;
  Sample s;
  s.genotypes = rng.normal_matrix(n, J) * factor.transpose();
  const MatrixXd u = rng.normal_matrix(n, K);
  const MatrixXd ex = rng.normal_matrix(n, K);
  const VectorXd ey = rng.normal_matrix(n, 1);
  s.exposures = s.genotypes * effects + u + ex;
  s.outcome = s.exposures * cfg.theta_true + ey;
  if (cfg.confounding) s.outcome += u.rowwise().sum();
  return s;
}

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}


std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

double to_double(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (trim(text.substr(used)).empty() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("scenario key '" + key + "': expected a number, got '" + text + "'");
}

long long to_integer(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (trim(text.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("scenario key '" + key + "': expected an integer, got '" + text + "'");
}

bool to_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "yes" || text == "1") return true;
  if (text == "false" || text == "no" || text == "0") return false;
  throw ParseError("scenario key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

/// Splits "name(a, b)" into the name and its argument list.
std::pair<std::string, std::vector<std::string>> call_syntax(const std::string& text, const std::string& key) {
  const auto open = text.find('(');
  if (open == std::string::npos) return {trim(text), {}};
  if (text.back() != ')') throw ParseError("scenario key '" + key + "': unbalanced parentheses");
  const std::string inner = text.substr(open + 1, text.size() - open - 2);
  return {trim(text.substr(0, open)), trim(inner).empty() ? std::vector<std::string>{} : split_list(inner)};
}


}  // namespace

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("scenario: " + what); };
  if (n_variants < 1) fail("n_variants must be positive");
  if (n_exposures < 1) fail("n_exposures must be positive");
  if (causal_per_exposure < 1) fail("causal_per_exposure must be positive");
  if (causal_per_exposure * n_exposures > n_variants) fail("causal_per_exposure * n_exposures exceeds n_variants");
  if (n_exposure_sample < 3 || n_outcome_sample < 3) fail("each sample needs at least 3 individuals");
  if (!(alpha_sd >= 0.0) || !std::isfinite(alpha_mean)) fail("alpha_mean must be finite and alpha_sd nonnegative");
  if (theta_true.size() != n_exposures) fail("theta_true needs one value per exposure");
  if (!theta_true.allFinite()) fail("theta_true must be finite");
  if (rounding_decimals && (*rounding_decimals < 0 || *rounding_decimals > 15)) fail("rounding_decimals must lie in [0, 15]");
  if (corr_source.independent && corr_source.n < 3) fail("independent reference sample needs at least 3 individuals");
  switch (corr.kind) {
    case CorrGenerator::UniformGram:
      if (!(corr.lo < corr.hi)) fail("uniform_gram bounds must satisfy lo < hi");
      break;
    case CorrGenerator::CVine:
    case CorrGenerator::Onion:
      if (!(corr.eta > 0.0)) fail("eta must be positive");
      if (n_variants < 2) fail("c_vine and onion need at least 2 variants");
      break;
    case CorrGenerator::External: {
      if (corr.external.rows() != n_variants || corr.external.cols() != n_variants) {
        fail("external matrix must be n_variants x n_variants");
      }
      SummaryDataset probe;
      probe.beta_y = VectorXd::Zero(n_variants);
      probe.se_y = VectorXd::Ones(n_variants);
      probe.beta_x = MatrixXd::Zero(n_variants, 1);
      probe.se_x = MatrixXd::Ones(n_variants, 1);
      probe.rho = corr.external;
      for (Eigen::Index j = 0; j < n_variants; ++j) probe.variant_ids.push_back(std::to_string(j));
      probe.exposure_ids = {"x"};
      const auto report = cismvmr::validate(probe);
      if (!report.ok()) fail("external matrix: " + report.summary());
      break;
    }
  }
}

ScenarioConfig parse_scenario(std::istream& in, const std::filesystem::path& base_dir) {
  ScenarioConfig cfg;
  bool theta_set = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("scenario line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "name") {
      cfg.name = value;
    } else if (key == "n_exposure_sample") {
      cfg.n_exposure_sample = to_integer(value, key);
    } else if (key == "n_outcome_sample") {
      cfg.n_outcome_sample = to_integer(value, key);
    } else if (key == "n_variants") {
      cfg.n_variants = to_integer(value, key);
    } else if (key == "n_exposures") {
      cfg.n_exposures = to_integer(value, key);
    } else if (key == "causal_per_exposure") {
      cfg.causal_per_exposure = to_integer(value, key);
    } else if (key == "alpha_mean") {
      cfg.alpha_mean = to_double(value, key);
    } else if (key == "alpha_sd") {
      cfg.alpha_sd = to_double(value, key);
    } else if (key == "theta_true") {
      const auto items = split_list(value);
      cfg.theta_true.resize(static_cast<Eigen::Index>(items.size()));
      for (std::size_t i = 0; i < items.size(); ++i) cfg.theta_true(i) = to_double(items[i], key);
      theta_set = true;
    } else if (key == "confounding") {
      cfg.confounding = to_bool(value, key);
    } else if (key == "corr_generator") {
      auto [name, args] = call_syntax(value, key);
      CorrelationSpec spec;
      if (name == "uniform_gram") {
        if (!args.empty() && args.size() != 2) throw ParseError("uniform_gram takes (lo, hi)");
        if (args.size() == 2) {
          spec.lo = to_double(args[0], key);
          spec.hi = to_double(args[1], key);
        }
      } else if (name == "c_vine" || name == "onion") {
        spec.kind = name == "c_vine" ? CorrGenerator::CVine : CorrGenerator::Onion;
        if (args.size() > 1) throw ParseError(name + " takes at most one argument (eta)");
        if (args.size() == 1) spec.eta = to_double(args[0], key);
      } else if (name == "external_matrix") {
        if (args.size() != 1) throw ParseError("external_matrix takes one path");
        spec.kind = CorrGenerator::External;
        spec.external_path = args[0];
        if (spec.external_path.is_relative()) spec.external_path = base_dir / spec.external_path;
        spec.external = load_square_matrix(spec.external_path);
      } else {
        throw ParseError("unknown corr_generator '" + name + "'");
      }
      cfg.corr = std::move(spec);
    } else if (key == "corr_source") {
      auto [name, args] = call_syntax(value, key);
      if (name == "exposure_sample" && args.empty()) {
        cfg.corr_source = {};
      } else if (name == "independent_sample") {
        if (args.size() > 1) throw ParseError("independent_sample takes at most one size");
        cfg.corr_source.independent = true;
        if (args.size() == 1) cfg.corr_source.n = to_integer(args[0], key);
      } else {
        throw ParseError("unknown corr_source '" + value + "'");
      }
    } else if (key == "rounding_decimals") {
      if (value == "none") {
        cfg.rounding_decimals.reset();
      } else {
        cfg.rounding_decimals = static_cast<int>(to_integer(value, key));
      }
    } else if (key == "seed") {
      const long long s = to_integer(value, key);
      if (s < 0) throw ParseError("seed must be nonnegative");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else {
      throw ParseError("unknown scenario key '" + key + "'");
    }
  }
  if (!theta_set && cfg.n_exposures != 3) {
    throw ParseError("theta_true is required when n_exposures differs from 3");
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario " + path.string());
  return parse_scenario(in, path.parent_path());
}

std::string to_text(const ScenarioConfig& cfg) {
  std::ostringstream out;
  out << "name = " << cfg.name << '\n'
      << "n_exposure_sample = " << cfg.n_exposure_sample << '\n'
      << "n_outcome_sample = " << cfg.n_outcome_sample << '\n'
      << "n_variants = " << cfg.n_variants << '\n'
      << "n_exposures = " << cfg.n_exposures << '\n'
      << "causal_per_exposure = " << cfg.causal_per_exposure << '\n'
      << "alpha_mean = " << shortest(cfg.alpha_mean) << '\n'
      << "alpha_sd = " << shortest(cfg.alpha_sd) << '\n'
      << "theta_true = ";
  for (Eigen::Index k = 0; k < cfg.theta_true.size(); ++k) {
    out << (k ? ", " : "") << shortest(cfg.theta_true(k));
  }
  out << '\n' << "confounding = " << (cfg.confounding ? "true" : "false") << '\n' << "corr_generator = ";
  switch (cfg.corr.kind) {
    case CorrGenerator::UniformGram: out << "uniform_gram(" << shortest(cfg.corr.lo) << ", " << shortest(cfg.corr.hi) << ")"; break;
    case CorrGenerator::CVine: out << "c_vine(" << shortest(cfg.corr.eta) << ")"; break;
    case CorrGenerator::Onion: out << "onion(" << shortest(cfg.corr.eta) << ")"; break;
    case CorrGenerator::External: out << "external_matrix(" << cfg.corr.external_path.string() << ")"; break;
  }
  out << '\n' << "corr_source = ";
  if (cfg.corr_source.independent) {
    out << "independent_sample(" << cfg.corr_source.n << ")";
  } else {
    out << "exposure_sample";
  }
  out << '\n' << "rounding_decimals = ";
  if (cfg.rounding_decimals) {
    out << *cfg.rounding_decimals;
  } else {
    out << "none";
  }
  out << '\n' << "seed = " << cfg.seed << '\n';
  return out.str();
}

RegressionSummary summarize_associations(const MatrixXd& genotypes, const VectorXd& phenotype) {
  if (genotypes.rows() != phenotype.size()) throw std::invalid_argument("phenotype length mismatch");
  return regress(centre(genotypes), phenotype);
}

MatrixXd generate_correlation(const CorrelationSpec& spec, Eigen::Index J, Rng& rng) {
  switch (spec.kind) {
    case CorrGenerator::UniformGram: return gen_correlation_uniform(J, spec.lo, spec.hi, rng);
    case CorrGenerator::CVine: return gen_correlation_vine(J, spec.eta, rng);
    case CorrGenerator::Onion: return gen_correlation_onion(J, spec.eta, rng);
    case CorrGenerator::External: return spec.external;
  }
  throw std::logic_error("unknown correlation generator");
}

std::vector<InstrumentStrength> instrument_strength(const IndividualData& data, const TruthRecord& truth) {
  std::vector<InstrumentStrength> out;
  for (std::size_t k = 0; k < truth.causal_by_exposure.size(); ++k) {
    const auto& idx = truth.causal_by_exposure[k];
    MatrixXd x(data.genotypes.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) x.col(c) = data.genotypes.col(idx[c]);
    out.push_back(regression_strength(x, data.exposures.col(static_cast<Eigen::Index>(k))));
  }
  return out;
}

SimulatedDataset simulate_dataset(const ScenarioConfig& cfg, std::uint64_t replication,
                                  bool keep_individuals) {
  cfg.validate();
  const Eigen::Index J = cfg.n_variants;
  const Eigen::Index K = cfg.n_exposures;
  const Eigen::Index c = cfg.causal_per_exposure;

  SimulatedDataset sim;
  auto& truth = sim.truth;
  truth.theta = cfg.theta_true;
  {
    Rng rng = replication_stream(cfg.seed, replication, Stream::Correlation);
    truth.variant_correlation = generate_correlation(cfg.corr, J, rng);
  }

  MatrixXd effects = MatrixXd::Zero(J, K);
  {
    Rng rng = replication_stream(cfg.seed, replication, Stream::Effects);
    truth.alpha.resize(K * c);
    truth.causal_by_exposure.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index i = 0; i < c; ++i) {
        const Eigen::Index j = k * c + i;
        truth.alpha(j) = rng.normal(cfg.alpha_mean, cfg.alpha_sd);
        effects(j, k) = truth.alpha(j);
        truth.causal_by_exposure[k].push_back(j);
        truth.causal_variants.push_back(j);
      }
    }
  }

  const MatrixXd factor = mvn_factor(truth.variant_correlation);
  Rng exposure_rng = replication_stream(cfg.seed, replication, Stream::ExposureSample);
  Rng outcome_rng = replication_stream(cfg.seed, replication, Stream::OutcomeSample);
  Sample xs = draw_sample(cfg, factor, effects, cfg.n_exposure_sample, exposure_rng);
  Sample ys = draw_sample(cfg, factor, effects, cfg.n_outcome_sample, outcome_rng);

  auto& d = sim.data;
  for (Eigen::Index j = 0; j < J; ++j) d.variant_ids.push_back("v" + std::to_string(j + 1));
  for (Eigen::Index k = 0; k < K; ++k) d.exposure_ids.push_back("x" + std::to_string(k + 1));

  const CentredGenotypes gx = centre(xs.genotypes);
  d.beta_x.resize(J, K);
  d.se_x.resize(J, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    auto r = regress(gx, xs.exposures.col(k));
    d.beta_x.col(k) = r.beta;
    d.se_x.col(k) = r.se;
  }
  auto ry = summarize_associations(ys.genotypes, ys.outcome);
  d.beta_y = ry.beta;
  d.se_y = ry.se;

  if (cfg.corr_source.independent) {
    Rng rng = replication_stream(cfg.seed, replication, Stream::ReferenceSample);
    d.rho = column_correlation(rng.normal_matrix(cfg.corr_source.n, J) * factor.transpose());
  } else {
    d.rho = column_correlation(xs.genotypes);
  }

  if (cfg.rounding_decimals) {
    const int dec = *cfg.rounding_decimals;
    auto r = [dec](double v) { return round_to(v, dec); };
    d.beta_x = d.beta_x.unaryExpr(r);
    d.se_x = d.se_x.unaryExpr(r);
    d.beta_y = d.beta_y.unaryExpr(r);
    d.se_y = d.se_y.unaryExpr(r);
  }

  IndividualData ind;
  ind.n_exposure_sample = cfg.n_exposure_sample;
  ind.genotypes.resize(xs.genotypes.rows() + ys.genotypes.rows(), J);
  ind.genotypes << xs.genotypes, ys.genotypes;
  ind.exposures.resize(ind.genotypes.rows(), K);
  ind.exposures << xs.exposures, ys.exposures;
  ind.outcome.resize(ind.genotypes.rows());
  ind.outcome << xs.outcome, ys.outcome;
  truth.strength = instrument_strength(ind, truth);
  if (keep_individuals) sim.individuals = std::move(ind);
  return sim;
}

std::string MethodSpec::label() const {
  std::string s(method_name(method));
  if (set == InstrumentSet::Oracle) s += "@oracle";
  if (set == InstrumentSet::Pruned) s += "@" + fmt(threshold, 6);
  return s;
}

std::string MethodSpec::display_method() const {
  std::string s(method_name(method));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::toupper(ch); });
  return s;
}

std::string MethodSpec::display_pruning() const {
  switch (set) {
    case InstrumentSet::Oracle: return "Oracle";
    case InstrumentSet::Pruned: return fmt(threshold, 6);
    case InstrumentSet::All: return "-";
  }
  return "-";
}

MethodSpec parse_method_spec(const std::string& text) {
  const auto at = text.find('@');
  const std::string name = text.substr(0, at);
  auto m = parse_method(name);
  if (!m) throw ParseError("unknown method '" + name + "'");
  MethodSpec spec;
  spec.method = *m;
  if (at == std::string::npos || text.substr(at + 1) == "all") return spec;
  const std::string sel = text.substr(at + 1);
  if (sel == "oracle") {
    spec.set = InstrumentSet::Oracle;
    return spec;
  }
  try {
    std::size_t used = 0;
    spec.threshold = std::stod(sel, &used);
    if (used != sel.size()) throw std::invalid_argument(sel);
  } catch (const std::exception&) {
    throw ParseError("bad instrument selection '" + sel + "'");
  }
  if (!(spec.threshold > 0.0 && spec.threshold <= 1.0)) {
    throw ParseError("pruning threshold must lie in (0, 1]");
  }
  spec.set = InstrumentSet::Pruned;
  return spec;
}

std::vector<MethodSpec> parse_method_list(const std::string& comma_separated) {
  std::vector<MethodSpec> out;
  std::size_t start = 0;
  while (start <= comma_separated.size()) {
    auto end = comma_separated.find(',', start);
    if (end == std::string::npos) end = comma_separated.size();
    std::string item = comma_separated.substr(start, end - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(parse_method_spec(item));
    start = end + 1;
  }
  if (out.empty()) throw ParseError("empty method list");
  return out;
}

std::vector<MethodSpec> default_methods() {
  std::vector<MethodSpec> out;
  for (Method m : {Method::MvIvw, Method::MvLiml}) {
    out.push_back({m, InstrumentSet::Oracle, 1.0});
    for (double t : {0.4, 0.6, 0.8}) out.push_back({m, InstrumentSet::Pruned, t});
  }
  out.push_back({Method::MvIvwPca, InstrumentSet::All, 1.0});
  out.push_back({Method::MvLimlPca, InstrumentSet::All, 1.0});
  return out;
}

const MethodSummary& MetricsTable::find(const std::string& label) const {
  for (const auto& m : methods) {
    if (m.spec.label() == label) return m;
  }
  throw std::out_of_range("no method " + label + " in metrics table");
}

std::vector<MethodOutcome> evaluate_methods(const SimulatedDataset& sim, const MonteCarloOptions& options) {
  const Eigen::Index K = sim.data.num_exposures();
  const Eigen::Index needed = K + options.min_excess_instruments;

  std::map<double, SummaryDataset> pruned;
  std::optional<SummaryDataset> oracle;
  auto select = [&](const MethodSpec& spec) -> const SummaryDataset& {
    switch (spec.set) {
      case InstrumentSet::All: return sim.data;
      case InstrumentSet::Oracle:
        if (!oracle) oracle = subset(sim.data, sim.truth.causal_variants);
        return *oracle;
      case InstrumentSet::Pruned: {
        auto it = pruned.find(spec.threshold);
        if (it == pruned.end()) {
          it = pruned.emplace(spec.threshold, subset(sim.data, prune(sim.data, spec.threshold).kept)).first;
        }
        return it->second;
      }
    }
    throw std::logic_error("unknown instrument set");
  };

  std::vector<MethodOutcome> out;
  out.reserve(options.methods.size());
  for (const auto& spec : options.methods) {
    MethodOutcome o;
    try {
      const SummaryDataset& d = select(spec);
      if (d.num_variants() < needed) {
        throw IdentificationError(std::to_string(d.num_variants()) + " variants for " +
                                  std::to_string(K) + " exposures");
      }
      const bool pca = spec.method == Method::MvIvwPca || spec.method == Method::MvLimlPca;
      std::optional<PcaTransform> transform;
      if (pca) {
        transform = fit_pca_transform(d, options.pca);
        if (transform->k < needed) {
          throw TooFewComponents(std::to_string(transform->k) + " components for " +
                                 std::to_string(K) + " exposures");
        }
      }
      switch (spec.method) {
        case Method::MvIvw: o.estimate = mv_ivw(d); break;
        case Method::MvIvwPca: o.estimate = mv_ivw_pca(d, *transform); break;
        case Method::MvLiml: {
          auto fit = mv_liml(d, options.liml);
          o.converged = fit.converged;
          o.estimate = std::move(fit.estimate);
          break;
        }
        case Method::MvLimlPca: {
          auto fit = mv_liml_pca(d, *transform, options.liml);
          o.converged = fit.converged;
          o.estimate = std::move(fit.estimate);
          break;
        }
      }
      if (!o.estimate->theta.allFinite() || !o.estimate->se.allFinite()) {
        o.estimate.reset();
        o.failure = "non-finite estimate";
      }
    } catch (const std::exception& e) {
      o.estimate.reset();
      o.failure = e.what();
    }
    out.push_back(std::move(o));
  }
  return out;
}

MetricsTable aggregate(const std::vector<std::vector<MethodOutcome>>& per_replication,
                       const MonteCarloOptions& options, const VectorXd& theta_true) {
  MetricsTable table;
  table.n_reps = static_cast<Eigen::Index>(per_replication.size());
  table.theta_true = theta_true;
  const Eigen::Index K = theta_true.size();

  for (std::size_t m = 0; m < options.methods.size(); ++m) {
    MethodSummary s;
    s.spec = options.methods[m];
    std::vector<const Estimate*> ok;
    std::vector<double> conds;
    for (const auto& rep : per_replication) {
      const auto& o = rep.at(m);
      if (!o.estimate) {
        ++s.failures;
        continue;
      }
      ok.push_back(&*o.estimate);
      conds.push_back(o.estimate->condition_number);
      if (!o.converged) ++s.nonconverged;
    }
    s.successes = static_cast<Eigen::Index>(ok.size());
    s.degenerate = ok.size() < 2;
    s.params.resize(K);
    if (!ok.empty()) {
      const double n = static_cast<double>(ok.size());
      for (Eigen::Index k = 0; k < K; ++k) {
        double sum = 0.0, se_sum = 0.0, hits = 0.0;
        for (const auto* e : ok) {
          sum += e->theta(k);
          se_sum += e->se(k);
          if (std::abs(e->theta(k)) > kZ975 * e->se(k)) hits += 1.0;
        }
        auto& p = s.params[k];
        p.mean = sum / n;
        p.mean_se = se_sum / n;
        p.power = 100.0 * hits / n;
        double ss = 0.0;
        for (const auto* e : ok) ss += (e->theta(k) - p.mean) * (e->theta(k) - p.mean);
        p.sd = ok.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      }
      double inst = 0.0;
      for (const auto* e : ok) inst += static_cast<double>(e->n_instruments_used);
      s.mean_instruments = inst / n;
      std::sort(conds.begin(), conds.end());
      const std::size_t h = conds.size() / 2;
      s.median_condition = conds.size() % 2 ? conds[h] : 0.5 * (conds[h - 1] + conds[h]);
    }
    table.methods.push_back(std::move(s));
  }
  return table;
}

MetricsTable run_monte_carlo(const ScenarioConfig& cfg, const MonteCarloOptions& options) {
  if (options.n_reps < 1) throw std::invalid_argument("n_reps must be at least 1");
  cfg.validate();
  const auto n = static_cast<std::size_t>(options.n_reps);
  std::vector<std::vector<MethodOutcome>> results(n);

  unsigned workers = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    while (true) {
      const std::size_t rep = next.fetch_add(1);
      if (rep >= n) return;
      try {
        results[rep] = evaluate_methods(simulate_dataset(cfg, rep), options);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  MetricsTable table = aggregate(results, options, cfg.theta_true);
  table.scenario = cfg.name;
  return table;
}

void write_metrics_csv(std::ostream& out, const MetricsTable& table, int precision) {
  out << "Parameter,Method,Pruning,Mean,SD,Mean SE,Power,Reps,Successes,Failures,Nonconverged,"
         "Median Cond,Mean Instruments,Degenerate\n";
  for (Eigen::Index k = 0; k < table.theta_true.size(); ++k) {
    for (const auto& m : table.methods) {
      const auto& p = m.params[k];
      out << "theta" << (k + 1) << ',' << m.spec.display_method() << ',' << m.spec.display_pruning()
          << ',' << fmt(p.mean, precision) << ',' << fmt(p.sd, precision) << ','
          << fmt(p.mean_se, precision) << ',' << fmt(p.power, precision) << ',' << table.n_reps << ','
          << m.successes << ',' << m.failures << ',' << m.nonconverged << ','
          << fmt(m.median_condition, precision) << ',' << fmt(m.mean_instruments, precision) << ','
          << (m.degenerate ? 1 : 0) << '\n';
    }
  }
}

}  // namespace cismvmr
