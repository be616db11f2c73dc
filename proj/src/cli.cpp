#include "cismvmr/cli.hpp"

#include "cismvmr/diagnostics.hpp"
#include "cismvmr/errors.hpp"
#include "cismvmr/ivw.hpp"
#include "cismvmr/liml.hpp"
#include "cismvmr/pruning.hpp"
#include "cismvmr/simulation.hpp"
#include "cismvmr/summary_data.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#ifndef CISMVMR_VERSION
#define CISMVMR_VERSION "0.0.0"
#endif

namespace cismvmr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kZ975 = 1.959963984540054;

std::string num(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::optional<std::uint64_t> seed;

  void write(const fs::path& path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["inputs"] = json::array();
    for (const auto& p : inputs) j["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["outputs"] = json::array();
    for (const auto& p : outputs) j["outputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["version"] = CISMVMR_VERSION;
    j["timestamp"] = utc_timestamp();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
};

fs::path manifest_path(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

/// Writes through `body` to `path`, or to `out` when path is empty.
template <class F>
void emit(const fs::path& path, std::ostream& out, F&& body) {
  if (path.empty()) {
    body(out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw std::runtime_error("cannot write " + path.string());
  body(file);
}

struct DataOptions {
  std::string assoc;
  std::string corr;
  std::optional<double> pre_prune;
  std::optional<double> p_filter;
  std::optional<double> prune;
  double variance_frac = kDefaultVarianceFraction;
  std::optional<Eigen::Index> components;
  std::string pca_basis = "centred";

  void add_to(CLI::App& app) {
    app.add_option("--assoc", assoc, "Association table (variant, beta_<e>, se_<e>, ..., beta_y, se_y)")
        ->required()->check(CLI::ExistingFile);
    app.add_option("--corr", corr, "Variant correlation matrix")->required()->check(CLI::ExistingFile);
    app.add_option("--pre-prune", pre_prune, "Prune at this |rho| before the p-value filter")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--p-filter", p_filter, "Keep variants with some exposure p-value below this")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--prune", prune, "Prune at this |rho| after filtering")->check(CLI::Range(0.0, 1.0));
    app.add_option("--variance-frac", variance_frac, "Variance share retained by PCA")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--components", components, "Number of principal components (overrides --variance-frac)")
        ->check(CLI::PositiveNumber);
    app.add_option("--pca-basis", pca_basis, "Principal components of the centred Psi rows or eigenvectors of Psi")
        ->check(CLI::IsMember({"centred", "direct"}));
  }

  PcaOptions pca() const {
    return {variance_fraction(), components,
            pca_basis == "direct" ? PcaBasis::Direct : PcaBasis::CentredCovariance};
  }

  double variance_fraction() const {
    if (!(variance_frac > 0.0 && variance_frac < 1.0)) {
      throw std::invalid_argument("--variance-frac must lie strictly between 0 and 1");
    }
    return variance_frac;
  }

  json to_json() const {
    json j;
    j["pre_prune"] = pre_prune ? json(*pre_prune) : json(nullptr);
    j["p_filter"] = p_filter ? json(*p_filter) : json(nullptr);
    j["prune"] = prune ? json(*prune) : json(nullptr);
    j["variance_frac"] = variance_frac;
    j["components"] = components ? json(*components) : json(nullptr);
    j["pca_basis"] = pca_basis;
    return j;
  }

  /// Loads the dataset and applies pre-prune, p-filter and prune in order.
  SummaryDataset load(std::ostream& err) const {
    std::vector<std::string> warnings;
    SummaryDataset d = load_summary_data(assoc, corr, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';
    if (pre_prune) d = subset(d, prune_checked(d, *pre_prune).kept);
    if (p_filter) {
      auto f = significance_filter(d, *p_filter);
      if (f.empty()) throw IdentificationError("no variant passes the p-value filter");
      d = std::move(f.data);
    }
    if (prune) d = subset(d, prune_checked(d, *prune).kept);
    return d;
  }

 private:
  static PruneResult prune_checked(const SummaryDataset& d, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("pruning threshold must be positive");
    return cismvmr::prune(d, t);
  }
};

GradientMode parse_gradient(const std::string& s) {
  if (s == "exact") return GradientMode::Exact;
  if (s == "partial") return GradientMode::Partial;
  return GradientMode::FiniteDifference;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return kExitParse;
  if (dynamic_cast<const ValidationError*>(&e)) return kExitValidation;
  if (dynamic_cast<const IdentificationError*>(&e)) return kExitIdentification;
  if (dynamic_cast<const RankDeficientDesign*>(&e)) return kExitIdentification;
  if (dynamic_cast<const SingularWeightMatrix*>(&e)) return kExitSingular;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return kExitParse;
  return kExitFailure;
}

void write_estimates(std::ostream& out, const SummaryDataset& d, const Estimate& e, int precision,
                     const std::optional<LimlFit>& fit) {
  out << "exposure,estimate,se,z,p,ci_low,ci_high\n";
  for (Eigen::Index k = 0; k < e.theta.size(); ++k) {
    const double z = e.theta(k) / e.se(k);
    out << d.exposure_ids[k] << ',' << num(e.theta(k), precision) << ',' << num(e.se(k), precision) << ','
        << num(z, precision) << ',' << num(two_sided_p(z), precision) << ','
        << num(e.theta(k) - kZ975 * e.se(k), precision) << ',' << num(e.theta(k) + kZ975 * e.se(k), precision)
        << '\n';
  }
  out << "# method," << method_name(e.method) << '\n'
      << "# variants," << d.num_variants() << '\n'
      << "# instruments," << e.n_instruments_used << '\n'
      << "# condition_number," << num(e.condition_number, precision) << '\n';
  if (fit) {
    out << "# converged," << (fit->converged ? "true" : "false") << '\n'
        << "# objective," << num(fit->objective_at_optimum, precision) << '\n'
        << "# iterations," << fit->iterations << '\n';
  }
}

struct EstimateCommand {
  DataOptions data;
  std::string method = "mv-ivw-pca";
  std::string phi;
  std::string gradient = "exact";
  bool multi_start = false;
  bool raw = false;
  std::string out_path;

  void add_to(CLI::App& app) {
    data.add_to(app);
    app.add_option("--method", method, "Estimator")
        ->check(CLI::IsMember({"mv-ivw", "mv-ivw-pca", "mv-liml", "mv-liml-pca"}));
    app.add_option("--phi", phi, "K x K exposure correlation matrix (LIML)")->check(CLI::ExistingFile);
    app.add_option("--gradient", gradient, "LIML gradient")->check(CLI::IsMember({"exact", "partial", "fd"}));
    app.add_flag("--multi-start", multi_start, "LIML: also start from +/- the IVW estimate");
    app.add_flag("--raw", raw, "Full precision output");
    app.add_option("--out", out_path, "Output CSV (default stdout)");
  }

  int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) const {
    const SummaryDataset d = data.load(err);
    const Method m = *parse_method(method);
    const int precision = raw ? 17 : 6;

    LimlConfig liml;
    liml.gradient_mode = parse_gradient(gradient);
    liml.multi_start = multi_start;
    liml.variance_fraction = data.variance_fraction();
    liml.n_components = data.components;
    liml.pca_basis = data.pca().basis;
    if (!phi.empty()) {
      const MatrixXd p = load_square_matrix(phi);
      if (p.rows() != d.num_exposures()) throw ParseError("--phi must be K x K");
      liml.phi = ExposureCorrelation(p);
    }

    Estimate e;
    std::optional<LimlFit> fit;
    switch (m) {
      case Method::MvIvw: e = mv_ivw(d); break;
      case Method::MvIvwPca: e = mv_ivw_pca(d, data.pca()); break;
      case Method::MvLiml: fit = mv_liml(d, liml); break;
      case Method::MvLimlPca: fit = mv_liml_pca(d, fit_pca_transform(d, data.pca()), liml); break;
    }
    if (fit) {
      e = fit->estimate;
      if (!fit->converged) err << "warning: optimizer stopped without convergence (" << fit->status << ")\n";
    }
    if (e.condition_number > kIllConditioned) {
      err << "warning: condition number " << num(e.condition_number, 6) << " exceeds " << kIllConditioned << '\n';
    }

    emit(out_path, out, [&](std::ostream& o) { write_estimates(o, d, e, precision, fit); });
    if (!out_path.empty()) {
      Manifest mf{"estimate", argv};
      mf.config = data.to_json();
      mf.config["method"] = method;
      mf.config["gradient"] = gradient;
      mf.config["multi_start"] = multi_start;
      mf.config["raw"] = raw;
      mf.inputs = {data.assoc, data.corr};
      if (!phi.empty()) mf.inputs.emplace_back(phi);
      mf.outputs = {out_path};
      mf.write(manifest_path(out_path));
    }
    return kExitOk;
  }
};

struct PruneCommand {
  std::string assoc;
  std::string corr;
  double threshold = 0.6;
  std::string prefix;

  void add_to(CLI::App& app) {
    app.add_option("--assoc", assoc, "Association table")->required()->check(CLI::ExistingFile);
    app.add_option("--corr", corr, "Variant correlation matrix")->required()->check(CLI::ExistingFile);
    app.add_option("--threshold", threshold, "Drop variants with |rho| >= threshold to a kept variant")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--out", prefix, "Write <prefix>.assoc and <prefix>.corr in the input format");
  }

  int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) const {
    if (!(threshold > 0.0)) throw std::invalid_argument("--threshold must be positive");
    std::vector<std::string> warnings;
    const SummaryDataset d = load_summary_data(assoc, corr, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';
    const PruneResult r = prune(d, threshold);
    for (auto j : r.kept) out << d.variant_ids[j] << '\n';
    if (prefix.empty()) return kExitOk;

    const char delim = detect_delimiter(fs::path(assoc));
    const std::string ext = delim == '\t' ? ".tsv" : ".csv";
    const fs::path assoc_out = prefix + ".assoc" + ext;
    const fs::path corr_out = prefix + ".corr" + ext;
    write_summary_data(subset(d, r.kept), assoc_out, corr_out, delim);

    Manifest mf{"prune", argv};
    mf.config["threshold"] = threshold;
    mf.inputs = {assoc, corr};
    mf.outputs = {assoc_out, corr_out};
    mf.write(prefix + ".manifest.json");
    return kExitOk;
  }
};

struct SimulateCommand {
  std::string scenario;
  Eigen::Index reps = 100;
  std::string methods;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  double variance_frac = kDefaultVarianceFraction;
  std::string pca_basis = "centred";
  std::string gradient = "exact";
  bool raw = false;

  void add_to(CLI::App& app) {
    app.add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    app.add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
    app.add_option("--methods", methods, "Comma list such as mv-ivw@oracle,mv-liml@0.6,mv-ivw-pca");
    app.add_option("--out", out_path, "Output CSV (default stdout)");
    app.add_option("--seed", seed, "Override the scenario seed");
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");
    app.add_option("--variance-frac", variance_frac, "Variance share retained by PCA")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--pca-basis", pca_basis)->check(CLI::IsMember({"centred", "direct"}));
    app.add_option("--gradient", gradient, "LIML gradient")->check(CLI::IsMember({"exact", "partial", "fd"}));
    app.add_flag("--raw", raw, "Full precision output");
  }

  int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream&) const {
    ScenarioConfig cfg = load_scenario(scenario);
    if (seed) cfg.seed = *seed;
    MonteCarloOptions opts;
    opts.n_reps = reps;
    if (!methods.empty()) opts.methods = parse_method_list(methods);
    opts.threads = threads;
    if (!(variance_frac > 0.0 && variance_frac < 1.0)) {
      throw std::invalid_argument("--variance-frac must lie strictly between 0 and 1");
    }
    opts.pca.variance_fraction = variance_frac;
    opts.pca.basis = pca_basis == "direct" ? PcaBasis::Direct : PcaBasis::CentredCovariance;
    opts.liml.gradient_mode = parse_gradient(gradient);

    const MetricsTable table = run_monte_carlo(cfg, opts);
    emit(out_path, out, [&](std::ostream& o) { write_metrics_csv(o, table, raw ? 17 : 6); });
    if (!out_path.empty()) {
      Manifest mf{"simulate", argv};
      mf.config["scenario"] = to_text(cfg);
      mf.config["reps"] = reps;
      json labels = json::array();
      for (const auto& m : opts.methods) labels.push_back(m.label());
      mf.config["methods"] = labels;
      mf.config["variance_frac"] = variance_frac;
      mf.config["pca_basis"] = pca_basis;
      mf.config["gradient"] = gradient;
      mf.inputs = {scenario};
      if (cfg.corr.kind == CorrGenerator::External) mf.inputs.push_back(cfg.corr.external_path);
      mf.outputs = {out_path};
      mf.seed = cfg.seed;
      mf.write(manifest_path(out_path));
    }
    return kExitOk;
  }
};

struct DiagnoseCommand {
  DataOptions data;
  std::string out_path;

  void add_to(CLI::App& app) {
    data.add_to(app);
    app.add_option("--out", out_path, "Report file (default stdout)");
  }

  int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) const {
    const SummaryDataset d = data.load(err);
    const MatrixXd sigma = build_sigma(d);
    const MatrixXd psi = build_psi(d);
    const PcaTransform t = fit_pca_transform(d, data.pca());
    const TransformedData td = transform_dataset(d, t);

    const std::pair<const char*, ConditionNumber> conds[] = {
        {"sigma", condition_number(sigma)},
        {"psi", condition_number(psi)},
        {"sigma_tilde", condition_number(td.sigma)},
    };
    emit(out_path, out, [&](std::ostream& o) {
      o << "quantity,value\n"
        << "variants," << d.num_variants() << '\n'
        << "exposures," << d.num_exposures() << '\n'
        << "components," << t.k << '\n';
      for (const auto& [name, c] : conds) o << "cond_" << name << ',' << num(c.value, 6) << '\n';
    });
    for (const auto& [name, c] : conds) {
      if (c.singular) {
        err << "warning: " << name << " is numerically singular\n";
      } else if (c.value > kIllConditioned) {
        err << "warning: condition number of " << name << " is " << num(c.value, 6) << " (over "
            << kIllConditioned << ")\n";
      }
    }
    if (!out_path.empty()) {
      Manifest mf{"diagnose", argv};
      mf.config = data.to_json();
      mf.inputs = {data.assoc, data.corr};
      mf.outputs = {out_path};
      mf.write(manifest_path(out_path));
    }
    return kExitOk;
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multivariable cis-Mendelian randomization with correlated variants"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CISMVMR_VERSION);

  EstimateCommand estimate;
  PruneCommand prune_cmd;
  SimulateCommand simulate;
  DiagnoseCommand diagnose;
  auto* est_app = app.add_subcommand("estimate", "Estimate direct effects from summary data");
  estimate.add_to(*est_app);
  auto* prune_app = app.add_subcommand("prune", "Greedy correlation pruning");
  prune_cmd.add_to(*prune_app);
  auto* sim_app = app.add_subcommand("simulate", "Monte Carlo evaluation of the estimators");
  simulate.add_to(*sim_app);
  auto* diag_app = app.add_subcommand("diagnose", "Condition numbers of the weighting matrices");
  diagnose.add_to(*diag_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << CISMVMR_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitParse;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (est_app->parsed()) return estimate.run(args, out, err);
    if (prune_app->parsed()) return prune_cmd.run(args, out, err);
    if (sim_app->parsed()) return simulate.run(args, out, err);
    return diagnose.run(args, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace cismvmr
