#pragma once

#include "cismvmr/diagnostics.hpp"
#include "cismvmr/estimate.hpp"
#include "cismvmr/ivw.hpp"
#include "cismvmr/liml.hpp"
#include "cismvmr/random.hpp"
#include "cismvmr/summary_data.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cismvmr {

enum class CorrGenerator { UniformGram, CVine, Onion, External };

struct CorrelationSpec {
  CorrGenerator kind = CorrGenerator::UniformGram;
  double lo = -0.3;  // uniform_gram bounds
  double hi = 1.0;
  double eta = 1.0;  // c_vine / onion concentration
  std::filesystem::path external_path;
  MatrixXd external;  // loaded matrix for External
};

/// Sample on which the variant correlation matrix is estimated.
struct CorrelationSource {
  bool independent = false;
  Eigen::Index n = 10000;  // size of the independent reference sample
};

/// One simulation scenario. Defaults reproduce the main scenario: 3 traits,
/// 100 variants, 5 causal variants per trait, two samples of 10 000.
struct ScenarioConfig {
  std::string name = "main";
  Eigen::Index n_exposure_sample = 10000;
  Eigen::Index n_outcome_sample = 10000;
  Eigen::Index n_variants = 100;
  Eigen::Index n_exposures = 3;
  Eigen::Index causal_per_exposure = 5;
  double alpha_mean = 0.08;
  double alpha_sd = 0.01;
  VectorXd theta_true = (VectorXd(3) << 0.4, 0.0, -0.6).finished();
  /// Whether the confounders U also enter the outcome.
  bool confounding = true;
  CorrelationSpec corr;
  CorrelationSource corr_source;
  std::optional<int> rounding_decimals;
  std::uint64_t seed = 20211;

  /// Throws ValidationError when the invariants do not hold.
  void validate() const;
};

/// Parses the key = value scenario format. Throws ParseError for unknown
/// keys or malformed values and ValidationError for inconsistent settings.
ScenarioConfig parse_scenario(std::istream& in, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string to_text(const ScenarioConfig& cfg);

MatrixXd generate_correlation(const CorrelationSpec& spec, Eigen::Index J, Rng& rng);

struct IndividualData {
  MatrixXd genotypes;  // n x J; exposure sample rows first
  MatrixXd exposures;  // n x K
  VectorXd outcome;    // n
  Eigen::Index n_exposure_sample = 0;
};

struct TruthRecord {
  MatrixXd variant_correlation;  // B
  VectorXd alpha;                // one effect per causal variant
  std::vector<std::vector<Eigen::Index>> causal_by_exposure;
  std::vector<Eigen::Index> causal_variants;  // oracle set
  VectorXd theta;
  std::vector<InstrumentStrength> strength;  // per exposure, both samples
};

struct SimulatedDataset {
  SummaryDataset data;
  TruthRecord truth;
  std::optional<IndividualData> individuals;
};

struct RegressionSummary {
  VectorXd beta;
  VectorXd se;
  std::vector<Eigen::Index> exact_fit;  // variants whose residuals vanish (se = 0)
};

/// Slope and standard error of a simple regression with intercept of the
/// phenotype on each genotype column. Throws std::invalid_argument for
/// n < 3 or a constant genotype column.
RegressionSummary summarize_associations(const MatrixXd& genotypes, const VectorXd& phenotype);

/// Univariable R^2 and F of each exposure on its own causal variants.
std::vector<InstrumentStrength> instrument_strength(const IndividualData& data, const TruthRecord& truth);

/// Generates replication `replication` of the scenario. All randomness
/// comes from substreams of (cfg.seed, replication).
SimulatedDataset simulate_dataset(const ScenarioConfig& cfg, std::uint64_t replication,
                                  bool keep_individuals = false);

enum class InstrumentSet { All, Oracle, Pruned };

struct MethodSpec {
  Method method = Method::MvIvw;
  InstrumentSet set = InstrumentSet::All;
  double threshold = 1.0;  // Pruned only

  std::string label() const;          // e.g. "mv-ivw@0.6"
  std::string display_method() const; // e.g. "MV-IVW"
  std::string display_pruning() const;// "Oracle", "0.6" or "-"
};

/// Parses "mv-ivw@0.4", "mv-liml@oracle" or "mv-ivw-pca".
MethodSpec parse_method_spec(const std::string& text);
std::vector<MethodSpec> parse_method_list(const std::string& comma_separated);

/// MV-IVW and MV-LIML at oracle, 0.4, 0.6 and 0.8, then both PCA methods.
std::vector<MethodSpec> default_methods();

struct MonteCarloOptions {
  Eigen::Index n_reps = 100;
  std::vector<MethodSpec> methods = default_methods();
  PcaOptions pca;
  LimlConfig liml;
  /// Replications with fewer than K + min_excess instruments count as
  /// identification failures.
  Eigen::Index min_excess_instruments = 1;
  unsigned threads = 0;  // 0 = hardware concurrency
};

struct ParameterSummary {
  double mean = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double power = 0.0;  // % of 95% intervals excluding zero
};

struct MethodSummary {
  MethodSpec spec;
  std::vector<ParameterSummary> params;  // one per exposure
  Eigen::Index successes = 0;
  Eigen::Index failures = 0;
  Eigen::Index nonconverged = 0;
  double median_condition = 0.0;
  double mean_instruments = 0.0;
  bool degenerate = false;  // fewer than two successful replications
};

struct MetricsTable {
  std::string scenario;
  Eigen::Index n_reps = 0;
  VectorXd theta_true;
  std::vector<MethodSummary> methods;

  const MethodSummary& find(const std::string& label) const;
};

/// Outcome of one method on one replication.
struct MethodOutcome {
  std::optional<Estimate> estimate;
  bool converged = true;
  std::string failure;
};

/// Runs every method on one simulated dataset. Independent of method order.
std::vector<MethodOutcome> evaluate_methods(const SimulatedDataset& sim,
                                            const MonteCarloOptions& options);

MetricsTable aggregate(const std::vector<std::vector<MethodOutcome>>& per_replication,
                       const MonteCarloOptions& options, const VectorXd& theta_true);

/// Simulates n_reps datasets (in parallel) and aggregates every method.
/// Output depends only on the configuration and seed.
MetricsTable run_monte_carlo(const ScenarioConfig& cfg, const MonteCarloOptions& options);

/// CSV with columns Parameter, Method, Pruning, Mean, SD, Mean SE, Power,
/// Reps, Successes, Failures, Nonconverged, Median Cond, Mean Instruments,
/// Degenerate.
void write_metrics_csv(std::ostream& out, const MetricsTable& table, int precision = 6);

}  // namespace cismvmr
