#pragma once

#include "cismvmr/linalg.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cismvmr {

/// Summarized genetic associations for J variants with K exposures and one
/// outcome, plus the J x J variant correlation matrix.
struct SummaryDataset {
  std::vector<std::string> variant_ids;
  std::vector<std::string> exposure_ids;
  MatrixXd beta_x;  // J x K
  MatrixXd se_x;    // J x K
  VectorXd beta_y;  // J
  VectorXd se_y;    // J
  MatrixXd rho;     // J x J

  Eigen::Index num_variants() const { return beta_y.size(); }
  Eigen::Index num_exposures() const { return beta_x.cols(); }
};

/// K x K correlation matrix between exposures.
class ExposureCorrelation {
 public:
  /// Throws ValidationError unless `phi` is a PSD correlation matrix.
  explicit ExposureCorrelation(MatrixXd phi);
  static ExposureCorrelation identity(Eigen::Index k);

  const MatrixXd& matrix() const { return phi_; }
  Eigen::Index size() const { return phi_.rows(); }

 private:
  MatrixXd phi_;
};

struct Violation {
  std::string kind;                  // e.g. "asymmetry", "nonpositive_se_y"
  std::vector<Eigen::Index> where;   // zero-based indices
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
  bool has(const std::string& kind) const;
  std::string summary() const;
};

inline constexpr double kCorrelationTolerance = 1e-10;
inline constexpr double kRepairTolerance = 1e-6;

/// Checks every dataset invariant and lists all violations. Never throws.
ValidationReport validate(const SummaryDataset& d);

/// Returns `d` unchanged or throws ValidationError carrying the report.
const SummaryDataset& require_valid(const SummaryDataset& d);

/// Symmetrizes rho and resets its diagonal when they are off by at most
/// kRepairTolerance. Each repair adds a warning to `warnings`.
void repair_correlation(MatrixXd& rho, std::vector<std::string>& warnings);

/// Column delimiter of a text table: tab if the first line has one, else comma.
char detect_delimiter(const std::string& first_line);
char detect_delimiter(const std::filesystem::path& path);

SummaryDataset parse_summary_data(std::istream& assoc, std::istream& corr,
                                  std::vector<std::string>* warnings = nullptr);

SummaryDataset load_summary_data(const std::filesystem::path& assoc_path,
                                 const std::filesystem::path& corr_path,
                                 std::vector<std::string>* warnings = nullptr);

/// Square numeric matrix from a delimited file. A header row and a leading
/// label column are skipped when they are not numeric.
MatrixXd load_square_matrix(const std::filesystem::path& path);

/// `precision` is in significant digits; 17 round-trips doubles exactly.
void write_associations(std::ostream& out, const SummaryDataset& d, char delimiter = ',',
                        int precision = 17);
void write_correlation(std::ostream& out, const SummaryDataset& d, char delimiter = ',',
                       int precision = 17);
void write_summary_data(const SummaryDataset& d, const std::filesystem::path& assoc_path,
                        const std::filesystem::path& corr_path, char delimiter = ',',
                        int precision = 17);

/// Two-sided normal p-value for a Wald ratio.
double two_sided_p(double z);

/// Largest |beta_x / se_x| across exposures, per variant.
VectorXd max_abs_z(const SummaryDataset& d);

/// Smallest two-sided p-value across exposures, per variant.
VectorXd min_p_values(const SummaryDataset& d);

struct FilterResult {
  SummaryDataset data;
  std::vector<Eigen::Index> kept;  // indices into the input, original order

  bool empty() const { return kept.empty(); }
};

/// Keeps variants whose smallest p-value across exposures is below
/// `p_threshold`. Throws std::invalid_argument unless 0 < p_threshold <= 1.
FilterResult significance_filter(const SummaryDataset& d, double p_threshold);

}  // namespace cismvmr
