#pragma once

#include "cismvmr/summary_data.hpp"

#include <span>
#include <utility>
#include <vector>

namespace cismvmr {

struct PruneResult {
  std::vector<Eigen::Index> kept;                                // selection order
  std::vector<std::pair<Eigen::Index, Eigen::Index>> dropped;   // (variant, selected cause)
  double threshold = 1.0;
};

/// Greedy LD pruning. Repeatedly selects the remaining variant with the
/// smallest p-value across exposures (ties go to the lower index) and drops
/// every remaining variant with |rho| >= threshold to it. Kept variants
/// therefore satisfy |rho| < threshold pairwise.
///
/// Throws std::invalid_argument unless 0 < threshold <= 1.
PruneResult prune(const SummaryDataset& d, double threshold);

/// Same procedure driven by an explicit per-variant ranking score, where a
/// larger score means a stronger association.
PruneResult prune_by_score(const MatrixXd& rho, const VectorXd& score, double threshold);

/// Restricts every per-variant array (and rho rows and columns) to `kept`,
/// in the given order. Throws std::out_of_range for an invalid index and
/// std::invalid_argument for repeated indices.
SummaryDataset subset(const SummaryDataset& d, std::span<const Eigen::Index> kept);

}  // namespace cismvmr
