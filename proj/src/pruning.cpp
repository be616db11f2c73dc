#include "cismvmr/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cismvmr {

PruneResult prune_by_score(const MatrixXd& rho, const VectorXd& score, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("pruning threshold must lie in (0, 1]");
  }
  const Eigen::Index J = score.size();
  if (rho.rows() != J || rho.cols() != J) throw std::invalid_argument("rho does not match scores");

  std::vector<Eigen::Index> order(J);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return score(a) > score(b); });

  PruneResult out;
  out.threshold = threshold;
  std::vector<char> removed(J, 0);
  for (Eigen::Index pick : order) {
    if (removed[pick]) continue;
    removed[pick] = 1;
    out.kept.push_back(pick);
    for (Eigen::Index other : order) {
      if (!removed[other] && std::abs(rho(pick, other)) >= threshold) {
        removed[other] = 1;
        out.dropped.emplace_back(other, pick);
      }
    }
  }
  return out;
}

PruneResult prune(const SummaryDataset& d, double threshold) {
  // max |z| orders variants exactly as the min p-value does, without the
  // ties that appear once erfc underflows for very strong associations.
  return prune_by_score(d.rho, max_abs_z(d), threshold);
}

SummaryDataset subset(const SummaryDataset& d, std::span<const Eigen::Index> kept) {
  const Eigen::Index J = d.num_variants();
  std::vector<char> used(J, 0);
  for (auto i : kept) {
    if (i < 0 || i >= J) throw std::out_of_range("variant index out of range");
    if (used[i]) throw std::invalid_argument("repeated variant index");
    used[i] = 1;
  }
  const auto n = static_cast<Eigen::Index>(kept.size());
  const Eigen::Index K = d.num_exposures();

  SummaryDataset out;
  out.exposure_ids = d.exposure_ids;
  out.beta_x.resize(n, K);
  out.se_x.resize(n, K);
  out.beta_y.resize(n);
  out.se_y.resize(n);
  out.rho.resize(n, n);
  out.variant_ids.reserve(kept.size());
  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index src = kept[a];
    out.variant_ids.push_back(d.variant_ids[src]);
    out.beta_x.row(a) = d.beta_x.row(src);
    out.se_x.row(a) = d.se_x.row(src);
    out.beta_y(a) = d.beta_y(src);
    out.se_y(a) = d.se_y(src);
    for (Eigen::Index b = 0; b < n; ++b) out.rho(a, b) = d.rho(src, kept[b]);
  }
  return out;
}

}  // namespace cismvmr
