#pragma once

#include "cismvmr/random.hpp"
#include "cismvmr/random_correlation.hpp"
#include "cismvmr/summary_data.hpp"

#include <filesystem>
#include <fstream>
#include <string>

namespace testing {

using cismvmr::MatrixXd;
using cismvmr::Rng;
using cismvmr::SummaryDataset;
using cismvmr::VectorXd;

/// Well-conditioned random correlation matrix (sample correlation of 3J draws).
inline MatrixXd random_correlation(Eigen::Index J, Rng& rng) {
  if (J == 1) return MatrixXd::Ones(1, 1);
  return cismvmr::column_correlation(rng.normal_matrix(3 * J, J));
}

inline SummaryDataset random_dataset(Eigen::Index J, Eigen::Index K, Rng& rng, double se_x_scale = 0.02) {
  SummaryDataset d;
  for (Eigen::Index j = 0; j < J; ++j) d.variant_ids.push_back("rs" + std::to_string(j + 1));
  for (Eigen::Index k = 0; k < K; ++k) d.exposure_ids.push_back("e" + std::to_string(k + 1));
  d.beta_x = rng.normal_matrix(J, K) * 0.2;
  d.se_x.resize(J, K);
  for (Eigen::Index j = 0; j < J; ++j) {
    for (Eigen::Index k = 0; k < K; ++k) d.se_x(j, k) = se_x_scale * rng.uniform(0.5, 1.5);
  }
  const VectorXd theta = rng.normal_matrix(K, 1);
  d.se_y.resize(J);
  for (Eigen::Index j = 0; j < J; ++j) d.se_y(j) = rng.uniform(0.01, 0.05);
  d.beta_y = d.beta_x * theta + d.se_y.cwiseProduct(VectorXd(rng.normal_matrix(J, 1)));
  d.rho = random_correlation(J, rng);
  return d;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cismvmr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(CISMVMR_FIXTURE_DIR) / name;
}

}  // namespace testing
