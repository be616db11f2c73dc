#include "cismvmr/random.hpp"

namespace cismvmr {

Rng::Rng(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication),
                    static_cast<std::uint32_t>(replication >> 32),
                    static_cast<std::uint32_t>(stream), 0x6d76u};
  engine_.seed(seq);
}

double Rng::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  MatrixXd m(rows, cols);
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = normal_(engine_);
  return m;
}

}  // namespace cismvmr
