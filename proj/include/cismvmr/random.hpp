#pragma once

#include "cismvmr/linalg.hpp"

#include <cstdint>
#include <random>

namespace cismvmr {

/// Pseudo-random stream. Streams are addressed by (seed, replication,
/// stream id) so every replication and every sample within it draws from
/// its own sequence, independent of scheduling.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream);
  explicit Rng(std::uint64_t seed) : Rng(seed, 0, 0) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  double beta(double a, double b);

  MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Stream ids used within one simulated replication.
enum class Stream : std::uint64_t {
  Correlation = 1,
  Effects = 2,
  ExposureSample = 3,
  OutcomeSample = 4,
  ReferenceSample = 5,
};

inline Rng replication_stream(std::uint64_t seed, std::uint64_t replication, Stream s) {
  return Rng(seed, replication, static_cast<std::uint64_t>(s));
}

}  // namespace cismvmr
