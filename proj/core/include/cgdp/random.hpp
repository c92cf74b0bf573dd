#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "cgdp/linalg.hpp"

namespace cgdp {

/// Seeded random source. There is no global generator anywhere in the
/// library: every sampler, trainer and environment takes one of these by
/// reference, so a seed and a call sequence fix every draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream for a named purpose, derived from a root seed.
  static Rng derive(std::uint64_t seed, std::string_view stream);

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);
  Vector normal_vector(Eigen::Index n);
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// mean + cov_chol * z with z standard normal. cov_chol must be lower
/// triangular with a strictly positive diagonal.
Vector gaussian_sample(const Vector& mean, const Matrix& cov_chol, Rng& rng);

}  // namespace cgdp
