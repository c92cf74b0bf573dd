#include "cgdp/random.hpp"

#include <stdexcept>

namespace cgdp {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the stream name, mixed with the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return Rng(splitmix64(seed ^ splitmix64(h)));
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
  return z;
}

Vector gaussian_sample(const Vector& mean, const Matrix& cov_chol, Rng& rng) {
  const Eigen::Index n = mean.size();
  if (cov_chol.rows() != n || cov_chol.cols() != n) {
    throw std::invalid_argument("gaussian_sample: dimension mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(cov_chol(i, i) > 0.0)) {
      throw std::invalid_argument("gaussian_sample: cholesky diagonal must be positive");
    }
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (cov_chol(i, j) != 0.0) {
        throw std::invalid_argument("gaussian_sample: factor is not lower triangular");
      }
    }
  }
  const Vector z = rng.normal_vector(n);
  return mean + cov_chol.triangularView<Eigen::Lower>() * z;
}

}  // namespace cgdp
