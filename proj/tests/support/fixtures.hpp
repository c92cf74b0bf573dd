#pragma once

#include <algorithm>
#include <functional>

#include "cgdp/random.hpp"
#include "cgdp/scm.hpp"

namespace cgdp::testing {

// Sparse random SCM with a contractive F_s.
inline GroundTruthScm random_scm(int n, int d, Rng& rng, double noise = 0.1) {
  GroundTruthScm scm;
  scm.n = n;
  scm.d = d;
  scm.f_s = Matrix::Zero(n, n);
  scm.f_a = Matrix::Zero(n, d);
  scm.b_s = Vector::Zero(n);
  scm.b_a = Vector::Zero(d);
  auto weight = [&rng] {
    const double mag = 0.5 + 0.5 * rng.uniform();
    return rng.uniform() < 0.5 ? -mag : mag;
  };
  for (int i = 0; i < n; ++i) {
    scm.f_s(i, i) = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + 0.3 * rng.uniform());
    for (int j = 0; j < d; ++j)
      if (rng.uniform() < 0.4) scm.f_a(i, j) = weight();
    if (rng.uniform() < 0.5) scm.b_s(i) = weight();
  }
  for (int j = 0; j < d; ++j)
    if (rng.uniform() < 0.5) scm.b_a(j) = weight();
  scm.sigma_phi = noise * Matrix::Identity(n, n);
  scm.sigma_omega = noise;
  return scm;
}

// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x;
    Vector down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Vector& got, const Vector& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

}  // namespace cgdp::testing
