#include "cgdp/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cgdp {

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

void require_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

Matrix mat_expm(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("mat_expm: matrix is not square");
  }
  require_finite(m, "mat_expm");
  const Eigen::Index n = m.rows();
  if (n == 0) return Matrix(0, 0);

  constexpr int kOrder = 12;
  constexpr double kThreshold = 0.5;
  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > kThreshold) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / kThreshold)));
  }
  const Matrix scaled = m / std::ldexp(1.0, squarings);
  const Matrix eye = Matrix::Identity(n, n);

  // I + A(I + A/2(I + A/3(...)))
  Matrix result = eye;
  for (int j = kOrder; j >= 1; --j) {
    result = eye + (scaled * result) / static_cast<double>(j);
  }
  for (int s = 0; s < squarings; ++s) {
    result = result * result;
  }
  return result;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

Matrix cholesky_lower(const Matrix& spd, std::string_view what) {
  if (!is_symmetric(spd, 1e-9)) {
    throw std::domain_error(std::string(what) + ": matrix is not symmetric");
  }
  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error(std::string(what) + ": matrix is not positive definite");
  }
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) {
      throw std::domain_error(std::string(what) + ": matrix is not positive definite");
    }
  }
  return l;
}

Matrix psd_factor(const Matrix& cov, std::string_view what) {
  if (!is_symmetric(cov, 1e-9)) {
    throw std::domain_error(std::string(what) + ": covariance is not symmetric");
  }
  require_finite(cov, what);
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) {
    Matrix l = llt.matrixL();
    if ((l.diagonal().array() > 0.0).all()) return l;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -1e-10 * scale) {
    throw std::domain_error(std::string(what) + ": covariance is not positive semidefinite");
  }
  return eig.eigenvectors() * values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace cgdp
