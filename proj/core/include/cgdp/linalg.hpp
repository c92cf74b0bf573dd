#pragma once

#include <Eigen/Dense>

#include <string_view>

namespace cgdp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Throws std::invalid_argument naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);
void require_finite(const Vector& v, std::string_view what);

/// Matrix exponential by scaling and squaring around a degree-12 Taylor core.
/// The argument is halved until its 1-norm is at most 0.5, the truncated
/// series is evaluated in Horner form, and the result is squared back.
Matrix mat_expm(const Matrix& m);

/// Largest singular value.
double spectral_norm(const Matrix& m);

/// Lower Cholesky factor of a symmetric positive definite matrix; throws
/// std::domain_error otherwise.
Matrix cholesky_lower(const Matrix& spd, std::string_view what);

/// Factor F with F F^T = cov for a symmetric positive semidefinite matrix.
/// Falls back to an eigen decomposition when the matrix is singular, so a
/// zero covariance yields a zero factor.
Matrix psd_factor(const Matrix& cov, std::string_view what);

bool is_symmetric(const Matrix& m, double tol = 1e-12);

}  // namespace cgdp
