#pragma once

#include <Eigen/Dense>

namespace cnmws {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Solves A S + S A^T = Q by vectorisation into a dense (q^2 x q^2) system.
// Meant for the small per-component blocks; throws NumericError when -A is
// not stable or the system is singular.
[[nodiscard]] Matrix solve_lyapunov(const Matrix& a, const Matrix& q);

// Solves S = P S P^T + Q (stationary covariance of s' = P s + noise).
[[nodiscard]] Matrix solve_discrete_lyapunov(const Matrix& p, const Matrix& q);

// True when every eigenvalue of a has strictly positive real part.
[[nodiscard]] bool has_positive_spectrum(const Matrix& a);

// L with L L^T = S for symmetric positive semi-definite S. Eigenvalues in
// [-tol * max|S|, 0) are clamped to zero; anything more negative throws.
[[nodiscard]] Matrix symmetric_factor(const Matrix& s, double tol = 1e-10);

// Kronecker product a (x) b.
[[nodiscard]] Matrix kron(const Matrix& a, const Matrix& b);

} // namespace cnmws
