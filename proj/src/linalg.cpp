#include "cnmws/linalg.hpp"

#include <Eigen/Eigenvalues>

#include "cnmws/errors.hpp"

namespace cnmws {

namespace {

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix unvec(const Vector& v, Eigen::Index n) {
    Matrix out(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
            out(r, c) = v(c * n + r);
        }
    }
    return out;
}

Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

} // namespace

bool has_positive_spectrum(const Matrix& a) {
    if (a.rows() == 0) {
        return true;
    }
    Eigen::EigenSolver<Matrix> solver(a, false);
    return (solver.eigenvalues().real().array() > 0.0).all();
}

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Matrix solve_lyapunov(const Matrix& a, const Matrix& q) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || q.rows() != n || q.cols() != n) {
        throw NumericError("solve_lyapunov: dimension mismatch");
    }
    if (!has_positive_spectrum(a)) {
        throw NumericError("solve_lyapunov: -A is not stable");
    }
    const Matrix id = Matrix::Identity(n, n);
    // vec(A S + S A^T) = (I (x) A + A (x) I) vec(S)
    const Matrix op = kron(id, a) + kron(a, id);
    Eigen::FullPivLU<Matrix> lu(op);
    if (!lu.isInvertible()) {
        throw NumericError("solve_lyapunov: singular operator");
    }
    return symmetrize(unvec(lu.solve(vec(q)), n));
}

Matrix solve_discrete_lyapunov(const Matrix& p, const Matrix& q) {
    const Eigen::Index n = p.rows();
    if (p.cols() != n || q.rows() != n || q.cols() != n) {
        throw NumericError("solve_discrete_lyapunov: dimension mismatch");
    }
    Eigen::EigenSolver<Matrix> es(p, false);
    if ((es.eigenvalues().array().abs() >= 1.0).any()) {
        throw NumericError("solve_discrete_lyapunov: transition is not contracting");
    }
    const Matrix op = Matrix::Identity(n * n, n * n) - kron(p, p);
    Eigen::FullPivLU<Matrix> lu(op);
    return symmetrize(unvec(lu.solve(vec(q)), n));
}

Matrix symmetric_factor(const Matrix& s, double tol) {
    const Eigen::Index n = s.rows();
    if (n == 0) {
        return Matrix(0, 0);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
    const double scale = std::max(s.cwiseAbs().maxCoeff(), 1e-300);
    Vector root(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lambda = es.eigenvalues()(i);
        if (lambda < -tol * scale) {
            throw NumericError("covariance is not positive semi-definite");
        }
        root(i) = lambda > 0.0 ? std::sqrt(lambda) : 0.0;
    }
    return es.eigenvectors() * root.asDiagonal();
}

} // namespace cnmws
