#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "fpep/error.hpp"

namespace fpep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Normalized trace (1/n) tr(A).
inline double normalized_trace(const Matrix& a) {
    require(a.rows() == a.cols() && a.rows() > 0, ErrorCode::DimensionMismatch,
            "normalized trace needs a non-empty square matrix");
    return a.trace() / static_cast<double>(a.rows());
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double mean(const Vector& v) { return v.size() ? v.mean() : 0.0; }

/// Population mean-square deviation of the entries of v from c.
inline double mean_square_deviation(const Vector& v, double c) {
    if (v.size() == 0) return 0.0;
    return (v.array() - c).square().mean();
}

inline double median(std::vector<double> xs) {
    require(!xs.empty(), ErrorCode::InvalidParameter, "median of empty sample");
    const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
    std::nth_element(xs.begin(), mid, xs.end());
    double hi = *mid;
    if (xs.size() % 2 == 1) return hi;
    const double lo = *std::max_element(xs.begin(), mid);
    return 0.5 * (lo + hi);
}

inline double pearson_correlation(const Vector& a, const Vector& b) {
    require(a.size() == b.size() && a.size() > 1, ErrorCode::DimensionMismatch,
            "correlation needs two equal-length samples");
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double den = std::sqrt((da * da).sum() * (db * db).sum());
    if (den == 0.0) return (da.abs().maxCoeff() == 0.0 && db.abs().maxCoeff() == 0.0) ? 1.0 : 0.0;
    return (da * db).sum() / den;
}

/// Cholesky factor of a symmetric positive definite matrix, or SingularMatrix.
inline Eigen::LLT<Matrix> checked_llt(const Matrix& a, const char* what) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) {
        fail(ErrorCode::SingularMatrix, std::string(what) + " is not numerically positive definite");
    }
    return llt;
}

/// Diagonal of A^{-1} for a symmetric matrix. Uses Cholesky when A is positive
/// definite and falls back to an LU inverse otherwise.
inline Vector inverse_diagonal(const Matrix& a) {
    require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "inverse_diagonal needs square input");
    const Eigen::Index n = a.rows();
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-15) {
        Matrix linv = Matrix::Identity(n, n);
        llt.matrixL().solveInPlace(linv);
        return linv.colwise().squaredNorm().transpose();
    }
    Eigen::PartialPivLU<Matrix> lu(a);
    if (!(std::abs(lu.rcond()) > 1e-15)) fail(ErrorCode::SingularMatrix, "matrix is numerically singular");
    return lu.inverse().diagonal();
}

/// Eigenvalues of a symmetric matrix in ascending order.
inline Vector symmetric_eigenvalues(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorCode::NonFinite, "symmetric eigensolver failed");
    return es.eigenvalues();
}

/// Spectral radius of a general square matrix.
inline double spectral_radius(const Matrix& a) {
    Eigen::EigenSolver<Matrix> es(a, false);
    if (es.info() != Eigen::Success) fail(ErrorCode::NonFinite, "eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Max-norm distance of Q^T Q from the identity.
inline double orthogonality_residual(const Matrix& q) {
    return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

}  // namespace fpep
