#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "overparam/errors.hpp"

namespace overparam {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultRankTol = 1e-10;

/// Observed n x p design X with an optional response Y.
class DesignMatrix {
public:
    explicit DesignMatrix(Matrix X) : X_(std::move(X)) { validate(); }
    DesignMatrix(Matrix X, Vector Y) : X_(std::move(X)), Y_(std::move(Y)) { validate(); }

    long rows() const noexcept { return X_.rows(); }
    long cols() const noexcept { return X_.cols(); }
    const Matrix& X() const noexcept { return X_; }

    bool has_response() const noexcept { return Y_.has_value(); }
    const Vector& Y() const {
        if (!Y_) throw InputError("design matrix has no response vector");
        return *Y_;
    }

    /// Same features, different response.
    DesignMatrix with_response(Vector Y) const { return DesignMatrix(X_, std::move(Y)); }

private:
    void validate() const {
        if (X_.rows() < 1 || X_.cols() < 1)
            throw InputError("design matrix must have at least one row and one column");
        if (!X_.allFinite()) throw InputError("design matrix has non-finite entries");
        if (Y_) {
            if (Y_->size() != X_.rows())
                throw InputError("response length " + std::to_string(Y_->size()) +
                                 " does not match " + std::to_string(X_.rows()) + " rows");
            if (!Y_->allFinite()) throw InputError("response has non-finite entries");
        }
    }

    Matrix X_;
    std::optional<Vector> Y_;
};

/// Eigenstructure of (1/n)X'X.
///
/// `eigenvalues` has length p in descending order; entries at or below
/// rank_tol * s_1 are stored as exactly zero. `eigenvectors` holds at least the
/// t retained columns (all p columns when the p x p problem was solved directly).
struct SpectralDecomposition {
    enum class Route { direct, gram };

    Matrix eigenvectors;
    Vector eigenvalues;
    long rank = 0;
    double rank_tol = kDefaultRankTol;
    long n = 0;
    Route route = Route::direct;

    long dim() const noexcept { return eigenvalues.size(); }
    auto retained() const { return eigenvectors.leftCols(rank); }
    auto leading(long r) const { return eigenvectors.leftCols(r); }
    auto retained_values() const { return eigenvalues.head(rank); }
    double top() const { return eigenvalues.size() ? eigenvalues(0) : 0.0; }
};

namespace detail {

// Sorts eigenpairs of a symmetric matrix in descending order, clamping tiny
// negatives from round-off to zero.
inline std::pair<Vector, Matrix> descending_eigen(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
    const long k = sym.rows();
    Vector vals(k);
    Matrix vecs(k, k);
    for (long j = 0; j < k; ++j) {
        vals(j) = std::max(0.0, es.eigenvalues()(k - 1 - j));
        vecs.col(j) = es.eigenvectors().col(k - 1 - j);
    }
    return {vals, vecs};
}

inline long count_retained(const Vector& vals, double rank_tol) {
    if (vals.size() == 0 || vals(0) <= 0.0) return 0;
    const double cut = rank_tol * vals(0);
    long t = 0;
    while (t < vals.size() && vals(t) > cut) ++t;
    return t;
}

// Re-orthonormalizes nearly orthonormal columns without changing their signs.
inline void polish_orthonormal(Matrix& V) {
    if (V.cols() == 0) return;
    Eigen::HouseholderQR<Matrix> qr(V);
    Matrix Q = qr.householderQ() * Matrix::Identity(V.rows(), V.cols());
    Matrix R = qr.matrixQR().topLeftCorner(V.cols(), V.cols()).triangularView<Eigen::Upper>();
    for (long j = 0; j < V.cols(); ++j)
        if (R(j, j) < 0) Q.col(j) = -Q.col(j);
    V = std::move(Q);
}

}  // namespace detail

/// Eigendecomposition of the p x p problem (1/n)X'X, formed explicitly.
inline SpectralDecomposition spectral_decompose_direct(const Matrix& X,
                                                       double rank_tol = kDefaultRankTol) {
    if (!X.allFinite()) throw InputError("design matrix has non-finite entries");
    const double n = static_cast<double>(X.rows());
    Matrix gram = (X.transpose() * X) / n;
    auto [vals, vecs] = detail::descending_eigen(gram);
    SpectralDecomposition sd;
    sd.rank = detail::count_retained(vals, rank_tol);
    for (long j = sd.rank; j < vals.size(); ++j) vals(j) = 0.0;
    sd.eigenvalues = std::move(vals);
    sd.eigenvectors = std::move(vecs);
    sd.rank_tol = rank_tol;
    sd.n = X.rows();
    sd.route = SpectralDecomposition::Route::direct;
    return sd;
}

/// Eigenstructure of (1/n)X'X recovered from the n x n problem (1/n)XX' = U D U'.
/// Retained eigenvectors are V_t = X'U_t D_t(1/sqrt(n s_j)); only those t columns are stored.
inline SpectralDecomposition spectral_decompose_gram(const Matrix& X,
                                                     double rank_tol = kDefaultRankTol) {
    if (!X.allFinite()) throw InputError("design matrix has non-finite entries");
    const long n = X.rows();
    const long p = X.cols();
    Matrix outer = (X * X.transpose()) / static_cast<double>(n);
    auto [vals, U] = detail::descending_eigen(outer);
    const long t = detail::count_retained(vals, rank_tol);

    Matrix V = X.transpose() * U.leftCols(t);
    for (long j = 0; j < t; ++j) V.col(j) /= std::sqrt(static_cast<double>(n) * vals(j));
    detail::polish_orthonormal(V);

    SpectralDecomposition sd;
    sd.eigenvalues = Vector::Zero(p);
    sd.eigenvalues.head(t) = vals.head(t);
    sd.eigenvectors = std::move(V);
    sd.rank = t;
    sd.rank_tol = rank_tol;
    sd.n = n;
    sd.route = SpectralDecomposition::Route::gram;
    return sd;
}

/// Chooses the n x n route whenever p > n, the p x p route otherwise.
inline SpectralDecomposition spectral_decompose(const Matrix& X, double rank_tol = kDefaultRankTol) {
    if (X.rows() < 1 || X.cols() < 1) throw InputError("empty design matrix");
    return X.cols() > X.rows() ? spectral_decompose_gram(X, rank_tol)
                               : spectral_decompose_direct(X, rank_tol);
}

inline SpectralDecomposition spectral_decompose(const DesignMatrix& dm,
                                                double rank_tol = kDefaultRankTol) {
    return spectral_decompose(dm.X(), rank_tol);
}

/// A perpendicular projection operator: M onto C(X) or N onto C(X').
struct ProjectionOperator {
    enum class Kind { column_space, row_space };
    Kind kind;
    Matrix matrix;

    Vector apply(const Vector& v) const { return matrix * v; }
    Vector complement(const Vector& v) const { return v - matrix * v; }
};

/// N = V_t V_t'.
inline ProjectionOperator ppo_row_space(const SpectralDecomposition& sd) {
    auto Vt = sd.retained();
    return {ProjectionOperator::Kind::row_space, Vt * Vt.transpose()};
}

inline ProjectionOperator ppo_row_space(const DesignMatrix& dm, double rank_tol = kDefaultRankTol) {
    return ppo_row_space(spectral_decompose(dm, rank_tol));
}

/// M = X (X'X)^+ X' = U_t U_t', with U_t = X V_t D_t(1/sqrt(n s_j)).
inline ProjectionOperator ppo_column_space(const Matrix& X, const SpectralDecomposition& sd) {
    Matrix U = X * sd.retained();
    for (long j = 0; j < sd.rank; ++j)
        U.col(j) /= std::sqrt(static_cast<double>(sd.n) * sd.eigenvalues(j));
    detail::polish_orthonormal(U);
    return {ProjectionOperator::Kind::column_space, U * U.transpose()};
}

inline ProjectionOperator ppo_column_space(const DesignMatrix& dm, double rank_tol = kDefaultRankTol) {
    return ppo_column_space(dm.X(), spectral_decompose(dm, rank_tol));
}

/// Moore-Penrose inverse of X'X: V_t D_t(1/(n s_j)) V_t'. Note the n factor:
/// eigenvalues are those of (1/n)X'X.
inline Matrix gram_pseudoinverse(const SpectralDecomposition& sd) {
    auto Vt = sd.retained();
    Vector inv = (static_cast<double>(sd.n) * sd.retained_values().array()).inverse().matrix();
    return Vt * inv.asDiagonal() * Vt.transpose();
}

}  // namespace overparam
