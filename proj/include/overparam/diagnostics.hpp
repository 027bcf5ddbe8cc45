#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "overparam/errors.hpp"
#include "overparam/estimators.hpp"
#include "overparam/spectral_core.hpp"

namespace overparam {

class PartitionError : public InputError {
public:
    using InputError::InputError;
};

inline constexpr double kDefaultEstimabilityThreshold = 1e-6;

/// Y = J alpha + (Z - J zbar') beta_* + e, the intercept split off and predictors centered.
struct PartitionedModel {
    Vector zbar;
    std::optional<double> ybar;
    Matrix S_zz;
    std::optional<Vector> S_zy;
    long n = 0;
    Matrix centered_Z;

    long predictors() const noexcept { return zbar.size(); }
};

/// Splits X = [J, Z]. The first column must be constant ones.
inline PartitionedModel build_partitioned(const Matrix& X, const std::optional<Vector>& y = std::nullopt) {
    if (!X.allFinite()) throw InputError("design matrix has non-finite entries");
    const long n = X.rows();
    if (n < 2) throw PartitionError("partitioned model needs at least two rows");
    if (X.cols() < 1 || (X.col(0).array() != 1.0).any())
        throw PartitionError("first column of the design must be all ones");
    if (y && y->size() != n) throw InputError("response length does not match design rows");

    PartitionedModel pm;
    pm.n = n;
    const Matrix Z = X.rightCols(X.cols() - 1);
    pm.zbar = Z.colwise().mean().transpose();
    pm.centered_Z = Z.rowwise() - pm.zbar.transpose();
    const double dof = static_cast<double>(n - 1);
    pm.S_zz = pm.centered_Z.transpose() * pm.centered_Z / dof;
    if (y) {
        pm.ybar = y->mean();
        pm.S_zy = pm.centered_Z.transpose() * (*y) / dof;
    }
    return pm;
}

inline PartitionedModel build_partitioned(const DesignMatrix& dm) {
    return dm.has_response() ? build_partitioned(dm.X(), dm.Y()) : build_partitioned(dm.X());
}

struct IdentifiableSplit {
    Vector identifiable;     // N beta
    Vector nonidentifiable;  // (I - N) beta
};

inline IdentifiableSplit identifiable_split(const Vector& beta, const SpectralDecomposition& sd) {
    if (beta.size() != sd.dim()) throw InputError("coefficient length does not match design columns");
    auto Vt = sd.retained();
    Vector nb = Vt * (Vt.transpose() * beta);
    return {nb, beta - nb};
}

inline IdentifiableSplit identifiable_split(const Vector& beta, const DesignMatrix& dm,
                                            double rank_tol = kDefaultRankTol) {
    return identifiable_split(beta, spectral_decompose(dm, rank_tol));
}

struct EstimabilityScore {
    double sse = 0.0;
    double relative = 0.0;
    double leverage = 0.0;
    bool estimable = false;
};

/// Scores future predictor vectors z_f against a training design.
///
/// sse is the squared residual of z_f - zbar after projecting onto C(centered_Z'), relative
/// divides by ||z_f - zbar||^2, and leverage is x_f'(X'X)^+ x_f with x_f = (1, z_f').
class EstimabilityScorer {
public:
    EstimabilityScorer(const PartitionedModel& pm, const Matrix& X,
                       double threshold = kDefaultEstimabilityThreshold,
                       double rank_tol = kDefaultRankTol)
        : zbar_(pm.zbar), threshold_(threshold), full_(spectral_decompose(X, rank_tol)) {
        if (X.cols() != pm.predictors() + 1)
            throw InputError("design has " + std::to_string(X.cols()) + " columns, expected " +
                             std::to_string(pm.predictors() + 1));
        if (pm.predictors() > 0) {
            const auto centered = spectral_decompose(pm.centered_Z, rank_tol);
            basis_ = centered.retained();
        } else {
            basis_ = Matrix(0, 0);
        }
        pinv_ = gram_pseudoinverse(full_);
    }

    EstimabilityScore score(const Vector& z_f) const {
        if (z_f.size() != zbar_.size())
            throw InputError("candidate has " + std::to_string(z_f.size()) + " predictors, expected " +
                             std::to_string(zbar_.size()));
        EstimabilityScore sc;
        const Vector d = z_f - zbar_;
        Vector resid = d;
        if (basis_.cols() > 0) resid -= basis_ * (basis_.transpose() * d);
        sc.sse = resid.squaredNorm();
        const double denom = d.squaredNorm();
        sc.relative = denom > 0 ? sc.sse / denom : 0.0;
        Vector x_f(z_f.size() + 1);
        x_f(0) = 1.0;
        x_f.tail(z_f.size()) = z_f;
        sc.leverage = x_f.dot(pinv_ * x_f);
        sc.estimable = sc.relative <= threshold_;
        return sc;
    }

    std::vector<EstimabilityScore> score_rows(const Matrix& Z_f) const {
        std::vector<EstimabilityScore> out;
        out.reserve(Z_f.rows());
        for (long i = 0; i < Z_f.rows(); ++i) out.push_back(score(Z_f.row(i).transpose()));
        return out;
    }

    /// Orthonormal basis of C(centered_Z').
    const Matrix& centered_row_basis() const noexcept { return basis_; }

private:
    Vector zbar_;
    double threshold_;
    SpectralDecomposition full_;
    Matrix basis_;
    Matrix pinv_;
};

inline EstimabilityScore estimability_score(const Vector& z_f, const PartitionedModel& pm,
                                            const Matrix& X,
                                            double threshold = kDefaultEstimabilityThreshold) {
    return EstimabilityScorer(pm, X, threshold).score(z_f);
}

struct PopulationMoments {
    double mu_y = 0.0;
    Vector mu_z;
    Matrix Sigma_zz;
    Vector Sigma_zy;
};

/// Minimum-norm solution of Sigma_zz beta = Sigma_zy; throws MomentError when the system is
/// inconsistent.
inline Vector blp_coefficients(const PopulationMoments& m, double rank_tol = kDefaultRankTol) {
    const long k = m.Sigma_zz.rows();
    if (m.Sigma_zz.cols() != k || m.Sigma_zy.size() != k || m.mu_z.size() != k)
        throw InputError("population moments have inconsistent dimensions");
    if ((m.Sigma_zz - m.Sigma_zz.transpose()).cwiseAbs().maxCoeff() > 1e-8)
        throw InputError("Sigma_zz is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.Sigma_zz);
    const Vector& vals = es.eigenvalues();
    const double top = vals.cwiseAbs().maxCoeff();
    if (vals.minCoeff() < -1e-8 * std::max(1.0, top))
        throw InputError("Sigma_zz is not positive semidefinite");
    Vector coef = Vector::Zero(k);
    for (long j = 0; j < k; ++j) {
        if (vals(j) > rank_tol * top) {
            const auto v = es.eigenvectors().col(j);
            coef += v * (v.dot(m.Sigma_zy) / vals(j));
        }
    }
    const double gap = (m.Sigma_zz * coef - m.Sigma_zy).norm();
    if (gap > 1e-8 * std::max(1.0, m.Sigma_zy.norm()))
        throw MomentError("Sigma_zy is not in the column space of Sigma_zz");
    return coef;
}

/// mu_y + (z - mu_z)' beta_*.
inline double blp(const PopulationMoments& m, const Vector& z) {
    if (z.size() != m.mu_z.size()) throw InputError("predictor vector has wrong length");
    return m.mu_y + (z - m.mu_z).dot(blp_coefficients(m));
}

struct VarianceEstimate {
    double sigma2 = 0.0;
    /// Per test row: x_f lies in C(X') up to the relative threshold.
    std::vector<bool> estimable;
};

/// (Y_f - X_f b)'[I + X_f (X'X)^+ X_f']^{-1}(Y_f - X_f b) / n_f.
inline VarianceEstimate sigma2_test_estimate(const Vector& y_f, const Matrix& X_f,
                                             const SpectralDecomposition& sd, const Vector& beta_hat,
                                             double threshold = kDefaultEstimabilityThreshold) {
    const long nf = X_f.rows();
    if (nf < 1) throw InputError("test set must have at least one row");
    if (y_f.size() != nf) throw InputError("test response length does not match test rows");
    if (X_f.cols() != sd.dim() || beta_hat.size() != sd.dim())
        throw InputError("test design columns do not match the training design");

    const Vector resid = y_f - X_f * beta_hat;
    Matrix middle = X_f * gram_pseudoinverse(sd) * X_f.transpose();
    middle.diagonal().array() += 1.0;
    VarianceEstimate out;
    out.sigma2 = resid.dot(middle.llt().solve(resid)) / static_cast<double>(nf);

    auto Vt = sd.retained();
    out.estimable.reserve(nf);
    for (long i = 0; i < nf; ++i) {
        const Vector x = X_f.row(i).transpose();
        const double total = x.squaredNorm();
        const double off = (x - Vt * (Vt.transpose() * x)).squaredNorm();
        out.estimable.push_back(total == 0 || off / total <= threshold);
    }
    return out;
}

struct EigenDecayRow {
    long index;  // 1-based
    double eigenvalue;
    double cumulative_share;
};

/// Cumulative share of the retained eigenvalues, largest first.
inline std::vector<EigenDecayRow> eigen_decay_report(const SpectralDecomposition& sd) {
    if (sd.rank < 1) throw DegenerateDesignError("eigen-decay report needs rank >= 1");
    const Vector s = sd.retained_values();
    const double total = s.sum();
    std::vector<EigenDecayRow> rows;
    rows.reserve(s.size());
    double running = 0.0;
    for (long j = 0; j < s.size(); ++j) {
        running += s(j);
        rows.push_back({j + 1, s(j), running / total});
    }
    rows.back().cumulative_share = 1.0;
    return rows;
}

/// Number of leading eigenvalues needed to reach the given cumulative share.
inline long components_for_share(const std::vector<EigenDecayRow>& report, double share) {
    for (const auto& row : report)
        if (row.cumulative_share >= share) return row.index;
    return report.empty() ? 0 : report.back().index;
}

}  // namespace overparam
