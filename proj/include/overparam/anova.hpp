#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "overparam/errors.hpp"
#include "overparam/spectral_core.hpp"

// Closed-form estimates for balanced ANOVA models, used as exact oracles for the
// generic estimators. Parameter order is (mu, alpha_1..alpha_a[, eta_1..eta_b]).
namespace overparam::anova {

struct OneWayLayout {
    long a = 0;
    long n_rep = 1;
    Vector group_means;
    double grand_mean = 0.0;

    static OneWayLayout from_means(Vector means, long n_rep = 1) {
        if (means.size() < 2) throw InputError("one-way layout needs at least two groups");
        if (n_rep < 1) throw InputError("one-way layout needs at least one replicate");
        OneWayLayout l;
        l.a = means.size();
        l.n_rep = n_rep;
        l.grand_mean = means.mean();
        l.group_means = std::move(means);
        return l;
    }

    /// Observations ordered group-major: y_{11}, ..., y_{1N}, y_{21}, ...
    static OneWayLayout from_observations(const Vector& y, long a, long n_rep) {
        if (a < 2 || n_rep < 1 || y.size() != a * n_rep)
            throw InputError("observation count does not match a balanced one-way layout");
        Vector means(a);
        for (long i = 0; i < a; ++i) means(i) = y.segment(i * n_rep, n_rep).mean();
        return from_means(std::move(means), n_rep);
    }
};

struct TwoWayLayout {
    long a = 0;
    long b = 0;
    long n_rep = 1;
    Vector row_means;
    Vector col_means;
    double grand_mean = 0.0;

    static TwoWayLayout from_means(Vector row_means, Vector col_means, long n_rep = 1) {
        if (row_means.size() < 2 || col_means.size() < 2)
            throw InputError("two-way layout needs at least two levels per factor");
        if (n_rep < 1) throw InputError("two-way layout needs at least one replicate");
        const double grand = row_means.mean();
        if (std::abs(col_means.mean() - grand) > 1e-10 * std::max(1.0, std::abs(grand)))
            throw InputError("row and column means imply different grand means");
        TwoWayLayout l;
        l.a = row_means.size();
        l.b = col_means.size();
        l.n_rep = n_rep;
        l.row_means = std::move(row_means);
        l.col_means = std::move(col_means);
        l.grand_mean = grand;
        return l;
    }

    /// Observations ordered (i, j, k) with k fastest, matching the Kronecker design.
    static TwoWayLayout from_observations(const Vector& y, long a, long b, long n_rep) {
        if (a < 2 || b < 2 || n_rep < 1 || y.size() != a * b * n_rep)
            throw InputError("observation count does not match a balanced two-way layout");
        TwoWayLayout l;
        l.a = a;
        l.b = b;
        l.n_rep = n_rep;
        l.row_means = Vector::Zero(a);
        l.col_means = Vector::Zero(b);
        for (long i = 0; i < a; ++i)
            for (long j = 0; j < b; ++j) {
                const double cell = y.segment((i * b + j) * n_rep, n_rep).sum();
                l.row_means(i) += cell;
                l.col_means(j) += cell;
            }
        l.row_means /= static_cast<double>(b * n_rep);
        l.col_means /= static_cast<double>(a * n_rep);
        l.grand_mean = y.mean();
        return l;
    }
};

/// [J, indicator columns], rows group-major.
inline Matrix oneway_design(long a, long n_rep) {
    Matrix X = Matrix::Zero(a * n_rep, a + 1);
    X.col(0).setOnes();
    for (long i = 0; i < a; ++i) X.block(i * n_rep, i + 1, n_rep, 1).setOnes();
    return X;
}

/// [J_a x J_b x J_N, I_a x J_b x J_N, J_a x I_b x J_N].
inline Matrix twoway_design(long a, long b, long n_rep) {
    const long rows = a * b * n_rep;
    Matrix X = Matrix::Zero(rows, 1 + a + b);
    for (long i = 0; i < a; ++i)
        for (long j = 0; j < b; ++j)
            for (long k = 0; k < n_rep; ++k) {
                const long r = (i * b + j) * n_rep + k;
                X(r, 0) = 1.0;
                X(r, 1 + i) = 1.0;
                X(r, 1 + a + j) = 1.0;
            }
    return X;
}

/// I - (1/(a+1)) [[1, -J_a'], [-J_a, J_a J_a']].
inline Matrix oneway_row_space_ppo(long a) {
    Vector r(a + 1);
    r(0) = 1.0;
    r.tail(a).setConstant(-1.0);
    return Matrix::Identity(a + 1, a + 1) - r * r.transpose() / static_cast<double>(a + 1);
}

inline Vector oneway_min_norm(const OneWayLayout& l) {
    const double shift = static_cast<double>(l.a) / static_cast<double>(l.a + 1) * l.grand_mean;
    Vector beta(l.a + 1);
    beta(0) = shift;
    beta.tail(l.a) = l.group_means.array() - shift;
    return beta;
}

/// Ridge in the (X'X + lambda n I) convention, n = a N.
///
/// The closed form is derived with penalty lambda_cell * N, so lambda_cell = a * lambda;
/// then beta_0 = a ybar / (a + 1 + lambda_cell) and
/// beta_i = (ybar_i - beta_0) / (1 + lambda_cell).
inline Vector oneway_ridge(const OneWayLayout& l, double lambda) {
    if (lambda < 0) throw ParameterError("ridge parameter must be >= 0");
    const double a = static_cast<double>(l.a);
    const double cell = a * lambda;
    const double mu = a / (a + 1.0 + cell) * l.grand_mean;
    Vector beta(l.a + 1);
    beta(0) = mu;
    beta.tail(l.a) = (l.group_means.array() - mu) / (1.0 + cell);
    return beta;
}

/// The four textbook least-squares solutions: alpha-free, sum-to-zero, alpha_1 = 0, alpha_a = 0.
inline std::array<Vector, 4> oneway_side_condition_estimates(const OneWayLayout& l) {
    const long a = l.a;
    const auto& m = l.group_means;
    Vector b1(a + 1), b2(a + 1), b3(a + 1), b4(a + 1);
    b1(0) = 0.0;
    b1.tail(a) = m;
    b2(0) = l.grand_mean;
    b2.tail(a) = m.array() - l.grand_mean;
    b3(0) = m(0);
    b3.tail(a) = m.array() - m(0);
    b4(0) = m(a - 1);
    b4.tail(a) = m.array() - m(a - 1);
    return {b1, b2, b3, b4};
}

/// mu = ab/(a+b+ab) ybar, alpha = Ybar_a - (a+ab)/(a+b+ab) ybar, eta = Ybar_b - (b+ab)/(a+b+ab) ybar.
inline Vector twoway_min_norm(const TwoWayLayout& l) {
    const double a = static_cast<double>(l.a);
    const double b = static_cast<double>(l.b);
    const double d = a + b + a * b;
    Vector beta(1 + l.a + l.b);
    beta(0) = a * b / d * l.grand_mean;
    beta.segment(1, l.a) = l.row_means.array() - (a + a * b) / d * l.grand_mean;
    beta.tail(l.b) = l.col_means.array() - (b + a * b) / d * l.grand_mean;
    return beta;
}

/// The basis R of C(X')^perp: columns (1, -J_a, 0) and (1, 0, -J_b).
inline Matrix twoway_null_basis(long a, long b) {
    Matrix R = Matrix::Zero(1 + a + b, 2);
    R(0, 0) = 1.0;
    R(0, 1) = 1.0;
    R.block(1, 0, a, 1).setConstant(-1.0);
    R.block(1 + a, 1, b, 1).setConstant(-1.0);
    return R;
}

/// N beta_hat with N = I - R(R'R)^{-1}R', starting from the sum-to-zero OLS solution.
inline Vector twoway_min_norm_via_projection(const TwoWayLayout& l) {
    Vector start(1 + l.a + l.b);
    start(0) = l.grand_mean;
    start.segment(1, l.a) = l.row_means.array() - l.grand_mean;
    start.tail(l.b) = l.col_means.array() - l.grand_mean;
    const Matrix R = twoway_null_basis(l.a, l.b);
    const Matrix RtR = R.transpose() * R;
    return start - R * RtR.ldlt().solve(R.transpose() * start);
}

}  // namespace overparam::anova
