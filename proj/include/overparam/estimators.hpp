#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "overparam/errors.hpp"
#include "overparam/spectral_core.hpp"

namespace overparam {

enum class Method { min_norm, ridge, spectral, pcr, gd, lasso, penalty_custom };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::min_norm: return "min-norm";
        case Method::ridge: return "ridge";
        case Method::spectral: return "spectral";
        case Method::pcr: return "pcr";
        case Method::gd: return "gd";
        case Method::lasso: return "lasso";
        case Method::penalty_custom: return "penalty-custom";
    }
    return "unknown";
}

struct Tuning {
    std::optional<double> lambda;
    std::optional<long> rank;
    std::optional<double> eta;
    std::optional<long> iterations;
};

inline constexpr double kRowSpaceTol = 1e-6;

struct CoefficientEstimate {
    Vector beta;
    Method method = Method::min_norm;
    Tuning tuning;
    bool in_row_space = false;
    std::vector<std::string> warnings;
};

/// Norm of the component of beta outside C(X'), i.e. ||(I - N) beta||.
inline double row_space_residual(const SpectralDecomposition& sd, const Vector& beta) {
    auto Vt = sd.retained();
    return (beta - Vt * (Vt.transpose() * beta)).norm();
}

inline bool in_row_space(const SpectralDecomposition& sd, const Vector& beta) {
    return row_space_residual(sd, beta) <= kRowSpaceTol * std::max(1.0, beta.norm());
}

namespace detail {

inline CoefficientEstimate make_estimate(const SpectralDecomposition& sd, Vector beta, Method m,
                                         Tuning tuning = {}) {
    CoefficientEstimate est;
    est.in_row_space = overparam::in_row_space(sd, beta);
    est.beta = std::move(beta);
    est.method = m;
    est.tuning = tuning;
    return est;
}

// (1/n) V_t' X'Y: the response projected on the retained eigenvectors.
inline Vector scaled_moment(const SpectralDecomposition& sd, const Matrix& X, const Vector& y) {
    return sd.retained().transpose() * (X.transpose() * y) / static_cast<double>(sd.n);
}

}  // namespace detail

/// Spectral shrinker Psi applied to the eigenvalues of (1/n)X'X.
class ShrinkerFunction {
public:
    using Scalar = std::function<double(double)>;

    ShrinkerFunction(std::string name, Scalar fn) : name_(std::move(name)), fn_(std::move(fn)) {}

    static ShrinkerFunction ridge(double lambda) {
        if (!(lambda > 0)) throw ParameterError("ridge shrinker needs lambda > 0");
        return {"ridge", [lambda](double u) { return 1.0 / (u + lambda); }};
    }
    /// xi(u) = 1/u for u > 0, 0 at 0. Reproduces the minimum-norm estimate.
    static ShrinkerFunction moore_penrose() {
        return {"moore-penrose", [](double u) { return u > 0 ? 1.0 / u : 0.0; }};
    }
    static ShrinkerFunction gradient_descent(double eta, long iterations);
    /// 1/u above the cutoff, 0 below: principal components chosen by eigenvalue size.
    static ShrinkerFunction hard_threshold(double cutoff) {
        return {"hard-threshold", [cutoff](double u) { return u > cutoff ? 1.0 / u : 0.0; }};
    }
    /// One weight per retained eigenvalue, in descending-eigenvalue order.
    static ShrinkerFunction tabulated(Vector weights) {
        ShrinkerFunction f("tabulated", nullptr);
        f.table_ = std::move(weights);
        return f;
    }

    const std::string& name() const noexcept { return name_; }

    /// Psi(s_j) for each of the leading entries of s.
    Vector weights(const Vector& s) const {
        if (table_) {
            if (table_->size() < s.size())
                throw ShrinkerError("tabulated shrinker has " + std::to_string(table_->size()) +
                                    " weights, need " + std::to_string(s.size()));
            return table_->head(s.size());
        }
        Vector w(s.size());
        for (long j = 0; j < s.size(); ++j) w(j) = fn_(s(j));
        return w;
    }

private:
    std::string name_;
    Scalar fn_;
    std::optional<Vector> table_;
};

/// Closed form of eta * sum_{r<k} (1 - eta u)^r = (1 - (1 - eta u)^k) / u.
inline double gd_shrinker_value(double u, double eta, long iterations) {
    const double k = static_cast<double>(iterations);
    const double x = eta * u;
    if (std::abs(x) <= 1e-14) return eta * k;
    if (x < 1.0) return -std::expm1(k * std::log1p(-x)) / u;
    return (1.0 - std::pow(1.0 - x, k)) / u;
}

inline ShrinkerFunction ShrinkerFunction::gradient_descent(double eta, long iterations) {
    return {"gd", [eta, iterations](double u) { return gd_shrinker_value(u, eta, iterations); }};
}

/// beta_m = V_t D_t(1/(n s_j)) V_t' X'Y.
inline CoefficientEstimate min_norm_ols(const SpectralDecomposition& sd, const Matrix& X,
                                        const Vector& y) {
    if (sd.rank == 0) throw DegenerateDesignError("design has rank 0; no least squares direction");
    Vector gamma = detail::scaled_moment(sd, X, y).cwiseQuotient(sd.retained_values());
    return detail::make_estimate(sd, sd.retained() * gamma, Method::min_norm);
}

inline CoefficientEstimate min_norm_ols(const DesignMatrix& dm, double rank_tol = kDefaultRankTol) {
    return min_norm_ols(spectral_decompose(dm, rank_tol), dm.X(), dm.Y());
}

/// beta_Psi = V D[Psi(s_j)] V' (1/n)X'Y. Only retained directions contribute since X'Y lies in C(X').
inline CoefficientEstimate spectral_shrink(const SpectralDecomposition& sd, const Matrix& X,
                                           const Vector& y, const ShrinkerFunction& psi) {
    const Vector s = sd.retained_values();
    const Vector w = psi.weights(s);
    std::vector<std::string> warnings;
    long over = 0;
    for (long j = 0; j < w.size(); ++j) {
        if (!std::isfinite(w(j)))
            throw ShrinkerError("shrinker '" + psi.name() + "' is not finite at s=" +
                                std::to_string(s(j)));
        if (w(j) < 0)
            throw ShrinkerError("shrinker '" + psi.name() + "' is negative at s=" +
                                std::to_string(s(j)));
        if (w(j) * s(j) > 1.0 + 1e-12) ++over;
    }
    if (over > 0)
        warnings.push_back(std::to_string(over) +
                           " eigen-directions have Psi(u) > 1/u and are expanded, not shrunk");
    Vector gamma = detail::scaled_moment(sd, X, y).cwiseProduct(w);
    auto est = detail::make_estimate(sd, sd.retained() * gamma, Method::spectral);
    est.warnings = std::move(warnings);
    return est;
}

inline CoefficientEstimate spectral_shrink(const DesignMatrix& dm, const ShrinkerFunction& psi,
                                           double rank_tol = kDefaultRankTol) {
    return spectral_shrink(spectral_decompose(dm, rank_tol), dm.X(), dm.Y(), psi);
}

/// (X'X + lambda n I)^{-1} X'Y, solved as a linear system rather than through the eigenbasis.
/// When p > n the equivalent dual form X'(XX' + lambda n I)^{-1} Y is used.
inline Vector ridge_solve(const Matrix& X, const Vector& y, double lambda) {
    if (!(lambda > 0))
        throw ParameterError("ridge needs lambda > 0; use the minimum-norm estimator for lambda = 0");
    const double shift = lambda * static_cast<double>(X.rows());
    if (X.cols() > X.rows()) {
        Matrix K = X * X.transpose();
        K.diagonal().array() += shift;
        return X.transpose() * K.llt().solve(y);
    }
    Matrix G = X.transpose() * X;
    G.diagonal().array() += shift;
    return G.llt().solve(X.transpose() * y);
}

inline CoefficientEstimate ridge(const SpectralDecomposition& sd, const Matrix& X, const Vector& y,
                                 double lambda) {
    Tuning tuning;
    tuning.lambda = lambda;
    return detail::make_estimate(sd, ridge_solve(X, y, lambda), Method::ridge, tuning);
}

inline CoefficientEstimate ridge(const DesignMatrix& dm, double lambda,
                                 double rank_tol = kDefaultRankTol) {
    if (!(lambda > 0))
        throw ParameterError("ridge needs lambda > 0; use the minimum-norm estimator for lambda = 0");
    return ridge(spectral_decompose(dm, rank_tol), dm.X(), dm.Y(), lambda);
}

/// beta_Pr = V_r V_r' beta_m, the minimum-norm estimate projected on the top r eigenvectors.
inline CoefficientEstimate pcr(const SpectralDecomposition& sd, const Matrix& X, const Vector& y,
                               long r) {
    if (r < 1) throw ParameterError("pcr needs at least one retained component");
    if (r > sd.rank)
        throw RankError("pcr rank " + std::to_string(r) + " exceeds design rank t=" +
                            std::to_string(sd.rank),
                        sd.rank);
    const Vector beta_m = min_norm_ols(sd, X, y).beta;
    auto Vr = sd.leading(r);
    Tuning tuning;
    tuning.rank = r;
    return detail::make_estimate(sd, Vr * (Vr.transpose() * beta_m), Method::pcr, tuning);
}

inline CoefficientEstimate pcr(const DesignMatrix& dm, long r, double rank_tol = kDefaultRankTol) {
    return pcr(spectral_decompose(dm, rank_tol), dm.X(), dm.Y(), r);
}

struct GradientDescentOptions {
    double eta = 0.0;
    std::optional<Vector> beta0;
    long max_iter = 1'000'000;
    double tol = 1e-10;
    bool record_trajectory = true;
};

struct GradientDescentResult {
    /// beta_0, beta_1, ... when recorded; always ends with the returned iterate.
    std::vector<Vector> trajectory;
    CoefficientEstimate estimate;
    long iterations = 0;
    bool converged = false;
};

/// beta_{k+1} = beta_k + (eta/n) X'(Y - X beta_k).
///
/// Stops at the first k with ||beta_{k+1} - beta_k|| <= tol * max(1, ||beta_k||) and returns
/// beta_{k+1}; `iterations` is that k.
inline GradientDescentResult gradient_descent(const SpectralDecomposition& sd, const Matrix& X,
                                              const Vector& y, const GradientDescentOptions& opt) {
    if (!(opt.eta > 0)) throw ParameterError("gradient descent needs step size eta > 0");
    if (opt.max_iter < 0) throw ParameterError("max_iter must be nonnegative");
    const long p = X.cols();
    const double step = opt.eta / static_cast<double>(X.rows());

    GradientDescentResult res;
    Vector beta = opt.beta0 ? *opt.beta0 : Vector::Zero(p);
    if (beta.size() != p) throw InputError("beta0 has wrong length");
    if (opt.eta * sd.top() >= 2.0)
        res.estimate.warnings.push_back("eta * s_1 >= 2; gradient descent is not expected to converge");

    const Vector Xty = X.transpose() * y;
    if (opt.record_trajectory) res.trajectory.push_back(beta);
    long k = 0;
    for (; k < opt.max_iter; ++k) {
        Vector next = beta + step * (Xty - X.transpose() * (X * beta));
        if (!next.allFinite())
            throw DivergenceError("gradient descent produced a non-finite iterate at iteration " +
                                      std::to_string(k + 1),
                                  k + 1);
        // stableNorm: a plain norm overflows near 1e154 and would read as converged.
        const double change = (next - beta).stableNorm();
        const double scale = std::max(1.0, beta.stableNorm());
        beta = std::move(next);
        if (opt.record_trajectory) res.trajectory.push_back(beta);
        if (change <= opt.tol * scale) {
            res.converged = true;
            break;
        }
    }
    res.iterations = k;
    auto warnings = std::move(res.estimate.warnings);
    Tuning tuning;
    tuning.eta = opt.eta;
    tuning.iterations = res.converged ? k + 1 : k;
    res.estimate = detail::make_estimate(sd, beta, Method::gd, tuning);
    res.estimate.warnings = std::move(warnings);
    if (!res.converged)
        res.estimate.warnings.push_back("gradient descent stopped at max_iter without converging");
    return res;
}

/// Soft threshold of gamma_m at lambda / (2 s); the closed interval |gamma_m| <= lambda/(2s) maps to 0.
inline double soft_threshold_coordinate(double gamma_m, double s, double lambda) {
    if (s <= 0) return 0.0;
    const double cut = lambda / (2.0 * s);
    if (std::abs(gamma_m) <= cut) return 0.0;
    return gamma_m > 0 ? gamma_m - cut : gamma_m + cut;
}

/// LASSO on the rotated coefficients gamma = V'beta:
/// minimizes sum_j s_j (gamma_mj - gamma_j)^2 + lambda |gamma_j|.
inline CoefficientEstimate transformed_lasso(const SpectralDecomposition& sd, const Matrix& X,
                                             const Vector& y, double lambda) {
    if (lambda < 0) throw ParameterError("lasso needs lambda >= 0");
    const CoefficientEstimate m = min_norm_ols(sd, X, y);
    Tuning tuning;
    tuning.lambda = lambda;
    if (lambda == 0) {
        auto est = m;
        est.method = Method::lasso;
        est.tuning = tuning;
        return est;
    }
    auto Vt = sd.retained();
    Vector gamma = Vt.transpose() * m.beta;
    for (long j = 0; j < gamma.size(); ++j)
        gamma(j) = soft_threshold_coordinate(gamma(j), sd.eigenvalues(j), lambda);
    return detail::make_estimate(sd, Vt * gamma, Method::lasso, tuning);
}

inline CoefficientEstimate transformed_lasso(const DesignMatrix& dm, double lambda,
                                             double rank_tol = kDefaultRankTol) {
    return transformed_lasso(spectral_decompose(dm, rank_tol), dm.X(), dm.Y(), lambda);
}

/// A separable penalty psi with psi(0) = 0, psi >= 0, its derivative where it exists, and the
/// points where it does not.
struct ScalarPenalty {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
    std::vector<double> kinks;

    static ScalarPenalty absolute() {
        return {[](double u) { return std::abs(u); },
                [](double u) { return u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0); },
                {0.0}};
    }
    static ScalarPenalty squared() {
        return {[](double u) { return u * u; }, [](double u) { return 2.0 * u; }, {}};
    }
};

struct PenaltySolveResult {
    CoefficientEstimate estimate;
    /// Retained coordinates where no stationary point was bracketed.
    std::vector<long> unbracketed;
};

namespace detail {

struct CoordinateSolution {
    double gamma;
    bool bracketed;
};

// Minimizes s (gm - g)^2 + lambda psi(g). Candidates are the kinks of psi plus every
// stationary point of the objective on [-|gm| - lambda, |gm| + lambda].
inline CoordinateSolution solve_coordinate(double gm, double s, double lambda,
                                           const ScalarPenalty& psi) {
    auto objective = [&](double g) { return s * (gm - g) * (gm - g) + lambda * psi.value(g); };
    auto slope = [&](double g) { return 2.0 * s * (g - gm) + lambda * psi.derivative(g); };

    const double half = std::abs(gm) + lambda;
    const double lo = -half;
    const double hi = half;

    std::vector<double> candidates;
    for (double k : psi.kinks)
        if (k >= lo && k <= hi) candidates.push_back(k);

    std::vector<double> grid;
    constexpr int kPieces = 64;
    for (int i = 0; i <= kPieces; ++i) grid.push_back(lo + (hi - lo) * i / kPieces);
    for (double k : candidates) grid.push_back(k);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    auto is_kink = [&](double g) {
        return std::find(candidates.begin(), candidates.end(), g) != candidates.end();
    };

    bool found = false;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        double a = grid[i];
        double b = grid[i + 1];
        // The derivative is undefined at a kink; probe just inside the open interval instead.
        const double nudge = 1e-12 * std::max(1.0, half);
        double fa = slope(is_kink(a) ? a + nudge : a);
        double fb = slope(is_kink(b) ? b - nudge : b);
        if (fa == 0 && !is_kink(a)) {
            candidates.push_back(a);
            found = true;
            continue;
        }
        if (std::signbit(fa) == std::signbit(fb)) continue;
        for (int it = 0; it < 200 && b - a > 1e-16 * std::max(1.0, half); ++it) {
            const double mid = 0.5 * (a + b);
            const double fm = slope(mid);
            if (fm == 0) {
                a = b = mid;
                break;
            }
            if (std::signbit(fm) == std::signbit(fa)) {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        candidates.push_back(0.5 * (a + b));
        found = true;
    }
    if (!found && !is_kink(grid.back()) && slope(grid.back()) == 0) {
        candidates.push_back(grid.back());
        found = true;
    }
    if (!found) candidates.insert(candidates.end(), grid.begin(), grid.end());

    double best = candidates.front();
    double best_val = objective(best);
    for (double c : candidates) {
        const double v = objective(c);
        if (v < best_val) {
            best = c;
            best_val = v;
        }
    }
    return {best, found};
}

}  // namespace detail

/// Minimizes sum_j [s_j (gamma_mj - gamma_j)^2 + lambda psi(gamma_j)] coordinate by coordinate
/// and returns beta = V gamma. Coordinates beyond the design rank are zero.
inline PenaltySolveResult coordinate_penalty_solve(const SpectralDecomposition& sd, const Matrix& X,
                                                   const Vector& y, const ScalarPenalty& psi,
                                                   double lambda) {
    if (lambda < 0) throw ParameterError("penalty weight must be >= 0");
    const CoefficientEstimate m = min_norm_ols(sd, X, y);
    Tuning tuning;
    tuning.lambda = lambda;
    PenaltySolveResult res;
    if (lambda == 0) {
        res.estimate = m;
        res.estimate.method = Method::penalty_custom;
        res.estimate.tuning = tuning;
        return res;
    }
    auto Vt = sd.retained();
    Vector gamma = Vt.transpose() * m.beta;
    for (long j = 0; j < gamma.size(); ++j) {
        auto sol = detail::solve_coordinate(gamma(j), sd.eigenvalues(j), lambda, psi);
        gamma(j) = sol.gamma;
        if (!sol.bracketed) res.unbracketed.push_back(j);
    }
    res.estimate = detail::make_estimate(sd, Vt * gamma, Method::penalty_custom, tuning);
    if (!res.unbracketed.empty())
        res.estimate.warnings.push_back(std::to_string(res.unbracketed.size()) +
                                        " coordinates had no bracketed stationary point");
    return res;
}

/// Columns rescaled to unit root-mean-square. Coefficients fitted on the scaled design map back
/// through `unscale`.
struct ColumnScaling {
    Vector scale;

    static ColumnScaling fit(const Matrix& X) {
        ColumnScaling cs;
        cs.scale = (X.colwise().squaredNorm() / static_cast<double>(X.rows())).cwiseSqrt().transpose();
        for (long j = 0; j < cs.scale.size(); ++j)
            if (cs.scale(j) == 0) cs.scale(j) = 1.0;
        return cs;
    }
    Matrix apply(const Matrix& X) const { return X * scale.cwiseInverse().asDiagonal(); }
    Vector unscale(const Vector& beta_scaled) const { return beta_scaled.cwiseQuotient(scale); }
};

}  // namespace overparam
