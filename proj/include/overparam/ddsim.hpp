#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "overparam/errors.hpp"
#include "overparam/estimators.hpp"
#include "overparam/spectral_core.hpp"

// Double-descent simulation: polynomial models of increasing degree fitted by
// minimum-norm least squares to a symmetric quartic truth.
namespace overparam::ddsim {

enum class Generator { copula_uniform, reduced_rank };

inline const char* generator_name(Generator g) {
    return g == Generator::copula_uniform ? "copula-uniform" : "reduced-rank";
}

struct SimulationConfig {
    long p_minus_1 = 10;
    long max_degree = 5;
    std::optional<long> n_train;  // defaults to 1 + 3 (p - 1)
    long n_test = 101;
    long reps = 1000;
    double sigma = 1.0;
    double rho = 0.3;
    std::uint64_t master_seed = 42;
    Generator generator = Generator::copula_uniform;
    long latent_dim = 2;  // rank of R for the reduced-rank generator
    bool center_features = false;
    bool redraw_test = false;
    unsigned threads = 0;  // 0: hardware concurrency

    long train_rows() const { return n_train.value_or(1 + 3 * p_minus_1); }

    void validate() const {
        if (p_minus_1 < 1) throw ParameterError("p_minus_1 must be >= 1");
        if (max_degree < 1) throw ParameterError("max_degree must be >= 1");
        if (train_rows() < 2) throw ParameterError("n_train must be >= 2");
        if (n_test < 1) throw ParameterError("n_test must be >= 1");
        if (reps < 1) throw ParameterError("reps must be >= 1");
        if (!(sigma >= 0) || !std::isfinite(sigma)) throw ParameterError("sigma must be finite and >= 0");
        if (!(std::abs(rho) < 1)) throw ParameterError("|rho| must be < 1");
        if (p_minus_1 > 1 && rho <= -1.0 / static_cast<double>(p_minus_1 - 1))
            throw ParameterError("rho is below the exchangeable-correlation bound -1/(p-2)");
        if (generator == Generator::reduced_rank && (latent_dim < 1 || latent_dim > p_minus_1))
            throw ParameterError("latent_dim must be in [1, p_minus_1]");
    }
};

inline void to_json(nlohmann::json& j, const SimulationConfig& c) {
    j = nlohmann::json{{"p_minus_1", c.p_minus_1},
                       {"max_degree", c.max_degree},
                       {"n_train", c.train_rows()},
                       {"n_test", c.n_test},
                       {"reps", c.reps},
                       {"sigma", c.sigma},
                       {"rho", c.rho},
                       {"master_seed", c.master_seed},
                       {"generator", generator_name(c.generator)},
                       {"latent_dim", c.latent_dim},
                       {"center_features", c.center_features},
                       {"redraw_test", c.redraw_test}};
}

/// Reads a config document. Unknown keys are rejected; missing keys keep their defaults.
inline SimulationConfig config_from_json(const nlohmann::json& j, SimulationConfig c = {}) {
    if (!j.is_object()) throw InputError("simulation config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "p_minus_1") c.p_minus_1 = value.get<long>();
            else if (key == "max_degree") c.max_degree = value.get<long>();
            else if (key == "n_train") c.n_train = value.get<long>();
            else if (key == "n_test") c.n_test = value.get<long>();
            else if (key == "reps") c.reps = value.get<long>();
            else if (key == "sigma") c.sigma = value.get<double>();
            else if (key == "rho") c.rho = value.get<double>();
            else if (key == "master_seed") c.master_seed = value.get<std::uint64_t>();
            else if (key == "latent_dim") c.latent_dim = value.get<long>();
            else if (key == "center_features") c.center_features = value.get<bool>();
            else if (key == "redraw_test") c.redraw_test = value.get<bool>();
            else if (key == "threads") c.threads = value.get<unsigned>();
            else if (key == "generator") {
                const auto g = value.get<std::string>();
                if (g == "copula-uniform") c.generator = Generator::copula_uniform;
                else if (g == "reduced-rank") c.generator = Generator::reduced_rank;
                else throw InputError("unknown generator '" + g + "'");
            } else {
                throw InputError("unknown config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline SimulationConfig config_from_json_text(const std::string& text, SimulationConfig c = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("config is not valid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return config_from_json(j, c);
}

// Seeds ---------------------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Stable seed for stream `id` under `master`; independent of scheduling order.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t id) {
    return splitmix64(master ^ splitmix64(id ^ 0xD1B54A32D192ED03ull));
}

inline constexpr std::uint64_t kTrainStream = 0xFFFF'FFFF'0000'0001ull;
inline constexpr std::uint64_t kTestStream = 0xFFFF'FFFF'0000'0002ull;
inline constexpr std::uint64_t kLoadingStream = 0xFFFF'FFFF'0000'0003ull;
inline constexpr std::uint64_t kRedrawBase = 0x8000'0000'0000'0000ull;

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t master, std::uint64_t id) { return Rng(stream_seed(master, id)); }

inline Vector standard_normals(Rng& rng, long count) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Vector v(count);
    for (long i = 0; i < count; ++i) v(i) = dist(rng);
    return v;
}

// Predictors ----------------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Spearman correlation implied by a Gaussian copula with latent correlation rho.
inline double copula_rank_correlation(double rho) {
    return 6.0 / std::numbers::pi * std::asin(rho / 2.0);
}

/// Loadings R, (p-1) x latent_dim, for z = R w. Drawn once per master seed.
inline Matrix reduced_rank_loadings(const SimulationConfig& cfg) {
    Rng rng = make_stream(cfg.master_seed, kLoadingStream);
    Matrix R(cfg.p_minus_1, cfg.latent_dim);
    for (long j = 0; j < R.cols(); ++j) R.col(j) = standard_normals(rng, R.rows());
    return R / std::sqrt(static_cast<double>(cfg.latent_dim));
}

/// Draws `rows` predictor vectors.
///
/// Copula route: exchangeable-correlation normals pushed through the normal CDF and mapped to
/// (-2, 2), so every marginal is U(-2, 2). Reduced-rank route: z = R w with w standard normal.
inline Matrix sample_predictors(const SimulationConfig& cfg, Rng& rng, long rows) {
    const long k = cfg.p_minus_1;
    Matrix Z(rows, k);
    if (cfg.generator == Generator::reduced_rank) {
        const Matrix R = reduced_rank_loadings(cfg);
        for (long i = 0; i < rows; ++i) Z.row(i) = (R * standard_normals(rng, cfg.latent_dim)).transpose();
        return Z;
    }
    Matrix corr = Matrix::Constant(k, k, cfg.rho);
    corr.diagonal().setOnes();
    Eigen::LLT<Matrix> llt(corr);
    if (llt.info() != Eigen::Success) throw ParameterError("copula correlation is not positive definite");
    const Matrix L = llt.matrixL();
    for (long i = 0; i < rows; ++i) {
        const Vector x = L * standard_normals(rng, k);
        for (long j = 0; j < k; ++j) Z(i, j) = 4.0 * normal_cdf(x(j)) - 2.0;
    }
    return Z;
}

// Truth and features --------------------------------------------------------------------------

/// sum_j z_j^4 - 2 z_j^2.
inline double truth_mean(const Vector& z) {
    return (z.array().pow(4) - 2.0 * z.array().square()).sum();
}

inline Vector truth_mean_rows(const Matrix& Z) {
    Vector out(Z.rows());
    for (long i = 0; i < Z.rows(); ++i) out(i) = truth_mean(Z.row(i).transpose());
    return out;
}

/// Intercept, then z_j for all j, then z_j^2 for all j, ..., up to z_j^degree: 1 + degree (p-1)
/// columns with no interactions.
inline Matrix poly_features(const Matrix& Z, long degree) {
    if (degree < 0) throw ParameterError("degree must be >= 0");
    const long k = Z.cols();
    Matrix X(Z.rows(), 1 + degree * k);
    X.col(0).setOnes();
    Matrix power = Matrix::Ones(Z.rows(), k);
    for (long d = 1; d <= degree; ++d) {
        power = power.cwiseProduct(Z);
        X.middleCols(1 + (d - 1) * k, k) = power;
    }
    return X;
}

/// Coefficients of the quartic truth in the raw degree-major feature basis of the given degree
/// (degree >= 4): -2 on the squares, 1 on the fourth powers, 0 elsewhere.
inline Vector truth_coefficients(long p_minus_1, long degree) {
    if (degree < 4) throw ParameterError("the quartic truth needs degree >= 4");
    Vector beta = Vector::Zero(1 + degree * p_minus_1);
    beta.segment(1 + p_minus_1, p_minus_1).setConstant(-2.0);
    beta.segment(1 + 3 * p_minus_1, p_minus_1).setConstant(1.0);
    return beta;
}

// Scoring -------------------------------------------------------------------------------------

struct PmseBias {
    double pmse = 0.0;
    double bias2 = 0.0;
    /// Monte-Carlo standard error of pmse across reps.
    double pmse_se = 0.0;
    /// Expected bias2 of an unbiased predictor: mean over test points of Var/reps.
    double bias2_floor = 0.0;
};

/// PMSE = mean over reps and test points of (truth - prediction)^2;
/// Bias^2 = mean over test points of (truth - mean-over-reps prediction)^2.
inline PmseBias pmse_bias(const Vector& truth, const Matrix& predictions) {
    if (predictions.cols() != truth.size()) throw InputError("predictions do not match test points");
    const long reps = predictions.rows();
    if (reps < 1) throw InputError("need at least one replicate");
    PmseBias out;
    Vector per_rep(reps);
    for (long r = 0; r < reps; ++r)
        per_rep(r) = (predictions.row(r).transpose() - truth).squaredNorm() / static_cast<double>(truth.size());
    out.pmse = per_rep.mean();
    if (reps > 1)
        out.pmse_se = std::sqrt((per_rep.array() - out.pmse).square().sum() /
                                static_cast<double>(reps - 1) / static_cast<double>(reps));
    const Vector mean_pred = predictions.colwise().mean().transpose();
    out.bias2 = (truth - mean_pred).squaredNorm() / static_cast<double>(truth.size());
    if (reps > 1) {
        const Matrix dev = predictions.rowwise() - mean_pred.transpose();
        const Vector var = dev.colwise().squaredNorm().transpose() / static_cast<double>(reps - 1);
        out.bias2_floor = var.mean() / static_cast<double>(reps);
    }
    return out;
}

// Experiment ----------------------------------------------------------------------------------

struct SimulationData {
    Matrix Z_train;
    Matrix Z_test;
    Vector truth_train;
    Vector truth_test;
};

/// The fixed training and test predictor draws for a config.
inline SimulationData draw_simulation_data(const SimulationConfig& cfg) {
    cfg.validate();
    Rng train = make_stream(cfg.master_seed, kTrainStream);
    Rng test = make_stream(cfg.master_seed, kTestStream);
    SimulationData d;
    d.Z_train = sample_predictors(cfg, train, cfg.train_rows());
    d.Z_test = sample_predictors(cfg, test, cfg.n_test);
    d.truth_train = truth_mean_rows(d.Z_train);
    d.truth_test = truth_mean_rows(d.Z_test);
    return d;
}

/// Standard-normal noise for replicate r (shared by every model in the ladder).
inline Vector rep_noise(const SimulationConfig& cfg, long rep, long rows) {
    Rng rng = make_stream(cfg.master_seed, static_cast<std::uint64_t>(rep));
    return standard_normals(rng, rows);
}

/// Feature matrix for a model; centering uses the training means of the non-intercept columns.
struct FeatureMap {
    long degree = 0;
    bool center = false;
    Vector means;

    FeatureMap(const Matrix& Z_train, long degree_, bool center_) : degree(degree_), center(center_) {
        if (center) {
            const Matrix X = poly_features(Z_train, degree);
            means = X.colwise().mean().transpose();
            means(0) = 0.0;
        }
    }
    Matrix operator()(const Matrix& Z) const {
        Matrix X = poly_features(Z, degree);
        if (center) X.rowwise() -= means.transpose();
        return X;
    }
};

struct ModelRow {
    long degree = 0;
    long s_plus_1 = 0;
    double pmse = 0.0;
    double bias2 = 0.0;
    double pmse_se = 0.0;
    double bias2_floor = 0.0;
    long rank = 0;
    /// Mean over reps of training SSE / ||Y||^2.
    double train_rel_sse = 0.0;
};

struct DoubleDescentReport {
    std::vector<ModelRow> rows;
    SimulationConfig config;
    long flagged_reps = 0;
    double wall_seconds = 0.0;

    const ModelRow& degree(long d) const {
        for (const auto& r : rows)
            if (r.degree == d) return r;
        throw InputError("no model of degree " + std::to_string(d) + " in report");
    }
};

using ProgressFn = std::function<void(const ModelRow&)>;

namespace detail {

// Runs fn(rep) for rep in [0, reps) across `threads` workers.
template <class Fn>
void parallel_reps(long reps, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<long>(threads, reps));
    if (threads <= 1) {
        for (long r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (long r = next++; r < reps; r = next++) {
                try {
                    fn(r);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Fits M_0..M_max by minimum-norm least squares over `reps` response draws and scores each
/// model's test predictions against the true mean function.
///
/// Training and test predictors are drawn once; replicates redraw only the noise (and the test
/// rows when redraw_test is set, in which case Bias^2 is reported as NaN). Results do not depend
/// on the number of threads.
inline DoubleDescentReport run_double_descent(const SimulationConfig& cfg,
                                              const ProgressFn& progress = {}) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const SimulationData data = draw_simulation_data(cfg);
    const long n = cfg.train_rows();
    const long nf = cfg.n_test;
    const long degrees = cfg.max_degree + 1;

    std::vector<FeatureMap> maps;
    std::vector<Matrix> X_train;
    std::vector<Matrix> X_test;
    std::vector<SpectralDecomposition> decomps;
    for (long d = 0; d < degrees; ++d) {
        maps.emplace_back(data.Z_train, d, cfg.center_features);
        X_train.push_back(maps.back()(data.Z_train));
        X_test.push_back(maps.back()(data.Z_test));
        decomps.push_back(spectral_decompose(X_train.back()));
    }

    // predictions[d] is reps x n_f; truths per rep only differ when test rows are redrawn.
    std::vector<Matrix> predictions(degrees, Matrix(cfg.reps, nf));
    Matrix test_truth(cfg.redraw_test ? cfg.reps : 1, nf);
    if (!cfg.redraw_test) test_truth.row(0) = data.truth_test.transpose();
    Matrix train_sse(cfg.reps, degrees);
    std::vector<char> flagged(cfg.reps, 0);

    detail::parallel_reps(cfg.reps, cfg.threads, [&](long r) {
        const Vector y = data.truth_train + cfg.sigma * rep_noise(cfg, r, n);
        const double ynorm = std::max(y.squaredNorm(), std::numeric_limits<double>::min());
        Matrix Zf;
        if (cfg.redraw_test) {
            Rng rng = make_stream(cfg.master_seed, kRedrawBase + static_cast<std::uint64_t>(r));
            Zf = sample_predictors(cfg, rng, nf);
            test_truth.row(r) = truth_mean_rows(Zf).transpose();
        }
        for (long d = 0; d < degrees; ++d) {
            const Vector beta = min_norm_ols(decomps[d], X_train[d], y).beta;
            const Vector pred = cfg.redraw_test ? Vector(maps[d](Zf) * beta) : Vector(X_test[d] * beta);
            if (!beta.allFinite() || !pred.allFinite()) flagged[r] = 1;
            predictions[d].row(r) = pred.transpose();
            train_sse(r, d) = (y - X_train[d] * beta).squaredNorm() / ynorm;
        }
    });

    DoubleDescentReport report;
    report.config = cfg;
    std::vector<long> keep;
    for (long r = 0; r < cfg.reps; ++r)
        if (!flagged[r]) keep.push_back(r);
    report.flagged_reps = cfg.reps - static_cast<long>(keep.size());
    if (report.flagged_reps * 100 > cfg.reps)
        throw NumericalError(std::to_string(report.flagged_reps) + " of " + std::to_string(cfg.reps) +
                             " replicates produced non-finite fits");

    for (long d = 0; d < degrees; ++d) {
        ModelRow row;
        row.degree = d;
        row.s_plus_1 = 1 + d * cfg.p_minus_1;
        row.rank = decomps[d].rank;
        Matrix kept(static_cast<long>(keep.size()), nf);
        double sse = 0.0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            kept.row(static_cast<long>(i)) = predictions[d].row(keep[i]);
            sse += train_sse(keep[i], d);
        }
        row.train_rel_sse = sse / static_cast<double>(keep.size());
        if (cfg.redraw_test) {
            double total = 0.0;
            for (std::size_t i = 0; i < keep.size(); ++i)
                total += (kept.row(static_cast<long>(i)) - test_truth.row(keep[i])).squaredNorm() /
                         static_cast<double>(nf);
            row.pmse = total / static_cast<double>(keep.size());
            row.bias2 = std::numeric_limits<double>::quiet_NaN();
            row.bias2_floor = std::numeric_limits<double>::quiet_NaN();
        } else {
            const PmseBias pb = pmse_bias(data.truth_test, kept);
            row.pmse = pb.pmse;
            row.bias2 = pb.bias2;
            row.pmse_se = pb.pmse_se;
            row.bias2_floor = pb.bias2_floor;
        }
        report.rows.push_back(row);
        if (progress) progress(row);
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace overparam::ddsim
