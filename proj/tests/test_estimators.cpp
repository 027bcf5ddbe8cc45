#include <gtest/gtest.h>

#include <cmath>

#include "overparam/estimators.hpp"
#include "test_support.hpp"

using namespace overparam;
using overparam::testing::max_abs;
using overparam::testing::random_low_rank;
using overparam::testing::random_matrix;
using overparam::testing::random_vector;
using overparam::testing::svd_pinv;

namespace {

Matrix row_vector(std::initializer_list<double> v) {
    Matrix X(1, static_cast<long>(v.size()));
    long j = 0;
    for (double x : v) X(0, j++) = x;
    return X;
}

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<long>(v.size()));
    long j = 0;
    for (double x : v) out(j++) = x;
    return out;
}

Matrix oneway_design(long a, long reps) {
    Matrix X = Matrix::Zero(a * reps, a + 1);
    X.col(0).setOnes();
    for (long i = 0; i < a; ++i) X.block(i * reps, i + 1, reps, 1).setOnes();
    return X;
}

}  // namespace

TEST(MinNormOls, IdentityDesign) {
    const auto est = min_norm_ols(DesignMatrix(Matrix::Identity(2, 2), vec({1, 2})));
    EXPECT_LE((est.beta - vec({1, 2})).norm(), 1e-14);
    EXPECT_TRUE(est.in_row_space);
    EXPECT_EQ(est.method, Method::min_norm);
}

TEST(MinNormOls, SplitsSolutionSetEvenly) {
    const auto est = min_norm_ols(DesignMatrix(row_vector({1, 1}), vec({2})));
    EXPECT_LE((est.beta - vec({1, 1})).norm(), 1e-14);
}

TEST(MinNormOls, OneWayAnovaMatchesPseudoinverse) {
    const Matrix X = oneway_design(3, 1);
    const Vector y = vec({1, 2, 3});
    const auto est = min_norm_ols(DesignMatrix(X, y));
    EXPECT_LE((est.beta - vec({1.5, -0.5, 0.5, 1.5})).norm(), 1e-12);
    EXPECT_LE((est.beta - svd_pinv(X) * y).norm(), 1e-12);
}

TEST(MinNormOls, ZeroDesignIsDegenerate) {
    EXPECT_THROW(min_norm_ols(DesignMatrix(Matrix::Zero(3, 4), Vector::Ones(3))), DegenerateDesignError);
}

TEST(MinNormOls, MatchesSvdPseudoinverseOnRandomInstances) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const long n = 2 + trial % 15;
        const long p = 2 + (trial * 5) % 19;
        const long r = 1 + trial % std::min(n, p);
        const Matrix X = random_low_rank(rng, n, p, r);
        const Vector y = random_vector(rng, n);
        const auto est = min_norm_ols(DesignMatrix(X, y));
        const Vector expected = svd_pinv(X) * y;
        EXPECT_LE((est.beta - expected).norm(), 1e-7 * std::max(1.0, expected.norm()));
        // Fitted values equal M Y.
        const Matrix M = overparam::testing::svd_projector(X);
        EXPECT_LE((X * est.beta - M * y).norm(), 1e-6 * std::max(1.0, (M * y).norm()));
    }
}

TEST(SpectralShrink, MoorePenroseReproducesMinNorm) {
    std::mt19937_64 rng(4);
    const DesignMatrix dm(random_low_rank(rng, 6, 10, 4), random_vector(rng, 6));
    const auto sd = spectral_decompose(dm);
    const auto a = spectral_shrink(sd, dm.X(), dm.Y(), ShrinkerFunction::moore_penrose());
    const auto b = min_norm_ols(sd, dm.X(), dm.Y());
    EXPECT_LE((a.beta - b.beta).norm(), 1e-8);
    EXPECT_TRUE(a.warnings.empty());
}

TEST(SpectralShrink, ZeroShrinkerGivesZero) {
    std::mt19937_64 rng(5);
    const DesignMatrix dm(random_matrix(rng, 4, 6), random_vector(rng, 4));
    const auto est = spectral_shrink(dm, ShrinkerFunction("zero", [](double) { return 0.0; }));
    EXPECT_EQ(est.beta.norm(), 0.0);
}

TEST(SpectralShrink, RidgeShrinkerMatchesRidgeSolve) {
    std::mt19937_64 rng(6);
    const DesignMatrix dm(random_matrix(rng, 7, 12), random_vector(rng, 7));
    for (double lambda : {1e-3, 0.1, 2.0}) {
        const auto a = spectral_shrink(dm, ShrinkerFunction::ridge(lambda));
        const auto b = ridge(dm, lambda);
        EXPECT_LE((a.beta - b.beta).norm(), 1e-8 * std::max(1.0, b.beta.norm()));
    }
}

TEST(SpectralShrink, NonFiniteOrNegativeShrinkerIsRejected) {
    const DesignMatrix dm(Matrix::Identity(2, 2), vec({1, 2}));
    EXPECT_THROW(spectral_shrink(dm, ShrinkerFunction("inf", [](double) { return INFINITY; })), ShrinkerError);
    EXPECT_THROW(spectral_shrink(dm, ShrinkerFunction("neg", [](double) { return -1.0; })), ShrinkerError);
}

TEST(SpectralShrink, ExpandingShrinkerWarnsButRuns) {
    const DesignMatrix dm(Matrix::Identity(2, 2), vec({1, 2}));
    const auto est = spectral_shrink(dm, ShrinkerFunction("big", [](double u) { return 2.0 / u; }));
    EXPECT_FALSE(est.warnings.empty());
    EXPECT_LE((est.beta - vec({2, 4})).norm(), 1e-12);
}

TEST(SpectralShrink, TabulatedWeights) {
    const DesignMatrix dm(Matrix::Identity(2, 2), vec({1, 2}));
    // s = (1/2, 1/2); weights 2 reproduce beta_m = (1, 2).
    const auto est = spectral_shrink(dm, ShrinkerFunction::tabulated(vec({2, 2})));
    EXPECT_LE((est.beta - vec({1, 2})).norm(), 1e-12);
    EXPECT_THROW(spectral_shrink(dm, ShrinkerFunction::tabulated(vec({2}))), ShrinkerError);
}

TEST(SpectralShrink, HardThresholdIsEigenvalueCutPcr) {
    std::mt19937_64 rng(8);
    const DesignMatrix dm(random_matrix(rng, 5, 9), random_vector(rng, 5));
    const auto sd = spectral_decompose(dm);
    const double cut = 0.5 * (sd.eigenvalues(1) + sd.eigenvalues(2));
    const auto a = spectral_shrink(sd, dm.X(), dm.Y(), ShrinkerFunction::hard_threshold(cut));
    const auto b = pcr(sd, dm.X(), dm.Y(), 2);
    EXPECT_LE((a.beta - b.beta).norm(), 1e-8 * std::max(1.0, b.beta.norm()));
}

TEST(Ridge, SingleRowClosedForm) {
    const DesignMatrix dm(row_vector({1, 1}), vec({2}));
    for (double lambda : {0.01, 0.5, 1.0, 7.0}) {
        const double expected = 2.0 / (2.0 + lambda);
        const auto est = ridge(dm, lambda);
        EXPECT_NEAR(est.beta(0), expected, 1e-14);
        EXPECT_NEAR(est.beta(1), expected, 1e-14);
        EXPECT_EQ(*est.tuning.lambda, lambda);
    }
}

TEST(Ridge, RejectsNonPositiveLambda) {
    const DesignMatrix dm(row_vector({1, 1}), vec({2}));
    EXPECT_THROW(ridge(dm, 0.0), ParameterError);
    EXPECT_THROW(ridge(dm, -1.0), ParameterError);
}

TEST(Ridge, ConvergesToMinNormAsLambdaShrinks) {
    std::mt19937_64 rng(12);
    const DesignMatrix dm(random_matrix(rng, 6, 10), random_vector(rng, 6));
    const Vector bm = min_norm_ols(dm).beta;
    double previous = INFINITY;
    for (double lambda : {1e-2, 1e-4, 1e-6}) {
        const double err = (ridge(dm, lambda).beta - bm).norm();
        EXPECT_LT(err, previous);
        previous = err;
    }
    EXPECT_LT(previous, 1e-4);
}

TEST(Ridge, OneWayAnovaClosedForm) {
    const Matrix X = oneway_design(3, 1);
    const DesignMatrix dm(X, vec({1, 2, 3}));
    for (double lambda : {0.1, 1.0 / 3.0, 2.0}) {
        const double a = 3.0;
        const double first = a * 2.0 / (a + 1.0 + a * lambda);
        EXPECT_NEAR(ridge(dm, lambda).beta(0), first, 1e-12);
    }
    EXPECT_NEAR(ridge(dm, 1.0 / 3.0).beta(0), 1.2, 1e-12);
}

TEST(Pcr, FullRankEqualsMinNorm) {
    std::mt19937_64 rng(13);
    const DesignMatrix dm(random_low_rank(rng, 6, 11, 4), random_vector(rng, 6));
    const auto sd = spectral_decompose(dm);
    EXPECT_LE((pcr(sd, dm.X(), dm.Y(), sd.rank).beta - min_norm_ols(sd, dm.X(), dm.Y()).beta).norm(), 1e-10);
}

TEST(Pcr, TopComponentOnDiagonalDesign) {
    Matrix X = Matrix::Zero(2, 2);
    X(0, 0) = 2.0;
    X(1, 1) = 1.0;
    const auto est = pcr(DesignMatrix(X, vec({4, 3})), 1);
    // beta_m = (2, 3); the top eigenvector is e_1.
    EXPECT_LE((est.beta - vec({2, 0})).norm(), 1e-12);
}

TEST(Pcr, MatchesReducedModelFit) {
    std::mt19937_64 rng(14);
    const DesignMatrix dm(random_matrix(rng, 5, 8), random_vector(rng, 5));
    const auto sd = spectral_decompose(dm);
    const long r = 2;
    const Matrix Vr = sd.leading(r);
    const Matrix W = dm.X() * Vr;
    const Vector gamma = W.colPivHouseholderQr().solve(dm.Y());
    EXPECT_LE((pcr(sd, dm.X(), dm.Y(), r).beta - Vr * gamma).norm(), 1e-10);
}

TEST(Pcr, RankErrors) {
    const DesignMatrix dm(row_vector({1, 1}), vec({2}));
    EXPECT_THROW(pcr(dm, 0), ParameterError);
    try {
        pcr(dm, 2);
        FAIL() << "expected RankError";
    } catch (const RankError& e) {
        EXPECT_EQ(e.rank(), 1);
        EXPECT_NE(std::string(e.what()).find("t=1"), std::string::npos);
    }
}

TEST(GdShrinkerValue, ClosedForm) {
    EXPECT_DOUBLE_EQ(gd_shrinker_value(4.0, 0.25, 1), 0.25);
    EXPECT_DOUBLE_EQ(gd_shrinker_value(4.0, 0.25, 9), 0.25);
    EXPECT_NEAR(gd_shrinker_value(1.0, 0.5, 2), 0.75, 1e-15);
    EXPECT_DOUBLE_EQ(gd_shrinker_value(0.0, 0.3, 7), 0.3 * 7);
    EXPECT_NEAR(gd_shrinker_value(1e-300, 0.3, 7), 2.1, 1e-15);
    // Against the defining geometric sum.
    for (double u : {1e-9, 0.01, 0.7, 1.5}) {
        for (long k : {1L, 3L, 20L}) {
            const double eta = 0.6;
            double sum = 0.0;
            for (long r = 0; r < k; ++r) sum += eta * std::pow(1.0 - eta * u, static_cast<double>(r));
            EXPECT_NEAR(gd_shrinker_value(u, eta, k), sum, 1e-12 * std::max(1.0, std::abs(sum)));
        }
    }
}

TEST(GradientDescent, FromZeroReachesMinNorm) {
    std::mt19937_64 rng(15);
    const DesignMatrix dm(random_matrix(rng, 5, 8), random_vector(rng, 5));
    const auto sd = spectral_decompose(dm);
    GradientDescentOptions opt;
    opt.eta = 0.9 / sd.top();
    opt.record_trajectory = false;
    const auto res = gradient_descent(sd, dm.X(), dm.Y(), opt);
    ASSERT_TRUE(res.converged);
    EXPECT_LE((res.estimate.beta - min_norm_ols(sd, dm.X(), dm.Y()).beta).norm(), 1e-6);
    EXPECT_TRUE(res.estimate.in_row_space);
}

TEST(GradientDescent, StartingAtMinNormConvergesImmediately) {
    std::mt19937_64 rng(16);
    const DesignMatrix dm(random_matrix(rng, 4, 6), random_vector(rng, 4));
    const auto sd = spectral_decompose(dm);
    GradientDescentOptions opt;
    opt.eta = 0.9 / sd.top();
    opt.beta0 = min_norm_ols(sd, dm.X(), dm.Y()).beta;
    const auto res = gradient_descent(sd, dm.X(), dm.Y(), opt);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.iterations, 0);
}

TEST(GradientDescent, GeneralStartKeepsNonidentifiablePart) {
    std::mt19937_64 rng(17);
    const DesignMatrix dm(random_matrix(rng, 4, 7), random_vector(rng, 4));
    const auto sd = spectral_decompose(dm);
    const Vector beta0 = random_vector(rng, 7);
    const Matrix N = ppo_row_space(sd).matrix;
    GradientDescentOptions opt;
    opt.eta = 0.9 / sd.top();
    opt.beta0 = beta0;
    opt.record_trajectory = false;
    const auto res = gradient_descent(sd, dm.X(), dm.Y(), opt);
    ASSERT_TRUE(res.converged);
    const Vector expected = min_norm_ols(sd, dm.X(), dm.Y()).beta + (beta0 - N * beta0);
    EXPECT_LE((res.estimate.beta - expected).norm(), 1e-6);
    EXPECT_FALSE(res.estimate.in_row_space);
}

TEST(GradientDescent, DivergenceReportsIteration) {
    const DesignMatrix dm(Matrix::Identity(2, 2) * 10.0, vec({1, 2}));
    const auto sd = spectral_decompose(dm);
    GradientDescentOptions opt;
    opt.eta = 100.0;  // eta * s_1 = 5000
    opt.record_trajectory = false;
    try {
        gradient_descent(sd, dm.X(), dm.Y(), opt);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_GT(e.iteration(), 1);
    }
}

TEST(GradientDescent, LargeStepWarnsAndMaxIterStops) {
    const DesignMatrix dm(Matrix::Identity(2, 2), vec({1, 2}));
    const auto sd = spectral_decompose(dm);
    GradientDescentOptions opt;
    opt.eta = 4.0;  // eta * s_1 = 2: oscillates without converging
    opt.max_iter = 10;
    const auto res = gradient_descent(sd, dm.X(), dm.Y(), opt);
    EXPECT_FALSE(res.converged);
    EXPECT_EQ(res.iterations, 10);
    EXPECT_EQ(res.trajectory.size(), 11u);
    EXPECT_GE(res.estimate.warnings.size(), 2u);
    EXPECT_THROW(gradient_descent(sd, dm.X(), dm.Y(), GradientDescentOptions{}), ParameterError);
}

TEST(GradientDescent, IteratesAreGdShrinkerEstimates) {
    std::mt19937_64 rng(18);
    const DesignMatrix dm(random_matrix(rng, 6, 9), random_vector(rng, 6));
    const auto sd = spectral_decompose(dm);
    GradientDescentOptions opt;
    opt.eta = 0.8 / sd.top();
    opt.max_iter = 50;
    opt.tol = 0.0;
    const auto res = gradient_descent(sd, dm.X(), dm.Y(), opt);
    for (long k : {1L, 5L, 50L}) {
        const auto shrunk =
            spectral_shrink(sd, dm.X(), dm.Y(), ShrinkerFunction::gradient_descent(opt.eta, k));
        ASSERT_LT(static_cast<std::size_t>(k), res.trajectory.size());
        EXPECT_LE((res.trajectory[static_cast<std::size_t>(k)] - shrunk.beta).norm(), 1e-6) << "k=" << k;
    }
}

TEST(SoftThreshold, PiecewiseValues) {
    EXPECT_DOUBLE_EQ(soft_threshold_coordinate(1.0, 1.0, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(soft_threshold_coordinate(0.4, 1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(soft_threshold_coordinate(-1.0, 1.0, 1.0), -0.5);
    EXPECT_DOUBLE_EQ(soft_threshold_coordinate(0.5, 1.0, 1.0), 0.0);  // boundary maps to 0
    EXPECT_DOUBLE_EQ(soft_threshold_coordinate(3.0, 0.0, 1.0), 0.0);
}

TEST(TransformedLasso, ZeroPenaltyIsMinNormExactly) {
    std::mt19937_64 rng(19);
    const DesignMatrix dm(random_matrix(rng, 5, 9), random_vector(rng, 5));
    const auto sd = spectral_decompose(dm);
    EXPECT_EQ(transformed_lasso(sd, dm.X(), dm.Y(), 0.0).beta, min_norm_ols(sd, dm.X(), dm.Y()).beta);
    EXPECT_THROW(transformed_lasso(sd, dm.X(), dm.Y(), -1.0), ParameterError);
}

TEST(TransformedLasso, ThresholdsRotatedCoefficients) {
    std::mt19937_64 rng(20);
    const DesignMatrix dm(random_matrix(rng, 5, 9), random_vector(rng, 5));
    const auto sd = spectral_decompose(dm);
    const double lambda = 0.3;
    const auto est = transformed_lasso(sd, dm.X(), dm.Y(), lambda);
    const Vector gm = sd.retained().transpose() * min_norm_ols(sd, dm.X(), dm.Y()).beta;
    const Vector gl = sd.retained().transpose() * est.beta;
    for (long j = 0; j < gm.size(); ++j) {
        const double cut = lambda / (2 * sd.eigenvalues(j));
        const double expected = std::abs(gm(j)) <= cut ? 0.0 : gm(j) - std::copysign(cut, gm(j));
        EXPECT_NEAR(gl(j), expected, 1e-10);
    }
    EXPECT_TRUE(est.in_row_space);
}

TEST(CoordinatePenaltySolve, AbsoluteValueMatchesLasso) {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 10; ++trial) {
        const DesignMatrix dm(random_matrix(rng, 6, 10), random_vector(rng, 6));
        const auto sd = spectral_decompose(dm);
        for (double lambda : {0.05, 0.5, 3.0}) {
            const auto res = coordinate_penalty_solve(sd, dm.X(), dm.Y(), ScalarPenalty::absolute(), lambda);
            const auto lasso = transformed_lasso(sd, dm.X(), dm.Y(), lambda);
            EXPECT_LE((res.estimate.beta - lasso.beta).norm(), 1e-8);
        }
    }
}

TEST(CoordinatePenaltySolve, SquaredPenaltyIsPerCoordinateRidge) {
    std::mt19937_64 rng(23);
    const DesignMatrix dm(random_matrix(rng, 6, 10), random_vector(rng, 6));
    const auto sd = spectral_decompose(dm);
    const double lambda = 0.7;
    const auto res = coordinate_penalty_solve(sd, dm.X(), dm.Y(), ScalarPenalty::squared(), lambda);
    EXPECT_TRUE(res.unbracketed.empty());
    const Vector gm = sd.retained().transpose() * min_norm_ols(sd, dm.X(), dm.Y()).beta;
    const Vector g = sd.retained().transpose() * res.estimate.beta;
    for (long j = 0; j < gm.size(); ++j) {
        const double s = sd.eigenvalues(j);
        EXPECT_NEAR(g(j), s * gm(j) / (s + lambda), 1e-10);
    }
    // Same thing as ridge: ||beta||^2 penalty on rotated coordinates.
    EXPECT_LE((res.estimate.beta - ridge(sd, dm.X(), dm.Y(), lambda).beta).norm(), 1e-8);
}

TEST(CoordinatePenaltySolve, ZeroPenaltyAndNegativeLambda) {
    std::mt19937_64 rng(24);
    const DesignMatrix dm(random_matrix(rng, 4, 7), random_vector(rng, 4));
    const auto sd = spectral_decompose(dm);
    const auto res = coordinate_penalty_solve(sd, dm.X(), dm.Y(), ScalarPenalty::absolute(), 0.0);
    EXPECT_LE((res.estimate.beta - min_norm_ols(sd, dm.X(), dm.Y()).beta).norm(), 1e-14);
    EXPECT_THROW(coordinate_penalty_solve(sd, dm.X(), dm.Y(), ScalarPenalty::absolute(), -1), ParameterError);
}

TEST(CoordinatePenaltySolve, NonconvexPenaltyPicksGlobalCandidate) {
    // psi(u) = min(|u|, 1): capped L1, kinks at -1, 0, 1.
    ScalarPenalty capped{[](double u) { return std::min(std::abs(u), 1.0); },
                         [](double u) { return std::abs(u) < 1 ? (u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0)) : 0.0; },
                         {-1.0, 0.0, 1.0}};
    const auto sol = overparam::detail::solve_coordinate(3.0, 1.0, 1.0, capped);
    // Beyond the cap the penalty is flat, so the unpenalized value wins.
    EXPECT_NEAR(sol.gamma, 3.0, 1e-12);
    // Brute-force grid check of the objective.
    double best = 0, best_val = INFINITY;
    for (int i = -40000; i <= 40000; ++i) {
        const double g = i * 1e-4;
        const double v = (3.0 - g) * (3.0 - g) + std::min(std::abs(g), 1.0);
        if (v < best_val) best_val = v, best = g;
    }
    EXPECT_NEAR(sol.gamma, best, 1e-4);
}

TEST(CoordinatePenaltySolve, UnbracketedCoordinatesAreFlagged) {
    // Constant slope 100: the stationary point sits far outside the search bracket.
    ScalarPenalty odd{[](double u) { return std::abs(u); }, [](double) { return 100.0; }, {}};
    const auto sol = overparam::detail::solve_coordinate(1.0, 1.0, 1.0, odd);
    EXPECT_FALSE(sol.bracketed);
}

TEST(ColumnScaling, RoundTrip) {
    std::mt19937_64 rng(25);
    Matrix X = random_matrix(rng, 5, 3);
    X.col(2) *= 100.0;
    const auto cs = ColumnScaling::fit(X);
    const Matrix Xs = cs.apply(X);
    for (long j = 0; j < 3; ++j) EXPECT_NEAR(Xs.col(j).squaredNorm() / 5.0, 1.0, 1e-12);
    const Vector b = random_vector(rng, 3);
    EXPECT_LE((X * cs.unscale(b) - Xs * b).norm(), 1e-10);
}
