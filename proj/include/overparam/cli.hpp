#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "overparam/anova.hpp"
#include "overparam/ddsim.hpp"
#include "overparam/diagnostics.hpp"
#include "overparam/errors.hpp"
#include "overparam/estimators.hpp"
#include "overparam/io.hpp"
#include "overparam/spectral_core.hpp"

namespace overparam::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

enum class LogLevel { quiet, info, debug };

struct FitOptions {
    std::string train;
    std::optional<std::string> response;
    std::string method = "mn";
    double lambda = 0.0;
    long rank = 0;
    double eta = 0.0;
    long max_iter = 1'000'000;
    double tol = 1e-10;
    double rank_tol = kDefaultRankTol;
    bool intercept = false;
    bool standardize = false;
    std::string out;
};

struct DiagnoseOptions {
    std::string train;
    std::optional<std::string> response;
    std::string candidates;
    double threshold = kDefaultEstimabilityThreshold;
    double rank_tol = kDefaultRankTol;
    bool text = false;
    std::string out;
};

struct OracleOptions {
    std::vector<double> means;
    std::vector<double> row_means;
    std::vector<double> col_means;
    long reps = 1;
    std::optional<double> lambda;
};

struct SimulateOptions {
    std::string config;
    std::string out;
    std::string long_out;
};

struct ReportOptions {
    std::string train;
    std::optional<std::string> response;
    bool centered = false;
    double rank_tol = kDefaultRankTol;
    std::string out;
};

namespace detail {

class OutputTarget {
public:
    OutputTarget(const std::string& path, std::ostream& fallback) {
        if (path.empty() || path == "-") {
            stream_ = &fallback;
        } else {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw InputError("cannot open '" + path + "' for writing");
            stream_ = file_.get();
        }
    }
    std::ostream& stream() { return *stream_; }
    bool is_file() const { return file_ != nullptr; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* stream_ = nullptr;
};

inline Matrix with_intercept(const Matrix& X) {
    Matrix out(X.rows(), X.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(X.cols()) = X;
    return out;
}

inline int fit(const FitOptions& o, const CLI::App& app, std::ostream& out, std::ostream& err) {
    auto given = [&](const char* name) { return app.count(name) > 0; };
    const std::string& m = o.method;
    if (given("--lambda") && m != "ridge" && m != "lasso")
        throw CLI::ValidationError("--lambda", "only valid with --method ridge or lasso");
    if (given("--rank") && m != "pcr") throw CLI::ValidationError("--rank", "only valid with --method pcr");
    for (const char* gd_flag : {"--eta", "--max-iter", "--tol"})
        if (given(gd_flag) && m != "gd") throw CLI::ValidationError(gd_flag, "only valid with --method gd");
    if ((m == "ridge" || m == "lasso") && !given("--lambda"))
        throw CLI::RequiredError("--lambda (required by --method " + m + ")");
    if (m == "pcr" && !given("--rank")) throw CLI::RequiredError("--rank (required by --method pcr)");
    if (m == "pcr" && o.rank < 1) throw CLI::ValidationError("--rank", "must be >= 1");
    if (m == "ridge" && !(o.lambda > 0))
        throw ParameterError("ridge needs --lambda > 0; for lambda = 0 use --method mn");

    auto ds = io::split_response(io::read_csv(o.train), o.response);
    if (o.intercept) {
        ds.X = with_intercept(ds.X);
        ds.feature_names.insert(ds.feature_names.begin(), "(intercept)");
    }
    const DesignMatrix design(ds.X, ds.y);
    std::optional<ColumnScaling> scaling;
    Matrix X = design.X();
    if (o.standardize) {
        scaling = ColumnScaling::fit(X);
        X = scaling->apply(X);
    }
    const auto sd = spectral_decompose(X, o.rank_tol);
    const Vector& y = design.Y();

    CoefficientEstimate est;
    if (m == "mn") {
        est = min_norm_ols(sd, X, y);
    } else if (m == "ridge") {
        est = ridge(sd, X, y, o.lambda);
    } else if (m == "pcr") {
        est = pcr(sd, X, y, o.rank);
    } else if (m == "lasso") {
        est = transformed_lasso(sd, X, y, o.lambda);
    } else {
        GradientDescentOptions gopt;
        gopt.eta = given("--eta") ? o.eta : 0.9 / sd.top();
        gopt.max_iter = o.max_iter;
        gopt.tol = o.tol;
        gopt.record_trajectory = false;
        est = gradient_descent(sd, X, y, gopt).estimate;
    }
    const auto sd_raw = scaling ? spectral_decompose(design.X(), o.rank_tol) : sd;
    if (scaling) {
        est.beta = scaling->unscale(est.beta);
        est.in_row_space = in_row_space(sd_raw, est.beta);
    }
    for (const auto& w : est.warnings) err << "warning: " << w << '\n';

    const double off_row_space = row_space_residual(sd_raw, est.beta);
    const double sse = (y - design.X() * est.beta).squaredNorm();

    OutputTarget target(o.out, out);
    io::write_coefficients(target.stream(), ds.feature_names, est);
    std::ostream& summary = target.is_file() ? out : err;
    summary << io::tuning_text(est) << '\n'
            << "n=" << design.rows() << " p=" << design.cols() << " rank=" << sd_raw.rank << '\n'
            << "row_space_residual=" << io::format_double(off_row_space) << '\n'
            << "sse=" << io::format_double(sse) << '\n';
    return kOk;
}

// Aligns candidate columns to the training predictor names; a response column is ignored.
inline Matrix align_candidates(const io::CsvTable& cand, const std::vector<std::string>& predictors,
                               const std::string& response) {
    if (cand.header.empty()) return Matrix(0, static_cast<long>(predictors.size()));
    Matrix out(cand.data.rows(), static_cast<long>(predictors.size()));
    for (std::size_t j = 0; j < predictors.size(); ++j) {
        auto it = std::find(cand.header.begin(), cand.header.end(), predictors[j]);
        if (it == cand.header.end())
            throw InputError("candidates file lacks predictor column '" + predictors[j] + "'");
        out.col(static_cast<long>(j)) = cand.data.col(static_cast<long>(it - cand.header.begin()));
    }
    for (const auto& h : cand.header)
        if (h != response && std::find(predictors.begin(), predictors.end(), h) == predictors.end())
            throw InputError("candidates file has unknown column '" + h + "'");
    return out;
}

inline int diagnose(const DiagnoseOptions& o, std::ostream& out) {
    const auto ds = io::split_response(io::read_csv(o.train), o.response);
    const Matrix X = with_intercept(ds.X);
    const auto pm = build_partitioned(X, ds.y);
    const Matrix Zf = align_candidates(io::read_csv(o.candidates), ds.feature_names, ds.response_name);
    const EstimabilityScorer scorer(pm, X, o.threshold, o.rank_tol);
    const auto scores = scorer.score_rows(Zf);
    OutputTarget target(o.out, out);
    if (o.text) io::write_estimability_text(target.stream(), scores);
    else io::write_estimability_csv(target.stream(), scores);
    return kOk;
}

inline int oracle_compare(std::ostream& out, const std::vector<std::string>& names,
                          const Vector& closed, const Vector& generic) {
    out << "term,closed_form,generic,abs_diff\n";
    double worst = 0.0;
    for (long j = 0; j < closed.size(); ++j) {
        const double diff = std::abs(closed(j) - generic(j));
        worst = std::max(worst, diff);
        out << names[static_cast<std::size_t>(j)] << ',' << io::format_double(closed(j)) << ','
            << io::format_double(generic(j)) << ',' << io::format_double(diff) << '\n';
    }
    if (worst > 1e-9 * std::max(1.0, closed.cwiseAbs().maxCoeff()))
        throw NumericalError("closed form and generic estimate disagree by " + io::format_double(worst));
    return kOk;
}

inline int oracle_oneway(const OracleOptions& o, std::ostream& out) {
    const long a = static_cast<long>(o.means.size());
    const auto layout =
        anova::OneWayLayout::from_means(Eigen::Map<const Vector>(o.means.data(), a), o.reps);
    // Every replicate sits at its group mean, so the layout is recovered exactly from the data.
    Vector y(a * o.reps);
    for (long i = 0; i < a; ++i) y.segment(i * o.reps, o.reps).setConstant(layout.group_means(i));
    const Matrix X = anova::oneway_design(a, o.reps);
    const auto sd = spectral_decompose(X);
    std::vector<std::string> names{"mu"};
    for (long i = 1; i <= a; ++i) names.push_back("alpha" + std::to_string(i));
    if (o.lambda && *o.lambda > 0)
        return oracle_compare(out, names, anova::oneway_ridge(layout, *o.lambda),
                              ridge(sd, X, y, *o.lambda).beta);
    if (o.lambda && *o.lambda < 0) throw ParameterError("--lambda must be >= 0");
    return oracle_compare(out, names, anova::oneway_min_norm(layout), min_norm_ols(sd, X, y).beta);
}

inline int oracle_twoway(const OracleOptions& o, std::ostream& out) {
    const long a = static_cast<long>(o.row_means.size());
    const long b = static_cast<long>(o.col_means.size());
    const auto layout = anova::TwoWayLayout::from_means(Eigen::Map<const Vector>(o.row_means.data(), a),
                                                        Eigen::Map<const Vector>(o.col_means.data(), b),
                                                        o.reps);
    // Additive cell means reproduce the requested margins exactly.
    Vector y(a * b * o.reps);
    for (long i = 0; i < a; ++i)
        for (long j = 0; j < b; ++j)
            y.segment((i * b + j) * o.reps, o.reps)
                .setConstant(layout.row_means(i) + layout.col_means(j) - layout.grand_mean);
    const Matrix X = anova::twoway_design(a, b, o.reps);
    std::vector<std::string> names{"mu"};
    for (long i = 1; i <= a; ++i) names.push_back("alpha" + std::to_string(i));
    for (long j = 1; j <= b; ++j) names.push_back("eta" + std::to_string(j));
    return oracle_compare(out, names, anova::twoway_min_norm(layout),
                          min_norm_ols(spectral_decompose(X), X, y).beta);
}

inline std::uint64_t default_seed() {
    if (const char* env = std::getenv("OVERPARAM_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw InputError(std::string("OVERPARAM_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return 42;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline int simulate(const SimulateOptions& o, ddsim::SimulationConfig cfg, const CLI::App& app,
                    LogLevel level, std::ostream& out, std::ostream& err) {
    // Flags given explicitly override the config file.
    ddsim::SimulationConfig flags = cfg;
    cfg = ddsim::SimulationConfig{};
    cfg.master_seed = default_seed();
    if (!o.config.empty()) cfg = ddsim::config_from_json_text(slurp(o.config), cfg);
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--p")) cfg.p_minus_1 = flags.p_minus_1;
    if (given("--n")) cfg.n_train = flags.n_train;
    if (given("--n-test")) cfg.n_test = flags.n_test;
    if (given("--reps")) cfg.reps = flags.reps;
    if (given("--sigma")) cfg.sigma = flags.sigma;
    if (given("--rho")) cfg.rho = flags.rho;
    if (given("--seed")) cfg.master_seed = flags.master_seed;
    if (given("--max-degree")) cfg.max_degree = flags.max_degree;
    if (given("--generator")) cfg.generator = flags.generator;
    if (given("--latent-dim")) cfg.latent_dim = flags.latent_dim;
    if (given("--center")) cfg.center_features = flags.center_features;
    if (given("--redraw-test")) cfg.redraw_test = flags.redraw_test;
    if (given("--threads")) cfg.threads = flags.threads;
    cfg.validate();

    if (level == LogLevel::debug) err << "config: " << nlohmann::json(cfg).dump() << '\n';
    auto progress = [&](const ddsim::ModelRow& row) {
        if (level != LogLevel::quiet)
            err << "degree " << row.degree << " (s+1=" << row.s_plus_1 << ", rank " << row.rank
                << "): pmse=" << row.pmse << " bias2=" << row.bias2 << '\n';
    };
    const auto report = ddsim::run_double_descent(cfg, progress);
    if (report.flagged_reps > 0)
        err << "warning: " << report.flagged_reps << " replicates had non-finite fits and were dropped\n";
    OutputTarget target(o.out, out);
    io::write_report_csv(target.stream(), report);
    if (!o.long_out.empty()) {
        OutputTarget long_target(o.long_out, out);
        io::write_report_long_csv(long_target.stream(), report);
    }
    if (level == LogLevel::debug) err << "wall time " << report.wall_seconds << " s\n";
    return kOk;
}

inline int report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
    const auto ds = io::split_response(io::read_csv(o.train), o.response);
    SpectralDecomposition sd;
    if (o.centered) {
        const auto pm = build_partitioned(with_intercept(ds.X), ds.y);
        sd = spectral_decompose(pm.centered_Z, o.rank_tol);
    } else {
        sd = spectral_decompose(ds.X, o.rank_tol);
    }
    const auto rows = eigen_decay_report(sd);
    OutputTarget target(o.out, out);
    io::write_eigen_decay_csv(target.stream(), rows);
    std::ostream& summary = target.is_file() ? out : err;
    summary << "rank=" << sd.rank << " of " << sd.dim() << '\n'
            << "components_for_90pct=" << components_for_share(rows, 0.90) << '\n'
            << "components_for_99pct=" << components_for_share(rows, 0.99) << '\n';
    return kOk;
}

}  // namespace detail

/// Runs the command line. Returns 0 on success, 2 on usage or input errors, 3 on numerical errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"Estimation, prediction and diagnostics for overparameterized linear models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "overparam 0.1.0");

    std::string log_level = "info";
    app.add_option("--log-level", log_level, "quiet, info or debug")
        ->check(CLI::IsMember({"quiet", "info", "debug"}))
        ->capture_default_str();

    FitOptions fit_opt;
    auto* fit = app.add_subcommand("fit", "Estimate coefficients from a training CSV");
    fit->add_option("--train", fit_opt.train, "Training CSV (header row)")->required()->check(CLI::ExistingFile);
    fit->add_option("--response", fit_opt.response, "Response column name (default: first column)");
    fit->add_option("--method", fit_opt.method, "mn, ridge, pcr, lasso or gd")
        ->check(CLI::IsMember({"mn", "ridge", "pcr", "lasso", "gd"}))
        ->capture_default_str();
    fit->add_option("--lambda", fit_opt.lambda, "Penalty weight (ridge, lasso)");
    fit->add_option("--rank", fit_opt.rank, "Retained principal components (pcr)");
    fit->add_option("--eta", fit_opt.eta, "Step size (gd; default 0.9/s_1)");
    fit->add_option("--max-iter", fit_opt.max_iter, "Iteration cap (gd)");
    fit->add_option("--tol", fit_opt.tol, "Relative convergence threshold (gd)");
    fit->add_option("--rank-tol", fit_opt.rank_tol, "Relative eigenvalue cutoff")->capture_default_str();
    fit->add_flag("--intercept", fit_opt.intercept, "Prepend a column of ones");
    fit->add_flag("--standardize", fit_opt.standardize, "Scale columns to unit RMS before fitting");
    fit->add_option("--out", fit_opt.out, "Coefficient CSV path (default: stdout)");

    DiagnoseOptions diag_opt;
    auto* diag = app.add_subcommand("diagnose", "Score candidate predictor rows for predictive estimability");
    diag->add_option("--train", diag_opt.train, "Training CSV")->required()->check(CLI::ExistingFile);
    diag->add_option("--response", diag_opt.response, "Response column name (default: first column)");
    diag->add_option("--candidates", diag_opt.candidates, "Candidate predictors CSV")
        ->required()
        ->check(CLI::ExistingFile);
    diag->add_option("--threshold", diag_opt.threshold, "Relative residual below which a case is estimable")
        ->capture_default_str();
    diag->add_option("--rank-tol", diag_opt.rank_tol, "Relative eigenvalue cutoff")->capture_default_str();
    diag->add_flag("--text", diag_opt.text, "Human-readable output instead of CSV");
    diag->add_option("--out", diag_opt.out, "Report path (default: stdout)");

    OracleOptions oracle_opt;
    auto* oracle = app.add_subcommand("oracle", "Compare closed-form ANOVA estimates with the generic solver");
    oracle->require_subcommand(1);
    auto* oneway = oracle->add_subcommand("oneway", "Balanced one-way layout");
    oneway->add_option("--means", oracle_opt.means, "Group means")->required()->delimiter(',');
    oneway->add_option("--reps", oracle_opt.reps, "Replicates per group")->check(CLI::PositiveNumber);
    oneway->add_option("--lambda", oracle_opt.lambda, "Ridge parameter (0 or absent: minimum norm)");
    auto* twoway = oracle->add_subcommand("twoway", "Balanced additive two-way layout");
    twoway->add_option("--row-means", oracle_opt.row_means, "Row-factor means")->required()->delimiter(',');
    twoway->add_option("--col-means", oracle_opt.col_means, "Column-factor means")->required()->delimiter(',');
    twoway->add_option("--reps", oracle_opt.reps, "Replicates per cell")->check(CLI::PositiveNumber);

    SimulateOptions sim_opt;
    ddsim::SimulationConfig sim_cfg;
    long sim_n = 0;
    std::string generator = "copula-uniform";
    auto* sim = app.add_subcommand("simulate", "Run the double-descent polynomial simulation");
    sim->add_option("--config", sim_opt.config, "JSON config document")->check(CLI::ExistingFile);
    sim->add_option("--p", sim_cfg.p_minus_1, "Number of base predictors (p - 1)");
    sim->add_option("--n", sim_n, "Training rows (default 1 + 3 (p - 1))");
    sim->add_option("--n-test", sim_cfg.n_test, "Test rows");
    sim->add_option("--reps", sim_cfg.reps, "Response replicates");
    sim->add_option("--sigma", sim_cfg.sigma, "Noise standard deviation");
    sim->add_option("--rho", sim_cfg.rho, "Exchangeable copula correlation");
    sim->add_option("--seed", sim_cfg.master_seed, "Master seed (default: $OVERPARAM_SEED or 42)");
    sim->add_option("--max-degree", sim_cfg.max_degree, "Highest polynomial degree");
    sim->add_option("--generator", generator, "copula-uniform or reduced-rank")
        ->check(CLI::IsMember({"copula-uniform", "reduced-rank"}));
    sim->add_option("--latent-dim", sim_cfg.latent_dim, "Rank of R for the reduced-rank generator");
    sim->add_flag("--center", sim_cfg.center_features, "Center features at their training means");
    sim->add_flag("--redraw-test", sim_cfg.redraw_test, "Redraw test predictors for every replicate");
    sim->add_option("--threads", sim_cfg.threads, "Worker threads (default: all cores)");
    sim->add_option("--out", sim_opt.out, "Report CSV path (default: stdout)");
    sim->add_option("--long-out", sim_opt.long_out, "Long-format CSV for plotting");

    ReportOptions rep_opt;
    auto* rep = app.add_subcommand("report", "Eigen-decay report for a design CSV");
    rep->add_option("--train", rep_opt.train, "Design CSV")->required()->check(CLI::ExistingFile);
    rep->add_option("--response", rep_opt.response, "Response column name (default: first column)");
    rep->add_flag("--centered", rep_opt.centered, "Use the centered predictor covariance S_zz");
    rep->add_option("--rank-tol", rep_opt.rank_tol, "Relative eigenvalue cutoff")->capture_default_str();
    rep->add_option("--out", rep_opt.out, "Report path (default: stdout)");

    try {
        app.parse(argc, argv);
        const LogLevel level = log_level == "quiet"   ? LogLevel::quiet
                               : log_level == "debug" ? LogLevel::debug
                                                      : LogLevel::info;
        if (*fit) return detail::fit(fit_opt, *fit, out, err);
        if (*diag) return detail::diagnose(diag_opt, out);
        if (*oneway) return detail::oracle_oneway(oracle_opt, out);
        if (*twoway) return detail::oracle_twoway(oracle_opt, out);
        if (*sim) {
            if (sim->count("--n")) sim_cfg.n_train = sim_n;
            sim_cfg.generator = generator == "reduced-rank" ? ddsim::Generator::reduced_rank
                                                            : ddsim::Generator::copula_uniform;
            return detail::simulate(sim_opt, sim_cfg, *sim, level, out, err);
        }
        if (*rep) return detail::report(rep_opt, out, err);
        return kUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kNumerical;
    }
}

}  // namespace overparam::cli
