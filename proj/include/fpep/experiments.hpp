#pragma once

// Experiment commands behind the CLI. Each command reads a flat ConfigMap,
// runs deterministically from its seed, and returns a self-describing record:
// feeding the record's own `config` back into run_experiment reproduces every
// number in `results` (timings excluded).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpep/core_model.hpp"
#include "fpep/error.hpp"
#include "fpep/freeprob.hpp"
#include "fpep/io/config.hpp"
#include "fpep/io/data.hpp"
#include "fpep/linalg.hpp"
#include "fpep/locallaw.hpp"
#include "fpep/randmat.hpp"
#include "fpep/solver_diag.hpp"
#include "fpep/solver_scalar.hpp"

namespace fpep::experiments {

using nlohmann::json;

struct ExperimentRecord {
    std::string command;
    json config = json::object();
    std::uint64_t seed = 0;
    json results = json::object();
    json wall_times_ms = json::object();
    json status = "ok";  // "ok" or {"code", "message"}
    std::vector<std::string> warnings;

    bool ok() const { return status.is_string() && status.get<std::string>() == "ok"; }
};

inline json to_json(const ExperimentRecord& r) {
    json j;
    j["command"] = r.command;
    j["config"] = r.config;
    j["seed"] = r.seed;
    j["results"] = r.results;
    j["wall_times_ms"] = r.wall_times_ms;
    j["status"] = r.status;
    j["warnings"] = r.warnings;
    return j;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"ep-fit",    "approx-quality", "bench",       "local-law",
                                                "freeness", "transforms",     "ingest-check"};
    return names;
}

/// Errors caused by the user's input (exit code 2) rather than by numerics (3).
inline bool is_input_error(ErrorCode c) {
    switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::BenchConfigError:
    case ErrorCode::ParseError:
    case ErrorCode::RaggedRows:
    case ErrorCode::UnmappableLabel:
    case ErrorCode::IoError:
    case ErrorCode::InvalidParameter: return true;
    default: return false;
    }
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

inline json to_array(const Vector& v) { return vector_to_json(v); }

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots, so the output does not depend on scheduling.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline char read_delimiter(io::ConfigReader& r) {
    const std::string d = r.string("delimiter", ",");
    if (d == "tab" || d == "\\t") return '\t';
    if (d.size() != 1) fail(ErrorCode::ConfigError, "config key 'delimiter' must be a single character or 'tab'");
    return d[0];
}

inline io::IngestOptions read_ingest_options(io::ConfigReader& r) {
    io::IngestOptions o;
    o.delimiter = read_delimiter(r);
    o.has_header = r.boolean("has_header", true);
    o.label_column = static_cast<int>(r.integer("label_column", -1));
    o.standardize = r.boolean("standardize", false);
    return o;
}

inline randmat::DiagLaw read_law(io::ConfigReader& r, const std::string& prefix, double a, double b) {
    const std::string kind = r.choice(prefix + "law", "uniform", {"uniform", "two_point"});
    randmat::DiagLaw law;
    if (kind == "uniform") {
        law = randmat::Uniform{r.real(prefix + "a", a), r.real(prefix + "b", b)};
    } else {
        law = randmat::TwoPoint{r.real(prefix + "x1", a), r.real(prefix + "x2", b), r.real(prefix + "p", 0.5)};
    }
    randmat::validate_law(law);
    return law;
}

struct ModelSetup {
    GlmProblem problem;
    std::optional<Vector> planted_w;
    std::string source;
};

/// Shared data/model keys of ep-fit and approx-quality.
inline ModelSetup read_model(io::ConfigReader& r, std::uint64_t seed, const std::string& out_dir,
                             std::vector<std::string>& warnings) {
    const std::string data = r.string("data", "synthetic");
    const std::string likelihood = r.choice("likelihood", "probit", {"probit", "gaussian"});
    const double noise_var = r.real("noise_var", 1.0);
    const std::string prior = r.choice("prior", "spike_slab", {"spike_slab", "gaussian"});
    PriorSpec prior_spec;
    if (prior == "spike_slab") {
        prior_spec = SpikeSlabPrior{r.real("rho", 0.1), r.real("slab_var", 1.0)};
    } else {
        prior_spec = GaussianPrior{r.real("prior_mean", 0.0), r.real("prior_var", 1.0)};
    }
    LikelihoodSpec lik_spec;
    if (likelihood == "probit") {
        lik_spec = ProbitLikelihood{noise_var};
    } else {
        lik_spec = GaussianLikelihood{noise_var};
    }

    ModelSetup m;
    m.source = data;
    if (data == "synthetic") {
        io::SyntheticSpec s;
        s.n = r.integer("n", 256);
        s.k = r.integer("k", 512);
        require(s.n >= 1 && s.k >= 1, ErrorCode::ConfigError, "config keys 'n' and 'k' must be positive");
        s.rho = r.real("data_rho", 0.1);
        s.x_scale = r.real("x_scale", 1.0 / std::sqrt(static_cast<double>(s.n)));
        s.noise_var = noise_var;
        s.probit = likelihood == "probit";
        s.seed = seed;
        const bool write_data = r.boolean("write_data", false);
        auto syn = io::synthetic_dataset(s);
        if (write_data) {
            if (out_dir.empty()) fail(ErrorCode::ConfigError, "config key 'write_data' needs an out_dir");
            if (!s.probit) fail(ErrorCode::ConfigError, "config key 'write_data' needs binary labels (likelihood = probit)");
            io::write_dataset_csv((std::filesystem::path(out_dir) / "synthetic.csv").string(), syn.data);
        }
        m.problem = GlmProblem{std::move(syn.data.X), std::move(syn.data.y), prior_spec, lik_spec};
        m.planted_w = std::move(syn.w);
    } else {
        auto d = io::ingest_csv(data, read_ingest_options(r));
        for (auto& w : d.warnings) warnings.push_back(std::move(w));
        m.problem = GlmProblem{std::move(d.X), std::move(d.y), prior_spec, lik_spec};
    }
    validate_problem(m.problem);
    return m;
}

inline SolverConfig read_solver(io::ConfigReader& r) {
    SolverConfig c;
    c.max_iter = static_cast<int>(r.integer("max_iter", 500));
    c.tol = r.real("tol", 1e-8);
    c.damping = r.real("damping", 0.5);
    c.min_variance = r.real("min_variance", 1e-12);
    validate_config(c);
    return c;
}

inline InitConfig read_init(io::ConfigReader& r) {
    InitConfig i;
    i.lambda1_init = r.real("lambda1_init", 1.0);
    i.lambda2_init = r.real("lambda2_init", 1.0);
    require(i.lambda1_init > 0.0 && i.lambda2_init > 0.0, ErrorCode::ConfigError,
            "config keys 'lambda1_init' and 'lambda2_init' must be positive");
    return i;
}

inline json solve_summary(const SolveResult& s) {
    return {{"iterations", s.summary.iterations},
            {"converged", s.summary.converged},
            {"residual", s.summary.residual},
            {"negative_variance_events", s.negative_variance},
            {"mean_w", to_array(s.summary.mean_w)},
            {"var_w", to_array(s.summary.var_w)}};
}

/// Posterior mean of the linear-Gaussian model, by Cholesky.
inline Vector ridge_mean(const GlmProblem& p) {
    const auto& g = std::get<GaussianPrior>(p.prior);
    const double nv = std::get<GaussianLikelihood>(p.likelihood).noise_var;
    Matrix a = p.X.transpose() * p.X / nv;
    a.diagonal().array() += 1.0 / g.var;
    const Vector b = p.X.transpose() * p.y / nv + Vector::Constant(p.K(), g.mean / g.var);
    return checked_llt(a, "ridge normal matrix").solve(b);
}

inline double median_relative_error(const Vector& reference, const Vector& other) {
    std::vector<double> rel(static_cast<std::size_t>(reference.size()));
    for (Eigen::Index i = 0; i < reference.size(); ++i) {
        rel[static_cast<std::size_t>(i)] = std::abs(other(i) - reference(i)) / std::abs(reference(i));
    }
    return median(rel);
}

inline std::string csv_path(const std::string& out_dir, const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
}

}  // namespace detail

struct RunContext {
    std::uint64_t seed = 0;
    std::string out_dir;
    int threads = 1;
};

// ---------------------------------------------------------------------------

inline void cmd_ep_fit(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    auto t0 = detail::Clock::now();
    const auto model = detail::read_model(r, ctx.seed, ctx.out_dir, rec.warnings);
    const auto cfg = detail::read_solver(r);
    const auto init = detail::read_init(r);
    const std::string solvers = r.choice("solvers", "both", {"both", "diagonal", "scalar"});
    r.reject_unknown();
    const GlmProblem& p = model.problem;
    rec.wall_times_ms["data"] = detail::ms_since(t0);

    json& res = rec.results;
    res["n"] = p.N();
    res["k"] = p.K();
    const bool linear_gaussian =
        std::holds_alternative<GaussianPrior>(p.prior) && std::holds_alternative<GaussianLikelihood>(p.likelihood);
    std::optional<Vector> ridge;
    if (linear_gaussian) ridge = detail::ridge_mean(p);

    std::optional<SolveResult> diag, scalar;
    if (solvers != "scalar") {
        t0 = detail::Clock::now();
        diag = solve_diagonal(p, cfg, init);
        rec.wall_times_ms["diagonal"] = detail::ms_since(t0);
        res["diagonal"] = detail::solve_summary(*diag);
        if (!diag->summary.converged) rec.warnings.push_back("diagonal EP did not converge");
    }
    if (solvers != "diagonal") {
        t0 = detail::Clock::now();
        const SvdCache cache = precompute_svd(p.X);
        rec.wall_times_ms["svd"] = detail::ms_since(t0);
        t0 = detail::Clock::now();
        scalar = solve_scalar(p, cache, cfg, init);
        rec.wall_times_ms["scalar"] = detail::ms_since(t0);
        res["scalar"] = detail::solve_summary(*scalar);
        if (!scalar->summary.converged) rec.warnings.push_back("scalar EP did not converge");
    }
    if (ridge) {
        if (diag) res["diagonal"]["ridge_max_abs_error"] = (diag->summary.mean_w - *ridge).lpNorm<Eigen::Infinity>();
        if (scalar) res["scalar"]["ridge_max_abs_error"] = (scalar->summary.mean_w - *ridge).lpNorm<Eigen::Infinity>();
    }
    if (diag && scalar) {
        res["comparison"] = {
            {"mean_correlation", pearson_correlation(diag->summary.mean_w, scalar->summary.mean_w)},
            {"median_var_relative_error", detail::median_relative_error(diag->summary.var_w, scalar->summary.var_w)}};
    }
    if (model.planted_w && diag) {
        res["planted_correlation_diagonal"] = pearson_correlation(*model.planted_w, diag->summary.mean_w);
    }

    if (!ctx.out_dir.empty()) {
        std::vector<std::string> names{"index"};
        std::vector<Vector> cols;
        Vector idx(p.K());
        for (Eigen::Index k = 0; k < p.K(); ++k) idx(k) = static_cast<double>(k);
        cols.push_back(idx);
        if (diag) {
            names.insert(names.end(), {"mu_diag", "var_diag"});
            cols.push_back(diag->summary.mean_w);
            cols.push_back(diag->summary.var_w);
        }
        if (scalar) {
            names.insert(names.end(), {"mu_scalar", "var_scalar"});
            cols.push_back(scalar->summary.mean_w);
            cols.push_back(scalar->summary.var_w);
        }
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "ep_fit.csv"), names, cols);
    }
}

inline void cmd_approx_quality(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    auto t0 = detail::Clock::now();
    const auto model = detail::read_model(r, ctx.seed, ctx.out_dir, rec.warnings);
    const auto cfg = detail::read_solver(r);
    const auto init = detail::read_init(r);
    r.reject_unknown();
    const GlmProblem& p = model.problem;
    rec.wall_times_ms["data"] = detail::ms_since(t0);

    t0 = detail::Clock::now();
    const SolveResult fit = solve_diagonal(p, cfg, init);
    rec.wall_times_ms["diagonal"] = detail::ms_since(t0);
    if (!fit.summary.converged) rec.warnings.push_back("diagonal EP did not converge; using the last iterate");

    t0 = detail::Clock::now();
    const Vector l1w = fit.state.lambda1w.diag();
    const Vector l1z = fit.state.lambda1z.diag();
    const auto th = locallaw::scalar_lambda2_check(l1w, l1z, p.X);
    const Projection exact = gaussian_projection(p, fit.state);
    const Vector approx_w = (l1w.array() + th.lambda2w).inverse().matrix();
    const Vector approx_z = (l1z.array() + th.lambda2z).inverse().matrix();
    rec.wall_times_ms["evaluate"] = detail::ms_since(t0);

    auto side = [](const Vector& ex, const Vector& ap) {
        return json{{"correlation", pearson_correlation(ex, ap)},
                    {"median_relative_error", detail::median_relative_error(ex, ap)},
                    {"max_relative_error", ((ap - ex).array() / ex.array()).abs().maxCoeff()}};
    };
    json& res = rec.results;
    res["n"] = p.N();
    res["k"] = p.K();
    res["iterations"] = fit.summary.iterations;
    res["converged"] = fit.summary.converged;
    res["lambda2w"] = th.lambda2w;
    res["lambda2z"] = th.lambda2z;
    res["trace_identity_residual"] = th.trace_identity_residual;
    res["w"] = side(exact.sigma_diag, approx_w);
    res["z"] = side(exact.z_var_diag, approx_z);

    if (!ctx.out_dir.empty()) {
        auto index = [](Eigen::Index n) {
            Vector v(n);
            for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<double>(i);
            return v;
        };
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "approx_w.csv"), {"index", "exact", "approx"},
                              {index(p.K()), exact.sigma_diag, approx_w});
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "approx_z.csv"), {"index", "exact", "approx"},
                              {index(p.N()), exact.z_var_diag, approx_z});
    }
}

struct SlopeFit {
    double slope = 0.0;
    double stderr_ = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares of log(t) on log(K).
inline SlopeFit loglog_slope(const std::vector<double>& sizes, const std::vector<double>& times) {
    require(sizes.size() == times.size() && sizes.size() >= 2, ErrorCode::BenchConfigError,
            "slope fit needs at least two sizes");
    const auto m = static_cast<double>(sizes.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        require(sizes[i] > 0.0 && times[i] > 0.0, ErrorCode::NonFinite, "slope fit needs positive values");
        mx += std::log(sizes[i]);
        my += std::log(times[i]);
    }
    mx /= m;
    my /= m;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double dx = std::log(sizes[i]) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(times[i]) - my);
    }
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (sizes.size() > 2) {
        double ssr = 0.0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            const double e = std::log(times[i]) - f.intercept - f.slope * std::log(sizes[i]);
            ssr += e * e;
        }
        f.stderr_ = std::sqrt(ssr / (m - 2.0) / sxx);
    }
    return f;
}

/// Median over `repeats` samples of the time of one sweep; each sample
/// averages as many sweeps as fit in `min_time_ms`.
template <class Sweep>
double time_sweep_ms(Sweep&& sweep, int repeats, double min_time_ms, bool& too_fast) {
    std::vector<double> samples;
    for (int r = 0; r < repeats; ++r) {
        int reps = 0;
        const auto t0 = detail::Clock::now();
        double elapsed = 0.0;
        do {
            sweep();
            ++reps;
            elapsed = detail::ms_since(t0);
        } while (elapsed < min_time_ms);
        samples.push_back(elapsed / reps);
        if (reps > 1) too_fast = true;
    }
    return median(samples);
}

inline void cmd_bench(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    const auto sizes = r.integer_list("sizes", {256, 512, 1024, 2048});
    const double alpha = r.real("alpha", 0.5);
    const std::string flavor = r.choice("flavor", "both", {"both", "diagonal", "scalar"});
    const int repeats = static_cast<int>(r.integer("repeats", 3));
    const double min_time_ms = r.real("min_time_ms", 50.0);
    r.reject_unknown();
    if (sizes.size() < 4) fail(ErrorCode::BenchConfigError, "bench needs at least four sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        require(sizes[i] >= 2, ErrorCode::BenchConfigError, "bench sizes must be at least 2");
        if (i > 0 && sizes[i] <= sizes[i - 1]) fail(ErrorCode::BenchConfigError, "bench sizes must be strictly ascending");
    }
    require(alpha > 0.0, ErrorCode::ConfigError, "config key 'alpha' must be positive");
    require(repeats >= 1, ErrorCode::ConfigError, "config key 'repeats' must be >= 1");
    require(min_time_ms >= 0.0, ErrorCode::ConfigError, "config key 'min_time_ms' must be nonnegative");

    const SolverConfig cfg;
    std::vector<double> ks, t_diag, t_scalar;
    json rows = json::array();
    bool fast_diag = false, fast_scalar = false;
    const auto t_all = detail::Clock::now();
    for (const auto k : sizes) {
        io::SyntheticSpec s;
        s.k = k;
        s.n = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(alpha * static_cast<double>(k))));
        s.x_scale = 1.0 / std::sqrt(static_cast<double>(s.n));
        s.seed = ctx.seed;
        auto syn = io::synthetic_dataset(s);
        const GlmProblem p{std::move(syn.data.X), std::move(syn.data.y), SpikeSlabPrior{0.1, 1.0}, ProbitLikelihood{1.0}};
        json row{{"k", k}, {"n", s.n}};
        ks.push_back(static_cast<double>(k));
        if (flavor != "scalar") {
            const EpState st = init_state(p, Flavor::Diagonal);
            bool fast = false;
            const double t = time_sweep_ms([&] { (void)ep_sweep_diagonal(p, st, cfg); }, repeats, min_time_ms, fast);
            t_diag.push_back(t);
            row["diagonal_ms"] = t;
            row["diagonal_too_fast"] = fast;
            fast_diag = fast_diag || fast;
        }
        if (flavor != "diagonal") {
            const SvdCache cache = precompute_svd(p.X);
            const EpState st = init_state_scalar(p, cache);
            bool fast = false;
            const double t = time_sweep_ms([&] { (void)ep_sweep_scalar(p, st, cache, cfg); }, repeats, min_time_ms, fast);
            t_scalar.push_back(t);
            row["scalar_ms"] = t;
            row["scalar_too_fast"] = fast;
            fast_scalar = fast_scalar || fast;
        }
        rows.push_back(row);
    }
    rec.wall_times_ms["total"] = detail::ms_since(t_all);
    rec.results["alpha"] = alpha;
    rec.results["per_size"] = rows;
    if (!t_diag.empty()) {
        const auto f = loglog_slope(ks, t_diag);
        rec.results["diagonal"] = {{"slope", f.slope}, {"slope_stderr", f.stderr_}, {"too_fast", fast_diag}};
    }
    if (!t_scalar.empty()) {
        const auto f = loglog_slope(ks, t_scalar);
        rec.results["scalar"] = {{"slope", f.slope}, {"slope_stderr", f.stderr_}, {"too_fast", fast_scalar}};
    }
    if (fast_diag || fast_scalar) rec.warnings.push_back("some sweeps were shorter than min_time_ms and were averaged");
    if (!ctx.out_dir.empty()) {
        std::vector<std::string> names{"k"};
        std::vector<Vector> cols{Eigen::Map<const Vector>(ks.data(), static_cast<Eigen::Index>(ks.size()))};
        if (!t_diag.empty()) {
            names.push_back("diagonal_ms");
            cols.push_back(Eigen::Map<const Vector>(t_diag.data(), static_cast<Eigen::Index>(t_diag.size())));
        }
        if (!t_scalar.empty()) {
            names.push_back("scalar_ms");
            cols.push_back(Eigen::Map<const Vector>(t_scalar.data(), static_cast<Eigen::Index>(t_scalar.size())));
        }
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "bench.csv"), names, cols);
    }
}

inline void cmd_local_law(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    const auto sizes = r.integer_list("sizes", {512, 2048});
    const auto n_seeds = r.integer("n_seeds", 20);
    const auto lambda1_law = detail::read_law(r, "lambda1_", 1.0, 2.0);
    locallaw::JEnsemble ens;
    const std::string kind = r.choice("j_kind", "haar", {"haar", "hadamard", "shift", "dependent"});
    if (kind == "haar") ens.kind = locallaw::JKind::HaarRotated;
    if (kind == "hadamard") ens.kind = locallaw::JKind::HadamardRotated;
    if (kind == "shift") ens.kind = locallaw::JKind::Shift;
    if (kind == "dependent") ens.kind = locallaw::JKind::DependentControl;
    if (ens.kind == locallaw::JKind::Shift) {
        ens.shift = r.real("shift", 0.5);
    } else {
        ens.law = detail::read_law(r, "j_", 0.0, 1.0);
    }
    if (ens.kind == locallaw::JKind::DependentControl) ens.noise_norm = r.real("noise_norm", 1e-3);
    r.reject_unknown();
    require(n_seeds >= 1, ErrorCode::ConfigError, "config key 'n_seeds' must be >= 1");
    for (const auto n : sizes) require(n >= 1, ErrorCode::ConfigError, "config key 'sizes' must hold positive values");
    if (ens.kind == locallaw::JKind::HadamardRotated) {
        for (const auto n : sizes)
            require(randmat::is_power_of_two(n), ErrorCode::ConfigError, "hadamard sizes must be powers of two");
    }

    struct Cell {
        Eigen::Index n;
        std::uint64_t seed;
        std::optional<locallaw::LocalLawReport> report;
        std::string excluded;
    };
    std::vector<Cell> cells;
    for (const auto n : sizes)
        for (std::int64_t i = 0; i < n_seeds; ++i) cells.push_back({n, ctx.seed + static_cast<std::uint64_t>(i), {}, {}});

    const auto t0 = detail::Clock::now();
    detail::parallel_for(cells.size(), ctx.threads, [&](std::size_t i) {
        Cell& c = cells[i];
        const auto inst = locallaw::draw_local_law_instance(lambda1_law, ens, c.n, c.seed);
        const auto implied = locallaw::implied_lambda2_diagonal(inst.lambda1, inst.j);
        try {
            c.report = locallaw::local_law_report(inst.lambda1, implied, freeprob::EmpiricalSpectrum(inst.j_spectrum), c.seed);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::OutOfDomain && e.code() != ErrorCode::NoBracket) throw;
            c.excluded = e.what();
        }
    });
    rec.wall_times_ms["cells"] = detail::ms_since(t0);

    json rows = json::array(), excluded = json::array(), medians = json::array();
    std::vector<double> col_n, col_seed, col_dev;
    for (const auto n : sizes) {
        std::vector<double> devs;
        for (const auto& c : cells) {
            if (c.n != n) continue;
            if (!c.report) {
                excluded.push_back({{"n", c.n}, {"seed", c.seed}, {"reason", c.excluded}});
                continue;
            }
            rows.push_back({{"n", c.n},
                            {"seed", c.seed},
                            {"l2_deviation", c.report->l2_deviation},
                            {"lambda2", c.report->lambda2_predicted},
                            {"chi", c.report->chi},
                            {"resolvent_norm", c.report->resolvent_norm}});
            devs.push_back(c.report->l2_deviation);
            col_n.push_back(static_cast<double>(c.n));
            col_seed.push_back(static_cast<double>(c.seed));
            col_dev.push_back(c.report->l2_deviation);
        }
        medians.push_back({{"n", n}, {"median_l2_deviation", devs.empty() ? json(nullptr) : json(median(devs))}});
    }
    rec.results["j_kind"] = kind;
    rec.results["cells"] = rows;
    rec.results["per_size"] = medians;
    rec.results["excluded"] = excluded;
    if (!ctx.out_dir.empty() && !col_n.empty()) {
        const auto m = static_cast<Eigen::Index>(col_n.size());
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "local_law.csv"), {"n", "seed", "l2_deviation"},
                              {Eigen::Map<const Vector>(col_n.data(), m), Eigen::Map<const Vector>(col_seed.data(), m),
                               Eigen::Map<const Vector>(col_dev.data(), m)});
    }
}

inline void cmd_freeness(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    const auto n = r.integer("n", 1024);
    const std::string kind = r.choice("kind", "haar", {"haar", "hadamard"});
    const auto law_a = detail::read_law(r, "a_", 0.0, 1.0);
    const auto law_b = detail::read_law(r, "b_", 0.0, 1.0);
    const int degree = static_cast<int>(r.integer("degree", 2));
    const int length = static_cast<int>(r.integer("length", 4));
    freeprob::FreenessOptions opt;
    opt.standardize = r.boolean("standardize", true);
    const std::string control = r.choice("control", "none", {"none", "commuting"});
    r.reject_unknown();
    require(n >= 2, ErrorCode::ConfigError, "config key 'n' must be >= 2");
    if (kind == "hadamard" && control == "none") {
        require(randmat::is_power_of_two(n), ErrorCode::ConfigError, "hadamard needs n a power of two");
    }

    const auto t0 = detail::Clock::now();
    const Matrix a = randmat::diag_from_law(n, law_a, ctx.seed, 0).asDiagonal();
    const Vector db = randmat::diag_from_law(n, law_b, ctx.seed, 1);
    Matrix b;
    if (control == "commuting") {
        b = db.asDiagonal();
    } else {
        const Matrix o = kind == "haar" ? randmat::haar_orthogonal(n, ctx.seed) : randmat::permuted_hadamard(n, ctx.seed);
        b = randmat::conjugate_diagonal(o, db);
    }
    rec.wall_times_ms["sample"] = detail::ms_since(t0);
    const auto t1 = detail::Clock::now();
    const auto rep = freeprob::freeness_score({{a}, {b}}, degree, length, opt);
    rec.wall_times_ms["score"] = detail::ms_since(t1);

    json words = json::array();
    for (const auto& w : rep.per_word) words.push_back({{"word", w.word}, {"trace", w.value}});
    rec.results["score"] = rep.max_word_trace;
    rec.results["degree_bound"] = rep.degree_bound;
    rec.results["length_bound"] = rep.length_bound;
    rec.results["words"] = words;
}

inline void cmd_transforms(io::ConfigReader& r, const RunContext& ctx, ExperimentRecord& rec) {
    const auto values = r.real_list("values", {});
    std::optional<freeprob::EmpiricalSpectrum> spec;
    if (values.empty()) {
        const auto n = r.integer("n", 512);
        const auto law = detail::read_law(r, "", 1.0, 2.0);
        require(n >= 1, ErrorCode::ConfigError, "config key 'n' must be positive");
        spec.emplace(randmat::diag_from_law(n, law, ctx.seed, 0));
    } else {
        spec.emplace(values);
    }
    const auto s_grid = r.real_list("s_grid", {-2.0, -1.0, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 1.0, 2.0});
    const auto omega_grid = r.real_list("omega_grid", {-0.5, -0.25, -0.1, -0.05});
    const int order = static_cast<int>(r.integer("order", 6));
    r.reject_unknown();
    require(order >= 1 && order <= freeprob::kMaxCumulantOrder, ErrorCode::ConfigError,
            "config key 'order' must be in [1, 12]");
    for (double s : s_grid) require(s != 0.0, ErrorCode::ConfigError, "config key 's_grid' must not contain 0");

    const auto t0 = detail::Clock::now();
    auto grid_json = [](const freeprob::TransformGrid& g) {
        json out = json::array();
        for (std::size_t i = 0; i < g.s_values.size(); ++i) {
            out.push_back({{"arg", g.s_values[i]},
                           {"value", g.converged_flags[i] ? json(g.outputs[i]) : json(nullptr)}});
        }
        return out;
    };
    const auto rg = freeprob::r_transform_grid(*spec, s_grid);
    rec.results["n"] = spec->size();
    rec.results["r_transform"] = grid_json(rg);
    const double scale = std::max(std::abs(spec->min()), std::abs(spec->max()));
    if (std::abs(spec->mean()) > 1e-14 * scale) {
        rec.results["s_transform"] = grid_json(freeprob::s_transform_grid(*spec, omega_grid));
    } else {
        rec.warnings.push_back("zero-mean spectrum: S-transform skipped");
    }
    if (spec->min() > 0.0) {
        const double q = spec->inverse().mean();
        rec.results["closure"] = {{"q", q}, {"residual", std::abs(q * freeprob::r_transform(*spec, -q) - 1.0)}};
        json rel = json::array();
        for (double s : s_grid) {
            try {
                rel.push_back({{"s", s}, {"residual", freeprob::r_inverse_relation_check(*spec, s)}});
            } catch (const Error& e) {
                rel.push_back({{"s", s}, {"residual", nullptr}, {"error", e.what()}});
            }
        }
        rec.results["inverse_relation"] = rel;
    }
    const auto moments = freeprob::spectral_moments(*spec, order);
    rec.results["moments"] = moments;
    rec.results["free_cumulants"] = freeprob::free_cumulants_from_moments(moments);
    rec.wall_times_ms["transforms"] = detail::ms_since(t0);

    if (!ctx.out_dir.empty()) {
        const auto m = static_cast<Eigen::Index>(rg.s_values.size());
        io::write_columns_csv(detail::csv_path(ctx.out_dir, "r_transform.csv"), {"s", "r"},
                              {Eigen::Map<const Vector>(rg.s_values.data(), m),
                               Eigen::Map<const Vector>(rg.outputs.data(), m)});
    }
}

inline void cmd_ingest_check(io::ConfigReader& r, const RunContext&, ExperimentRecord& rec) {
    const std::string path = r.string("path", "");
    const auto opt = detail::read_ingest_options(r);
    r.reject_unknown();
    if (path.empty()) fail(ErrorCode::ConfigError, "config key 'path' is required");
    const auto t0 = detail::Clock::now();
    auto d = io::ingest_csv(path, opt);
    rec.wall_times_ms["ingest"] = detail::ms_since(t0);
    for (auto& w : d.warnings) rec.warnings.push_back(w);
    const auto pos = (d.y.array() > 0.0).count();
    rec.results["n"] = d.X.rows();
    rec.results["k"] = d.X.cols();
    rec.results["positive_labels"] = pos;
    rec.results["negative_labels"] = d.y.size() - pos;
    rec.results["standardized"] = d.standardized;
    rec.results["dropped_columns"] = d.warnings.size();
    if (d.feature_names) rec.results["feature_names"] = *d.feature_names;
}

// ---------------------------------------------------------------------------

/// Runs one command. Input errors (unknown keys, bad values, unreadable data)
/// are thrown; numerical failures are caught and reported in `status`.
inline ExperimentRecord run_experiment(const std::string& command, const io::ConfigMap& config) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), command) == names.end()) {
        fail(ErrorCode::ConfigError, "unknown command '" + command + "'");
    }
    io::ConfigReader reader(config);
    RunContext ctx;
    ctx.seed = reader.seed("seed", 0);
    ctx.out_dir = reader.string("out_dir", "");
    ctx.threads = static_cast<int>(reader.integer("threads", 1));
    require(ctx.threads >= 1, ErrorCode::ConfigError, "config key 'threads' must be >= 1");
    if (!ctx.out_dir.empty()) std::filesystem::create_directories(ctx.out_dir);

    ExperimentRecord rec;
    rec.command = command;
    rec.seed = ctx.seed;
    const auto t0 = detail::Clock::now();
    try {
        if (command == "ep-fit") cmd_ep_fit(reader, ctx, rec);
        if (command == "approx-quality") cmd_approx_quality(reader, ctx, rec);
        if (command == "bench") cmd_bench(reader, ctx, rec);
        if (command == "local-law") cmd_local_law(reader, ctx, rec);
        if (command == "freeness") cmd_freeness(reader, ctx, rec);
        if (command == "transforms") cmd_transforms(reader, ctx, rec);
        if (command == "ingest-check") cmd_ingest_check(reader, ctx, rec);
    } catch (const Error& e) {
        if (is_input_error(e.code())) throw;
        rec.status = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    }
    rec.wall_times_ms["total_ms"] = detail::ms_since(t0);
    rec.config = reader.resolved();
    return rec;
}

inline ExperimentRecord replay(const json& record) {
    require(record.contains("command") && record["command"].is_string(), ErrorCode::ConfigError,
            "record has no command");
    return run_experiment(record["command"].get<std::string>(), io::config_from_json(record));
}

}  // namespace fpep::experiments
