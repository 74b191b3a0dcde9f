#pragma once

// Diagonal EP. One sweep:
//   1. Gaussian projection q ~ f1 p2: mean mu and marginal variances of w and z = Xw.
//   2. Site 2 from moment matching against q:   Lambda2 = 1/var - Lambda1, gamma2 = mean/var - gamma1.
//   3. Tilted moments of p1 under the site-2 cavity N(gamma2/Lambda2, 1/Lambda2).
//   4. Site 1 from moment matching against them: Lambda1 = 1/chi - Lambda2, gamma1 = eta/chi - gamma2.
// Steps 2 and 4 are damped in natural parameters and skip any coordinate whose
// target precision would not be positive.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fpep/core_model.hpp"
#include "fpep/error.hpp"
#include "fpep/linalg.hpp"
#include "fpep/sites.hpp"

namespace fpep {

struct SolverConfig {
    int max_iter = 200;
    double tol = 1e-8;
    double damping = 0.5;
    double min_variance = 1e-12;
};

inline void validate_config(const SolverConfig& cfg) {
    require(cfg.max_iter >= 0, ErrorCode::InvalidParameter, "max_iter must be >= 0");
    require(cfg.tol > 0.0, ErrorCode::InvalidParameter, "tol must be positive");
    require(cfg.damping > 0.0 && cfg.damping <= 1.0, ErrorCode::InvalidParameter, "damping must be in (0, 1]");
    require(cfg.min_variance > 0.0, ErrorCode::InvalidParameter, "min_variance must be positive");
}

/// Per-sweep counters. A negative-variance event is a coordinate (or scalar)
/// whose undamped update would give a nonpositive precision; it is skipped.
struct SweepStats {
    int negative_variance = 0;
};

struct SolveResult {
    PosteriorSummary summary;
    EpState state;
    std::vector<double> trace;  // moment change per sweep
    int negative_variance = 0;  // total skipped updates
};

struct Projection {
    Vector mu, sigma_diag, z_mean, z_var_diag;
};

/// Sigma = (Lambda1w + X^T Lambda1z X)^{-1}, mu = Sigma (gamma1w + X^T gamma1z).
/// One Cholesky factorization; the diagonals come from squared column norms
/// of L^{-1} and L^{-1} X^T. Cost O(K^3 + N K^2).
inline Projection gaussian_projection(const GlmProblem& p, const EpState& s) {
    const Eigen::Index K = p.K(), N = p.N();
    const Vector l1w = s.lambda1w.expand(K);
    const Vector l1z = s.lambda1z.expand(N);
    Matrix a = p.X.transpose() * l1z.asDiagonal() * p.X;
    a.diagonal() += l1w;
    const auto llt = checked_llt(a, "Lambda1w + X^T Lambda1z X");
    Matrix linv = Matrix::Identity(K, K);
    llt.matrixL().solveInPlace(linv);
    Projection out;
    out.sigma_diag = linv.colwise().squaredNorm().transpose();
    out.mu = llt.solve(s.gamma1w + p.X.transpose() * s.gamma1z);
    out.z_mean = p.X * out.mu;
    const Matrix lx = linv.triangularView<Eigen::Lower>() * p.X.transpose();
    out.z_var_diag = lx.colwise().squaredNorm().transpose();
    return out;
}

inline EpState init_state(const GlmProblem& p, Flavor flavor, const InitConfig& init = {}) {
    validate_problem(p);
    const Eigen::Index K = p.K(), N = p.N();
    EpState s;
    s.gamma1w = Vector::Zero(K);
    s.gamma2w = Vector::Zero(K);
    s.gamma1z = Vector::Zero(N);
    s.gamma2z = Vector::Zero(N);
    if (flavor == Flavor::Scalar) {
        s.lambda1w = init.lambda1_init;
        s.lambda1z = init.lambda1_init;
        s.lambda2w = init.lambda2_init;
        s.lambda2z = init.lambda2_init;
    } else {
        s.lambda1w = Vector(Vector::Constant(K, init.lambda1_init));
        s.lambda1z = Vector(Vector::Constant(N, init.lambda1_init));
        s.lambda2w = Vector(Vector::Constant(K, init.lambda2_init));
        s.lambda2z = Vector(Vector::Constant(N, init.lambda2_init));
    }
    const Projection proj = gaussian_projection(p, s);
    s.mu = proj.mu;
    s.sigma_diag = proj.sigma_diag;
    s.eta_w = proj.mu;
    s.chi_w = proj.sigma_diag;
    s.eta_z = proj.z_mean;
    s.chi_z = proj.z_var_diag;
    return s;
}

namespace detail {

inline sites::TiltedMoments tilted_w(const GlmProblem& p, double cav_mean, double cav_var) {
    if (const auto* g = std::get_if<GaussianPrior>(&p.prior)) {
        return sites::tilted_gaussian_prior({cav_mean, cav_var}, g->mean, g->var);
    }
    const auto& ss = std::get<SpikeSlabPrior>(p.prior);
    return sites::tilted_spike_slab({cav_mean, cav_var}, ss.rho, ss.slab_var);
}

inline sites::TiltedMoments tilted_z(const GlmProblem& p, Eigen::Index n, double cav_mean, double cav_var) {
    if (const auto* g = std::get_if<GaussianLikelihood>(&p.likelihood)) {
        return sites::tilted_gaussian_prior({cav_mean, cav_var}, p.y(n), g->noise_var);
    }
    return sites::tilted_probit({cav_mean, cav_var}, p.y(n), std::get<ProbitLikelihood>(p.likelihood).noise_var);
}

/// Damped moment-matching update of one diagonal site block against
/// (mean, var), given the other site's parameters. Returns skipped count.
inline int match_diagonal(const Vector& mean, const Vector& var, const Vector& lam_other, const Vector& gam_other,
                          Vector& lam, Vector& gam, const SolverConfig& cfg) {
    int skipped = 0;
    const double d = cfg.damping;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double v = std::max(var(i), cfg.min_variance);
        const double target_l = 1.0 / v - lam_other(i);
        if (!(target_l > 0.0) || !std::isfinite(target_l)) {
            ++skipped;
            continue;
        }
        const double target_g = mean(i) / v - gam_other(i);
        lam(i) = d * target_l + (1.0 - d) * lam(i);
        gam(i) = d * target_g + (1.0 - d) * gam(i);
    }
    return skipped;
}

/// Tilted moments of every w and z coordinate under the site-2 cavity.
inline void tilted_all(const GlmProblem& p, EpState& s) {
    const Eigen::Index K = p.K(), N = p.N();
    s.eta_w.resize(K);
    s.chi_w.resize(K);
    s.eta_z.resize(N);
    s.chi_z.resize(N);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double l2 = s.lambda2w.at(k);
        const auto t = tilted_w(p, s.gamma2w(k) / l2, 1.0 / l2);
        s.eta_w(k) = t.mean;
        s.chi_w(k) = t.var;
    }
    for (Eigen::Index n = 0; n < N; ++n) {
        const double l2 = s.lambda2z.at(n);
        const auto t = tilted_z(p, n, s.gamma2z(n) / l2, 1.0 / l2);
        s.eta_z(n) = t.mean;
        s.chi_z(n) = t.var;
    }
}

inline double moment_change(const EpState& a, const EpState& b) {
    double m = 0.0;
    m = std::max(m, (a.eta_w - b.eta_w).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.chi_w - b.chi_w).lpNorm<Eigen::Infinity>());
    if (a.eta_z.size() > 0) {
        m = std::max(m, (a.eta_z - b.eta_z).lpNorm<Eigen::Infinity>());
        m = std::max(m, (a.chi_z - b.chi_z).lpNorm<Eigen::Infinity>());
    }
    return m;
}

inline void check_state_finite(const EpState& s) {
    const bool ok = s.eta_w.allFinite() && s.chi_w.allFinite() && s.eta_z.allFinite() && s.chi_z.allFinite() &&
                    s.gamma1w.allFinite() && s.gamma1z.allFinite() && s.gamma2w.allFinite() && s.gamma2z.allFinite() &&
                    s.mu.allFinite();
    if (!ok) fail(ErrorCode::NonFinite, "EP state became non-finite");
}

}  // namespace detail

inline EpState ep_sweep_diagonal(const GlmProblem& p, const EpState& s, const SolverConfig& cfg,
                                 SweepStats* stats = nullptr) {
    require(s.flavor() == Flavor::Diagonal && !s.lambda1z.is_scalar() && !s.lambda2w.is_scalar() &&
                !s.lambda2z.is_scalar(),
            ErrorCode::InvalidParameter, "ep_sweep_diagonal needs a diagonal-flavor state");
    EpState next = s;
    const Projection proj = gaussian_projection(p, s);
    next.mu = proj.mu;
    next.sigma_diag = proj.sigma_diag;

    int skipped = 0;
    skipped += detail::match_diagonal(proj.mu, proj.sigma_diag, s.lambda1w.diag(), s.gamma1w, next.lambda2w.diag(),
                                      next.gamma2w, cfg);
    skipped += detail::match_diagonal(proj.z_mean, proj.z_var_diag, s.lambda1z.diag(), s.gamma1z,
                                      next.lambda2z.diag(), next.gamma2z, cfg);

    detail::tilted_all(p, next);

    skipped += detail::match_diagonal(next.eta_w, next.chi_w, next.lambda2w.diag(), next.gamma2w,
                                      next.lambda1w.diag(), next.gamma1w, cfg);
    skipped += detail::match_diagonal(next.eta_z, next.chi_z, next.lambda2z.diag(), next.gamma2z,
                                      next.lambda1z.diag(), next.gamma1z, cfg);
    detail::check_state_finite(next);
    if (stats) stats->negative_variance += skipped;
    return next;
}

/// Iterates sweeps from `start` until the moment change drops below cfg.tol.
template <class Sweep>
SolveResult run_sweeps(EpState start, const SolverConfig& cfg, Sweep&& sweep) {
    validate_config(cfg);
    SolveResult r;
    r.state = std::move(start);
    bool converged = false;
    double residual = 0.0;
    int it = 0;
    while (it < cfg.max_iter) {
        SweepStats st;
        EpState next = sweep(r.state, st);
        residual = detail::moment_change(next, r.state);
        r.state = std::move(next);
        r.negative_variance += st.negative_variance;
        r.trace.push_back(residual);
        ++it;
        if (residual < cfg.tol) {
            converged = true;
            break;
        }
    }
    r.summary = summarize(r.state, it, converged, residual);
    return r;
}

/// Diagonal EP from the default initialization. Non-convergence is reported
/// through summary.converged; the final state and trace are kept.
inline SolveResult solve_diagonal(const GlmProblem& p, const SolverConfig& cfg = {}, const InitConfig& init = {}) {
    validate_config(cfg);
    return run_sweeps(init_state(p, Flavor::Diagonal, init), cfg,
                      [&](const EpState& s, SweepStats& st) { return ep_sweep_diagonal(p, s, cfg, &st); });
}

/// Residuals of the inversion-free form of the fixed point:
///   gamma2w = (Lambda2w + X^T Lambda2z X) eta_w - X^T gamma2z   and   eta_z = X eta_w.
struct FixedPointResiduals {
    double gamma_form = 0.0;
    double z_consistency = 0.0;
};

inline FixedPointResiduals fixed_point_residuals(const GlmProblem& p, const EpState& s) {
    const Vector l2w = s.lambda2w.expand(p.K());
    const Vector l2z = s.lambda2z.expand(p.N());
    const Vector xe = p.X * s.eta_w;
    const Vector rhs = l2w.cwiseProduct(s.eta_w) + p.X.transpose() * (l2z.cwiseProduct(xe)) - p.X.transpose() * s.gamma2z;
    return {(s.gamma2w - rhs).lpNorm<Eigen::Infinity>(), (s.eta_z - xe).lpNorm<Eigen::Infinity>()};
}

}  // namespace fpep
