#pragma once

// Scalar EP: the site precisions are multiples of the identity, so with
// X = U S V^T computed once, Sigma = V diag(1 / (l1w + l1z t)) V^T and every
// sweep costs O(K^2 + N K).

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "fpep/core_model.hpp"
#include "fpep/error.hpp"
#include "fpep/linalg.hpp"
#include "fpep/solver_diag.hpp"

namespace fpep {

struct SvdCache {
    Vector singular_values;  // min(N, K), descending
    Matrix right_basis;      // V, K x K
    Matrix left_basis;       // U, N x N
    Vector t;                // squared singular values padded with zeros to length K
    Matrix right_sq;         // V .* V
    Matrix left_sq;          // (U .* U) restricted to the first min(N, K) columns

    Eigen::Index N() const noexcept { return left_basis.rows(); }
    Eigen::Index K() const noexcept { return right_basis.rows(); }
    Eigen::Index rank_bound() const noexcept { return singular_values.size(); }
};

/// Full SVD of X. One-time O(max(N, K)^3) cost.
inline SvdCache precompute_svd(const Matrix& x) {
    require(x.rows() >= 1 && x.cols() >= 1, ErrorCode::DimensionMismatch, "precompute_svd needs a non-empty matrix");
    require(x.allFinite(), ErrorCode::NonFinite, "X contains NaN or Inf");
    Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
    SvdCache c;
    c.singular_values = svd.singularValues();
    c.right_basis = svd.matrixV();
    c.left_basis = svd.matrixU();
    const Eigen::Index k = x.cols();
    const Eigen::Index r = c.singular_values.size();
    c.t = Vector::Zero(k);
    c.t.head(r) = c.singular_values.array().square().matrix();
    c.right_sq = c.right_basis.cwiseAbs2();
    c.left_sq = c.left_basis.leftCols(r).cwiseAbs2();
    return c;
}

struct ScalarProjection {
    Vector mu;
    double chi_w = 0.0;  // Tr(Sigma)
    double chi_z = 0.0;  // Tr(X Sigma X^T)
    Vector z_mean;       // X mu
};

namespace detail {

inline Vector scalar_denominators(const SvdCache& c, double l1w, double l1z) {
    Vector d = (l1w + l1z * c.t.array()).matrix();
    for (Eigen::Index k = 0; k < d.size(); ++k) {
        if (!(d(k) > 0.0)) fail(ErrorCode::SingularMatrix, "l1w + l1z t_k is not positive");
    }
    return d;
}

inline void spectrum_traces(const Vector& t, double l1w, double l1z, double alpha, double& chi_w, double& chi_z) {
    const double k = static_cast<double>(t.size());
    long double sw = 0.0L, sz = 0.0L;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        const double d = l1w + l1z * t(i);
        if (!(d > 0.0)) fail(ErrorCode::SingularMatrix, "l1w + l1z t_k is not positive");
        sw += 1.0L / d;
        sz += static_cast<long double>(t(i)) / d;
    }
    chi_w = static_cast<double>(sw / k);
    chi_z = static_cast<double>(sz / (alpha * k));
}

}  // namespace detail

/// mu = Sigma (gamma1w + X^T gamma1z) and the normalized traces of Sigma and
/// X Sigma X^T, using only the cached factors (no factorization, O(K^2 + N^2)).
inline ScalarProjection scalar_projection(const SvdCache& c, double l1w, double l1z, const Vector& gamma1w,
                                          const Vector& gamma1z, double alpha) {
    require(gamma1w.size() == c.K() && gamma1z.size() == c.N(), ErrorCode::DimensionMismatch, "gamma lengths");
    require(std::abs(alpha - static_cast<double>(c.N()) / static_cast<double>(c.K())) <= 1e-12 * alpha,
            ErrorCode::InvalidParameter, "alpha does not equal N/K");
    const Vector d = detail::scalar_denominators(c, l1w, l1z);
    const Eigen::Index r = c.rank_bound();
    ScalarProjection out;
    detail::spectrum_traces(c.t, l1w, l1z, alpha, out.chi_w, out.chi_z);
    // V^T (gamma1w + X^T gamma1z) = V^T gamma1w + S^T U^T gamma1z
    Vector coef = c.right_basis.transpose() * gamma1w;
    coef.head(r) += c.singular_values.cwiseProduct(c.left_basis.leftCols(r).transpose() * gamma1z);
    coef = coef.cwiseQuotient(d);
    out.mu = c.right_basis * coef;
    out.z_mean = c.left_basis.leftCols(r) * c.singular_values.cwiseProduct(coef.head(r));
    return out;
}

/// Marginal variances of the scalar projection: diag(Sigma) and
/// diag(X Sigma X^T), O(K^2 + N min(N, K)).
inline void scalar_projection_diagonals(const SvdCache& c, double l1w, double l1z, Vector& sigma_diag,
                                        Vector& z_var_diag) {
    const Vector d = detail::scalar_denominators(c, l1w, l1z);
    sigma_diag = c.right_sq * d.cwiseInverse();
    const Eigen::Index r = c.rank_bound();
    const Vector zd = c.t.head(r).cwiseQuotient(d.head(r));
    z_var_diag = c.left_sq * zd;
}

struct SpectrumLambda2 {
    double lambda2w = 0.0, lambda2z = 0.0, chi_w = 0.0, chi_z = 0.0;
    double consistency_residual = 0.0;  // |l2w chi_w - alpha (1 - l2z chi_z)|
};

/// lambda2 from the spectrum of X^T X alone: chi from the trace sums, then
/// lambda2_s = 1/chi_s - lambda1_s. The identity l2w chi_w = alpha (1 - l2z chi_z)
/// holds algebraically; its residual is checked against 1e-10 (relative).
inline SpectrumLambda2 lambda2_from_spectrum(const Vector& t, double l1w, double l1z, double alpha) {
    require(t.size() >= 1, ErrorCode::InvalidParameter, "empty spectrum");
    require(alpha > 0.0, ErrorCode::InvalidParameter, "alpha must be positive");
    SpectrumLambda2 out;
    detail::spectrum_traces(t, l1w, l1z, alpha, out.chi_w, out.chi_z);
    if (!(out.chi_w > 0.0) || !(out.chi_z > 0.0)) fail(ErrorCode::SingularMatrix, "degenerate trace (zero spectrum)");
    out.lambda2w = 1.0 / out.chi_w - l1w;
    out.lambda2z = 1.0 / out.chi_z - l1z;
    out.consistency_residual = std::abs(out.lambda2w * out.chi_w - alpha * (1.0 - out.lambda2z * out.chi_z));
    const double scale = std::max({1.0, std::abs(l1w * out.chi_w), alpha * std::abs(l1z * out.chi_z)});
    if (!(out.consistency_residual <= 1e-10 * scale)) {
        fail(ErrorCode::NonFinite, "trace consistency identity violated beyond rounding");
    }
    return out;
}

namespace detail {

/// Damped scalar moment matching. Returns 1 if the update was skipped.
inline int match_scalar(const Vector& mean, double avg_var, double lam_other, const Vector& gam_other, double& lam,
                        Vector& gam, const SolverConfig& cfg) {
    const double v = std::max(avg_var, cfg.min_variance);
    const double target_l = 1.0 / v - lam_other;
    if (!(target_l > 0.0) || !std::isfinite(target_l)) return 1;
    const double d = cfg.damping;
    lam = d * target_l + (1.0 - d) * lam;
    gam = d * (mean / v - gam_other) + (1.0 - d) * gam;
    return 0;
}

}  // namespace detail

inline EpState init_state_scalar(const GlmProblem& p, const SvdCache& c, const InitConfig& init = {}) {
    validate_problem(p);
    EpState s;
    s.gamma1w = Vector::Zero(p.K());
    s.gamma2w = Vector::Zero(p.K());
    s.gamma1z = Vector::Zero(p.N());
    s.gamma2z = Vector::Zero(p.N());
    s.lambda1w = init.lambda1_init;
    s.lambda1z = init.lambda1_init;
    s.lambda2w = init.lambda2_init;
    s.lambda2z = init.lambda2_init;
    const auto proj = scalar_projection(c, init.lambda1_init, init.lambda1_init, s.gamma1w, s.gamma1z, p.alpha());
    s.mu = proj.mu;
    s.eta_w = proj.mu;
    s.eta_z = proj.z_mean;
    scalar_projection_diagonals(c, init.lambda1_init, init.lambda1_init, s.sigma_diag, s.chi_z);
    s.chi_w = s.sigma_diag;
    return s;
}

inline EpState ep_sweep_scalar(const GlmProblem& p, const EpState& s, const SvdCache& c, const SolverConfig& cfg,
                               SweepStats* stats = nullptr) {
    require(s.lambda1w.is_scalar() && s.lambda1z.is_scalar() && s.lambda2w.is_scalar() && s.lambda2z.is_scalar(),
            ErrorCode::InvalidParameter, "ep_sweep_scalar needs a scalar-flavor state");
    EpState next = s;
    const double l1w = s.lambda1w.scalar(), l1z = s.lambda1z.scalar();
    const auto proj = scalar_projection(c, l1w, l1z, s.gamma1w, s.gamma1z, p.alpha());
    next.mu = proj.mu;
    Vector z_var_unused;
    scalar_projection_diagonals(c, l1w, l1z, next.sigma_diag, z_var_unused);

    int skipped = 0;
    skipped += detail::match_scalar(proj.mu, proj.chi_w, l1w, s.gamma1w, next.lambda2w.scalar(), next.gamma2w, cfg);
    skipped += detail::match_scalar(proj.z_mean, proj.chi_z, l1z, s.gamma1z, next.lambda2z.scalar(), next.gamma2z, cfg);

    detail::tilted_all(p, next);

    skipped += detail::match_scalar(next.eta_w, next.chi_w.mean(), next.lambda2w.scalar(), next.gamma2w,
                                    next.lambda1w.scalar(), next.gamma1w, cfg);
    skipped += detail::match_scalar(next.eta_z, next.chi_z.mean(), next.lambda2z.scalar(), next.gamma2z,
                                    next.lambda1z.scalar(), next.gamma1z, cfg);
    detail::check_state_finite(next);
    if (stats) stats->negative_variance += skipped;
    return next;
}

inline SolveResult solve_scalar(const GlmProblem& p, const SvdCache& c, const SolverConfig& cfg = {},
                                const InitConfig& init = {}) {
    validate_config(cfg);
    return run_sweeps(init_state_scalar(p, c, init), cfg,
                      [&](const EpState& s, SweepStats& st) { return ep_sweep_scalar(p, s, c, cfg, &st); });
}

inline SolveResult solve_scalar(const GlmProblem& p, const SolverConfig& cfg = {}, const InitConfig& init = {}) {
    validate_problem(p);
    return solve_scalar(p, precompute_svd(p.X), cfg, init);
}

}  // namespace fpep
