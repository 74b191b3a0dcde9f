#pragma once

// Finite-n checks of the resolvent local law and of the identities that tie
// diagonal-EP site precisions to scalar ones.
//
// Throughout, for a diagonal Lambda1 and a symmetric J the implied diagonal
// precisions are Lambda2_ii = 1/((Lambda1 + J)^{-1})_ii - Lambda1_ii and the
// scalar prediction is lambda2 = R_J(-chi) with chi = phi((Lambda1 + J)^{-1}).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fpep/error.hpp"
#include "fpep/freeprob.hpp"
#include "fpep/linalg.hpp"
#include "fpep/randmat.hpp"
#include "fpep/rng.hpp"

namespace fpep::locallaw {

struct ImpliedLambda2 {
    Vector lambda2_diag;
    double chi = 0.0;
};

inline ImpliedLambda2 implied_lambda2_diagonal(const Vector& lambda1, const Matrix& j) {
    require(j.rows() == j.cols() && j.rows() == lambda1.size(), ErrorCode::DimensionMismatch,
            "Lambda1 and J dimensions differ");
    Matrix m = j;
    m.diagonal() += lambda1;
    const Vector r = inverse_diagonal(m);
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (r(i) == 0.0) fail(ErrorCode::ZeroDiagonal, "resolvent diagonal entry is zero");
    }
    ImpliedLambda2 out;
    out.lambda2_diag = r.cwiseInverse() - lambda1;
    out.chi = r.mean();
    return out;
}

struct LocalLawReport {
    Eigen::Index n = 0;
    std::uint64_t seed = 0;
    double lambda2_predicted = 0.0;
    Vector lambda2_diagonal;
    double l2_deviation = 0.0;  // (1/n) sum (Lambda2_ii - lambda2)^2
    double chi = 0.0;
    double resolvent_norm = 0.0;  // ||(Lambda1 + lambda2 I)^{-1}||_2, inf if not positive definite
};

/// Assembles a report from an implied diagonal and the spectrum of J.
inline LocalLawReport local_law_report(const Vector& lambda1, const ImpliedLambda2& implied,
                                       const freeprob::EmpiricalSpectrum& j_spec, std::uint64_t seed = 0) {
    LocalLawReport r;
    r.n = lambda1.size();
    r.seed = seed;
    r.chi = implied.chi;
    r.lambda2_predicted = freeprob::r_transform(j_spec, -implied.chi);
    r.lambda2_diagonal = implied.lambda2_diag;
    r.l2_deviation = mean_square_deviation(implied.lambda2_diag, r.lambda2_predicted);
    const double lo = (lambda1.array() + r.lambda2_predicted).minCoeff();
    r.resolvent_norm = lo > 0.0 ? 1.0 / lo : std::numeric_limits<double>::infinity();
    return r;
}

enum class JKind {
    HaarRotated,      // O diag(d) O^T, O Haar, d iid from law
    HadamardRotated,  // same with a randomly permuted Hadamard O
    Shift,            // shift * I
    DependentControl, // Lambda1 + noise_norm * O diag(d) O^T / max|d|; not free of Lambda1
};

struct JEnsemble {
    JKind kind = JKind::HaarRotated;
    randmat::DiagLaw law = randmat::Uniform{0.0, 1.0};
    double shift = 0.0;
    double noise_norm = 1e-3;
};

inline std::string jkind_name(JKind k) {
    switch (k) {
    case JKind::HaarRotated: return "haar";
    case JKind::HadamardRotated: return "hadamard";
    case JKind::Shift: return "shift";
    case JKind::DependentControl: return "dependent";
    }
    return "unknown";
}

struct LocalLawInstance {
    Vector lambda1;
    Matrix j;
    Vector j_spectrum;
};

/// Draws (Lambda1, J) for one (n, seed) cell. Lambda1 uses substream 0 of the
/// diagonal-law stream, the spectrum of J substream 1.
inline LocalLawInstance draw_local_law_instance(const randmat::DiagLaw& lambda1_law, const JEnsemble& ens,
                                                Eigen::Index n, std::uint64_t seed) {
    LocalLawInstance inst;
    inst.lambda1 = randmat::diag_from_law(n, lambda1_law, seed, 0);
    switch (ens.kind) {
    case JKind::Shift:
        inst.j = ens.shift * Matrix::Identity(n, n);
        inst.j_spectrum = Vector::Constant(n, ens.shift);
        break;
    case JKind::HaarRotated:
    case JKind::HadamardRotated: {
        const Vector d = randmat::diag_from_law(n, ens.law, seed, 1);
        const Matrix o = ens.kind == JKind::HaarRotated ? randmat::haar_orthogonal(n, seed) : randmat::permuted_hadamard(n, seed);
        inst.j = randmat::conjugate_diagonal(o, d);
        inst.j_spectrum = d;
        break;
    }
    case JKind::DependentControl: {
        const Vector d = randmat::diag_from_law(n, ens.law, seed, 1);
        const double scale = ens.noise_norm / std::max(d.cwiseAbs().maxCoeff(), 1e-300);
        inst.j = randmat::conjugate_diagonal(randmat::haar_orthogonal(n, seed), d * scale);
        inst.j.diagonal() += inst.lambda1;
        inst.j_spectrum = symmetric_eigenvalues(inst.j);
        break;
    }
    }
    return inst;
}

struct ExcludedRun {
    Eigen::Index n = 0;
    std::uint64_t seed = 0;
    std::string reason;
};

struct LocalLawExperiment {
    std::vector<LocalLawReport> reports;
    std::vector<ExcludedRun> excluded;
};

inline LocalLawExperiment local_law_experiment(const randmat::DiagLaw& lambda1_law, const JEnsemble& ens,
                                               const std::vector<Eigen::Index>& sizes,
                                               const std::vector<std::uint64_t>& seeds) {
    randmat::validate_law(lambda1_law);
    if (ens.kind != JKind::Shift) randmat::validate_law(ens.law);
    LocalLawExperiment out;
    for (const Eigen::Index n : sizes) {
        require(n >= 1, ErrorCode::InvalidParameter, "sizes must be positive");
        for (const std::uint64_t seed : seeds) {
            const LocalLawInstance inst = draw_local_law_instance(lambda1_law, ens, n, seed);
            const ImpliedLambda2 implied = implied_lambda2_diagonal(inst.lambda1, inst.j);
            try {
                out.reports.push_back(
                    local_law_report(inst.lambda1, implied, freeprob::EmpiricalSpectrum(inst.j_spectrum), seed));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::OutOfDomain && e.code() != ErrorCode::NoBracket) throw;
                out.excluded.push_back({n, seed, e.what()});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Neumann decomposition of the resolvent difference

struct DecompositionReport {
    Eigen::Index n = 0;
    int truncation_order = 0;
    double spectral_radius_EJEY = 0.0;
    double reconstruction_error = 0.0;  // +inf when the series diverges
    bool series_diverges = false;
    double chi = 0.0;      // self-consistent chi = phi(Y^{-1})
    double lambda2 = 0.0;  // B_J(chi) + 1/chi, Y = Lambda1 + lambda2 I
    double chi_gap = 0.0;  // |chi - phi((Lambda1 + J)^{-1})|, a finite-n effect
    double trace_EJ = 0.0;
    double trace_EY = 0.0;
    std::vector<int> orders;           // truncation orders at which the error was recorded
    std::vector<double> errors;        // reconstruction error at each order
};

namespace detail {

/// lambda2 solving lambda2 = R_J(-chi(lambda2)), chi(lambda2) = mean 1/(Lambda1_i + lambda2).
inline double self_consistent_lambda2(const Vector& lambda1, const freeprob::EmpiricalSpectrum& j_spec) {
    const double floor = -lambda1.minCoeff();
    auto chi_of = [&](double l2) { return (lambda1.array() + l2).inverse().mean(); };
    auto f = [&](double l2) { return freeprob::r_transform(j_spec, -chi_of(l2)) - l2; };
    double lo = floor + 1e-9 * std::max(1.0, std::abs(floor));
    double flo = f(lo);
    require(flo > 0.0, ErrorCode::NoBracket, "Lambda1 + J is not positive enough for a self-consistent lambda2");
    double step = std::max(1.0, std::abs(j_spec.mean()));
    double hi = lo + step;
    int guard = 0;
    while (f(hi) > 0.0) {
        lo = hi;
        step *= 2.0;
        hi = lo + step;
        if (++guard > 200) fail(ErrorCode::NoBracket, "self-consistent lambda2 not bracketed");
    }
    for (int it = 0; it < 200 && hi - lo > 2.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Builds E_M = I - (1/chi)(M - B_M(chi) I)^{-1} for M in {J, Y}, with
/// Y = Lambda1 + lambda2 I and (chi, lambda2) solved self-consistently so that
/// chi = phi(Y^{-1}) and lambda2 = B_J(chi) + 1/chi. Then B_Y(chi) = 0 and
///   D = (Lambda1 + J)^{-1} - Y^{-1} = chi (A + B - E_J)
/// with A = (I - E_Y) sum_{k>=1} (E_J E_Y)^k and B = (I - E_J) sum_{k>=1} (E_Y E_J)^k.
/// The sums are truncated at `truncation` terms.
inline DecompositionReport neumann_decomposition_check(const Vector& lambda1, const Matrix& j, int truncation = 64) {
    const Eigen::Index n = lambda1.size();
    require(j.rows() == n && j.cols() == n, ErrorCode::DimensionMismatch, "Lambda1 and J dimensions differ");
    require(truncation >= 1, ErrorCode::InvalidParameter, "truncation must be >= 1");
    const freeprob::EmpiricalSpectrum j_spec = freeprob::EmpiricalSpectrum::of_symmetric(j);
    const freeprob::EmpiricalSpectrum l_spec{lambda1};
    if (j_spec.is_point_mass()) fail(ErrorCode::DegenerateSpectrum, "J has a point spectrum; B_J is not defined on a branch");
    if (l_spec.is_point_mass()) fail(ErrorCode::DegenerateSpectrum, "Lambda1 is a multiple of I; B_Y is not defined on a branch");

    DecompositionReport rep;
    rep.n = n;
    rep.truncation_order = truncation;
    rep.lambda2 = detail::self_consistent_lambda2(lambda1, j_spec);
    const Vector y = lambda1.array() + rep.lambda2;
    rep.chi = y.cwiseInverse().mean();
    const double bj = freeprob::inverse_stieltjes(j_spec, rep.chi).z;

    Matrix jm = j;
    jm.diagonal() += lambda1;
    const Matrix resolvent = checked_llt(jm, "Lambda1 + J").solve(Matrix::Identity(n, n));
    rep.chi_gap = std::abs(rep.chi - normalized_trace(resolvent));

    Matrix shifted = j;
    shifted.diagonal().array() -= bj;
    Matrix ej = Matrix::Identity(n, n) - checked_llt(shifted, "J - B_J(chi) I").solve(Matrix::Identity(n, n)) / rep.chi;
    ej = 0.5 * (ej + ej.transpose());
    const Vector ey = Vector::Ones(n) - y.cwiseInverse() / rep.chi;  // E_Y is diagonal
    rep.trace_EJ = normalized_trace(ej);
    rep.trace_EY = ey.mean();

    const Matrix ejey = ej * ey.asDiagonal();
    rep.spectral_radius_EJEY = spectral_radius(ejey);

    const Matrix d = resolvent - Matrix(y.cwiseInverse().asDiagonal());
    const Matrix eyej = ey.asDiagonal() * ej;
    const Matrix i_minus_ey = Matrix(( Vector::Ones(n) - ey).asDiagonal());
    const Matrix i_minus_ej = Matrix::Identity(n, n) - ej;

    // Running sums S_A = sum (E_J E_Y)^k, S_B = sum (E_Y E_J)^k. Since
    // (E_Y E_J)^k = E_Y (E_J E_Y)^{k-1} E_J, both follow from one power sequence.
    Matrix pa = ejey;  // (E_J E_Y)^k
    Matrix pb = eyej;  // (E_Y E_J)^k
    Matrix sa = Matrix::Zero(n, n), sb = Matrix::Zero(n, n);
    double err = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= truncation; ++k) {
        sa += pa;
        sb += pb;
        const bool record = (k & (k - 1)) == 0 || k == truncation;
        if (record) {
            const Matrix recon = rep.chi * (i_minus_ey * sa + i_minus_ej * sb - ej);
            err = (d - recon).cwiseAbs().maxCoeff();
            if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
            rep.orders.push_back(k);
            rep.errors.push_back(err);
        }
        if (k < truncation) {
            pa = pa * ejey;
            pb = pb * eyej;
        }
    }
    rep.series_diverges = !(rep.spectral_radius_EJEY < 1.0);
    rep.reconstruction_error = rep.series_diverges ? std::numeric_limits<double>::infinity() : err;
    return rep;
}

/// E_Y = I - (1/chi) Y^{-1} for a diagonal Y, with chi = phi(Y^{-1}).
inline Matrix centered_inverse(const Vector& y) {
    const Vector inv = y.cwiseInverse();
    const double chi = inv.mean();
    return Matrix((Vector::Ones(y.size()) - inv / chi).asDiagonal());
}

struct RademacherTraces {
    double mean_abs_trace_EZ = 0.0;    // mean over seeds of |phi(E Z)|
    double mean_abs_trace_EZE = 0.0;   // mean over seeds of |phi(E Z E)|
};

inline RademacherTraces rademacher_trace_check(const Matrix& e, const std::vector<std::uint64_t>& seeds) {
    require(e.rows() == e.cols(), ErrorCode::DimensionMismatch, "E must be square");
    require(e.allFinite(), ErrorCode::NonFinite, "E contains NaN or Inf");
    RademacherTraces out;
    if (seeds.empty()) return out;
    const Eigen::Index n = e.rows();
    const Vector diag_e = e.diagonal();
    const Vector diag_e2 = e.cwiseProduct(e.transpose()).colwise().sum().transpose();  // diag(E E)
    for (const std::uint64_t seed : seeds) {
        const Vector z = randmat::rademacher_diag(n, seed);
        out.mean_abs_trace_EZ += std::abs(diag_e.dot(z) / static_cast<double>(n));
        out.mean_abs_trace_EZE += std::abs(diag_e2.dot(z) / static_cast<double>(n));
    }
    out.mean_abs_trace_EZ /= static_cast<double>(seeds.size());
    out.mean_abs_trace_EZE /= static_cast<double>(seeds.size());
    return out;
}

// ---------------------------------------------------------------------------
// Diagonal versus scalar site precisions for the GLM projection

struct ScalarLambda2Check {
    double lambda2w = 0.0, lambda2z = 0.0;
    double residual_w = 0.0, residual_z = 0.0;  // mean square deviation of the implied diagonals
    double trace_identity_residual = 0.0;                 // |l2w chi_w - alpha (1 - l2z chi_z)|
    double chi_w = 0.0, chi_z = 0.0, chi_tilde_z = 0.0;
    Vector lambda2w_diag, lambda2z_diag;
    double resolvent_norm_w = 0.0, resolvent_norm_z = 0.0;
};

namespace detail {

/// Spectrum of B^T B (size cols) from the smaller Gram matrix, zero padded.
inline freeprob::EmpiricalSpectrum gram_spectrum(const Matrix& b) {
    const Eigen::Index rows = b.rows(), cols = b.cols();
    Vector ev(cols);
    ev.setZero();
    if (rows >= cols) {
        ev = symmetric_eigenvalues(b.transpose() * b);
    } else {
        const Vector small = symmetric_eigenvalues(b * b.transpose());
        ev.tail(rows) = small;
    }
    return freeprob::EmpiricalSpectrum(ev.cwiseMax(0.0).eval());
}

}  // namespace detail

inline ScalarLambda2Check scalar_lambda2_check(const Vector& lambda1w, const Vector& lambda1z, const Matrix& x) {
    const Eigen::Index K = x.cols(), N = x.rows();
    require(lambda1w.size() == K && lambda1z.size() == N, ErrorCode::DimensionMismatch, "Lambda1 lengths vs X");
    require(lambda1w.minCoeff() > 0.0 && lambda1z.minCoeff() > 0.0, ErrorCode::InvalidParameter,
            "Lambda1 diagonals must be positive");
    require(x.allFinite(), ErrorCode::NonFinite, "X contains NaN or Inf");
    const double alpha = static_cast<double>(N) / static_cast<double>(K);

    Matrix a = x.transpose() * lambda1z.asDiagonal() * x;
    a.diagonal() += lambda1w;
    const auto llt = checked_llt(a, "Lambda1w + X^T Lambda1z X");
    Matrix linv = Matrix::Identity(K, K);
    llt.matrixL().solveInPlace(linv);
    const Vector sigma_diag = linv.colwise().squaredNorm().transpose();
    const Matrix lx = linv.triangularView<Eigen::Lower>() * x.transpose();
    const Vector xsx_diag = lx.colwise().squaredNorm().transpose();

    ScalarLambda2Check out;
    out.chi_w = sigma_diag.mean();
    out.chi_z = xsx_diag.mean();
    out.lambda2w_diag = sigma_diag.cwiseInverse() - lambda1w;
    out.lambda2z_diag = xsx_diag.cwiseInverse() - lambda1z;
    // phi of (Lambda1z^{-1} + X Lambda1w^{-1} X^T)^{-1}, diagonal via Woodbury
    out.chi_tilde_z = (lambda1z - lambda1z.cwiseAbs2().cwiseProduct(xsx_diag)).mean();

    const Vector sqrt_l1z = lambda1z.cwiseSqrt();
    const Vector inv_sqrt_l1w = lambda1w.cwiseInverse().cwiseSqrt();
    const auto spec_w = detail::gram_spectrum(sqrt_l1z.asDiagonal() * x);                    // X^T L1z X
    const auto spec_z = detail::gram_spectrum(inv_sqrt_l1w.asDiagonal() * x.transpose());    // X L1w^{-1} X^T
    out.lambda2w = freeprob::r_transform(spec_w, -out.chi_w);
    out.lambda2z = 1.0 / freeprob::r_transform(spec_z, -out.chi_tilde_z);

    out.residual_w = mean_square_deviation(out.lambda2w_diag, out.lambda2w);
    out.residual_z = mean_square_deviation(out.lambda2z_diag, out.lambda2z);
    out.trace_identity_residual = std::abs(out.lambda2w * out.chi_w - alpha * (1.0 - out.lambda2z * out.chi_z));
    const double lw = (lambda1w.array() + out.lambda2w).minCoeff();
    const double lz = (lambda1z.array() + out.lambda2z).minCoeff();
    out.resolvent_norm_w = lw > 0.0 ? 1.0 / lw : std::numeric_limits<double>::infinity();
    out.resolvent_norm_z = lz > 0.0 ? 1.0 / lz : std::numeric_limits<double>::infinity();
    return out;
}

struct EffectiveScalars {
    double lambda1w_eff = 0.0, lambda1z_eff = 0.0;
    double chi_w = 0.0, chi_z = 0.0;
    double lambda2w = 0.0, lambda2z = 0.0;
    double lambda1w_tilde = 0.0, lambda1z_tilde = 0.0;  // second parametrization
    double consistency_residual = 0.0;                  // max |tilde - eff|
    double trace_identity_residual = 0.0;
    int iterations = 0;
};

/// Effective scalar Lambda1 values for which scalar EP reproduces the
/// diagonal traces: a damped fixed point of
///   chi_s = trace sums over t at (l1w, l1z),  lambda2_s = 1/chi_s - l1s,
///   l1w = R_{Lambda1w}(-chi_w),  l1z = 1 / S_{Lambda1z}(-lambda2w chi_w / alpha).
/// The second parametrization l1z~ = R_{Lambda1z}(-chi_z),
/// l1w~ = S_{Lambda1w^{-1}}(-alpha chi~_z / lambda2z) with chi~_z = lambda2z (1 - lambda2z chi_z)
/// is evaluated at the fixed point as a cross-check.
inline EffectiveScalars effective_scalars(const freeprob::EmpiricalSpectrum& lambda1w_spec,
                                    const freeprob::EmpiricalSpectrum& lambda1z_spec, const Vector& t, double alpha,
                                    double tol = 1e-12, int max_iter = 10000) {
    require(lambda1w_spec.min() > 0.0 && lambda1z_spec.min() > 0.0, ErrorCode::InvalidParameter,
            "Lambda1 spectra must be positive");
    require(t.size() >= 1 && t.minCoeff() >= 0.0, ErrorCode::InvalidParameter, "t must be nonnegative");
    require(alpha > 0.0 && tol > 0.0, ErrorCode::InvalidParameter, "alpha and tol must be positive");
    const double k = static_cast<double>(t.size());
    auto traces = [&](double l1w, double l1z, double& cw, double& cz) {
        long double sw = 0.0L, sz = 0.0L;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const double d = l1w + l1z * t(i);
            if (!(d > 0.0)) fail(ErrorCode::OutOfDomain, "nonpositive denominator in trace sums");
            sw += 1.0L / d;
            sz += static_cast<long double>(t(i)) / d;
        }
        cw = static_cast<double>(sw / k);
        cz = static_cast<double>(sz / (alpha * k));
    };

    EffectiveScalars r;
    double l1w = lambda1w_spec.mean(), l1z = lambda1z_spec.mean();
    bool converged = false;
    for (int it = 1; it <= max_iter; ++it) {
        double cw, cz;
        traces(l1w, l1z, cw, cz);
        const double l2w = 1.0 / cw - l1w;
        const double new_w = freeprob::r_transform(lambda1w_spec, -cw);
        const double new_z = 1.0 / freeprob::s_transform(lambda1z_spec, -l2w * cw / alpha);
        const double step = std::max(std::abs(new_w - l1w), std::abs(new_z - l1z));
        l1w = 0.5 * new_w + 0.5 * l1w;
        l1z = 0.5 * new_z + 0.5 * l1z;
        r.iterations = it;
        if (step < tol) {
            converged = true;
            break;
        }
    }
    if (!converged) fail(ErrorCode::NotConverged, "effective scalar Lambda1 iteration did not converge");
    r.lambda1w_eff = l1w;
    r.lambda1z_eff = l1z;
    traces(l1w, l1z, r.chi_w, r.chi_z);
    r.lambda2w = 1.0 / r.chi_w - l1w;
    r.lambda2z = 1.0 / r.chi_z - l1z;
    r.trace_identity_residual = std::abs(r.lambda2w * r.chi_w - alpha * (1.0 - r.lambda2z * r.chi_z));

    const double chi_tilde_z = r.lambda2z * (1.0 - r.lambda2z * r.chi_z);
    r.lambda1z_tilde = freeprob::r_transform(lambda1z_spec, -r.chi_z);
    r.lambda1w_tilde = freeprob::s_transform(lambda1w_spec.inverse(), -alpha * chi_tilde_z / r.lambda2z);
    r.consistency_residual = std::max(std::abs(r.lambda1w_tilde - l1w), std::abs(r.lambda1z_tilde - l1z));
    return r;
}

/// Max entrywise residual of
///   diag (Lambda1z^{-1} + X Lambda1w^{-1} X^T)^{-1} = 1 / (Lambda1z^{-1} + Lambda2z^{-1})
///                                                 = Lambda1z - Lambda1z^2 diag(X Sigma X^T)
/// and of (Lambda1z^{-1} + l^{-1} I)^{-1} = l I - l^2 (Lambda1z + l I)^{-1} at l = mean(Lambda2z).
inline double woodbury_identity_check(const Vector& lambda1w, const Vector& lambda1z, const Matrix& x) {
    const Eigen::Index K = x.cols(), N = x.rows();
    require(lambda1w.size() == K && lambda1z.size() == N, ErrorCode::DimensionMismatch, "Lambda1 lengths vs X");
    require(lambda1w.minCoeff() > 0.0 && lambda1z.minCoeff() > 0.0, ErrorCode::InvalidParameter,
            "Lambda1 diagonals must be positive");

    Matrix a = x.transpose() * lambda1z.asDiagonal() * x;
    a.diagonal() += lambda1w;
    const Matrix sigma = checked_llt(a, "Lambda1w + X^T Lambda1z X").solve(Matrix::Identity(K, K));
    const Vector xsx = (x * sigma * x.transpose()).diagonal();
    for (Eigen::Index n = 0; n < N; ++n) {
        if (!(xsx(n) > 0.0)) fail(ErrorCode::DegenerateSpectrum, "diag(X Sigma X^T) has a zero entry; Lambda2z is infinite");
    }
    const Vector lambda2z = xsx.cwiseInverse() - lambda1z;

    Matrix tilde = x * lambda1w.cwiseInverse().asDiagonal() * x.transpose();
    tilde.diagonal() += lambda1z.cwiseInverse();
    const Vector lhs = checked_llt(tilde, "Lambda1z^{-1} + X Lambda1w^{-1} X^T").solve(Matrix::Identity(N, N)).diagonal();
    const Vector via_sigma = lambda1z - lambda1z.cwiseAbs2().cwiseProduct(xsx);
    const Vector via_lambda2 = (lambda1z.cwiseInverse() + lambda2z.cwiseInverse()).cwiseInverse();
    double res = std::max((lhs - via_sigma).cwiseAbs().maxCoeff(), (lhs - via_lambda2).cwiseAbs().maxCoeff());

    const double l = lambda2z.mean();
    const Vector left = (lambda1z.cwiseInverse().array() + 1.0 / l).inverse().matrix();
    const Vector right = (l - l * l * (lambda1z.array() + l).inverse()).matrix();
    res = std::max(res, (left - right).cwiseAbs().maxCoeff());
    return res;
}

}  // namespace fpep::locallaw
