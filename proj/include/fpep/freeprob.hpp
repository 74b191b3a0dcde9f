#pragma once

// Free-probability numerics on empirical spectra.
//
// Conventions:
//   G(z) = (1/n) sum_i 1/(x_i - z)            Stieltjes transform
//   B    = G^{-1}                             (functional inverse)
//   R(s) = B(-s) - 1/s                        R-transform
//   S(w) = R~^{-1}(w) / w,  R~(s) = s R(s)    S-transform
//
// All inversions run on the two real branches of G that connect to z = -inf
// (below the spectrum, where G > 0) and z = +inf (above it, where G < 0). On
// those branches G is strictly monotone, so R(s) is evaluated on the lower
// branch for s < 0 and on the upper branch for s > 0. Both branches agree with
// the analytic R-transform near s = 0.

#include <algorithm>
#include <cmath>
#include <complex>
#include <initializer_list>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fpep/error.hpp"
#include "fpep/linalg.hpp"

namespace fpep::freeprob {

struct RootConfig {
    int max_iter = 400;
    int max_expansions = 2100;  // factor-2 steps when a bracket must be searched
    double rel_ftol = 1e-15;
};

namespace detail {

/// Safeguarded Newton on a bracket [lo, hi] with f(lo), f(hi) of opposite
/// signs. `eval` returns (f, f'). Falls back to bisection (geometric when the
/// bracket spans orders of magnitude) whenever the Newton step leaves the
/// bracket or fails to shrink it.
inline double bracketed_newton(const std::function<std::pair<double, double>(double)>& eval, double lo, double hi,
                               double x0, double ftol, int max_iter) {
    double flo = eval(lo).first;
    if (flo == 0.0) return lo;
    double x = (x0 > lo && x0 < hi) ? x0 : 0.5 * (lo + hi);
    for (int it = 0; it < max_iter; ++it) {
        const auto [fx, dfx] = eval(x);
        if (!std::isfinite(fx)) fail(ErrorCode::NonFinite, "non-finite value during root finding");
        if (std::abs(fx) <= ftol) return x;
        if ((fx > 0.0) == (flo > 0.0)) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(lo), std::abs(hi))) {
            return x;
        }
        double next = (dfx != 0.0 && std::isfinite(dfx)) ? x - fx / dfx : std::numeric_limits<double>::quiet_NaN();
        if (!(next > lo && next < hi)) {
            next = (lo > 0.0 && hi > 4.0 * lo) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        }
        if (std::abs(next - x) <= 2.0 * std::numeric_limits<double>::epsilon() * std::abs(x)) return next;
        x = next;
    }
    return x;
}

}  // namespace detail

/// Sorted sample of real eigenvalues (or squared singular values) with uniform
/// weights 1/n.
class EmpiricalSpectrum {
public:
    EmpiricalSpectrum() = default;

    explicit EmpiricalSpectrum(std::vector<double> values) : values_(std::move(values)) {
        require(!values_.empty(), ErrorCode::InvalidParameter, "empty spectrum");
        for (double v : values_) require(std::isfinite(v), ErrorCode::NonFinite, "spectrum value is not finite");
        std::sort(values_.begin(), values_.end());
    }

    explicit EmpiricalSpectrum(const Vector& v) : EmpiricalSpectrum(std::vector<double>(v.data(), v.data() + v.size())) {}
    EmpiricalSpectrum(std::initializer_list<double> values) : EmpiricalSpectrum(std::vector<double>(values)) {}

    static EmpiricalSpectrum point_mass(double c, std::size_t n = 1) { return EmpiricalSpectrum(std::vector<double>(n, c)); }

    /// Spectrum of a symmetric matrix.
    static EmpiricalSpectrum of_symmetric(const Matrix& a) { return EmpiricalSpectrum(symmetric_eigenvalues(a)); }

    std::size_t size() const noexcept { return values_.size(); }
    const std::vector<double>& values() const noexcept { return values_; }
    double min() const { return values_.front(); }
    double max() const { return values_.back(); }

    double moment(int p) const {
        long double acc = 0.0L;
        for (double v : values_) acc += std::pow(static_cast<long double>(v), p);
        return static_cast<double>(acc / static_cast<long double>(values_.size()));
    }
    double mean() const { return moment(1); }

    bool is_point_mass(double rel_tol = 1e-12) const {
        return max() - min() <= rel_tol * std::max(1.0, std::max(std::abs(min()), std::abs(max())));
    }

    EmpiricalSpectrum inverse() const {
        std::vector<double> inv;
        inv.reserve(values_.size());
        for (double v : values_) {
            require(v != 0.0, ErrorCode::OutOfDomain, "spectrum contains 0; inverse undefined");
            inv.push_back(1.0 / v);
        }
        return EmpiricalSpectrum(std::move(inv));
    }

    EmpiricalSpectrum scaled(double c) const {
        std::vector<double> out(values_);
        for (double& v : out) v *= c;
        return EmpiricalSpectrum(std::move(out));
    }

    /// G(z) for complex z. PoleHit when z lies within 1e-14 of a spectrum point.
    std::complex<double> stieltjes(std::complex<double> z) const {
        std::complex<long double> acc = 0.0L;
        for (double v : values_) {
            const std::complex<long double> d = std::complex<long double>(v) - std::complex<long double>(z);
            if (std::abs(d) < 1e-14L) fail(ErrorCode::PoleHit, "z coincides with a spectrum point");
            acc += 1.0L / d;
        }
        acc /= static_cast<long double>(values_.size());
        return {static_cast<double>(acc.real()), static_cast<double>(acc.imag())};
    }

    /// G(z) for real z away from the spectrum points.
    double stieltjes(double z) const {
        long double acc = 0.0L;
        for (double v : values_) {
            const long double d = static_cast<long double>(v) - z;
            if (std::abs(d) < 1e-14L) fail(ErrorCode::PoleHit, "z coincides with a spectrum point");
            acc += 1.0L / d;
        }
        return static_cast<double>(acc / static_cast<long double>(values_.size()));
    }

private:
    std::vector<double> values_;
};

/// Result of inverting G on a real branch.
struct BranchPoint {
    double z = 0.0;         // B(g)
    double residual = 0.0;  // |G(z) - g|
};

/// B(g) = G^{-1}(g) on the real branch below the spectrum (g > 0) or above it
/// (g < 0).
inline BranchPoint inverse_stieltjes(const EmpiricalSpectrum& spec, double g, const RootConfig& cfg = {}) {
    require(std::isfinite(g), ErrorCode::NonFinite, "inverse_stieltjes argument");
    if (g == 0.0) fail(ErrorCode::OutOfDomain, "G never attains 0 on a real branch");
    const bool lower = g > 0.0;
    const double a = std::abs(g);
    const double anchor = lower ? spec.min() : spec.max();
    const auto& xs = spec.values();
    const double n = static_cast<double>(xs.size());
    // distance of each point from the branch edge; mean 1/(d + tau) = a
    auto eval = [&](double tau) {
        long double h = 0.0L, dh = 0.0L;
        for (double x : xs) {
            const long double d = static_cast<long double>(lower ? x - anchor : anchor - x) + tau;
            const long double r = 1.0L / d;
            h += r;
            dh += r * r;
        }
        h /= n;
        dh /= n;
        // 1/G is close to linear in tau, which makes Newton converge in a few steps.
        const long double inv = 1.0L / h;
        return std::pair<double, double>{static_cast<double>(inv - 1.0L / a), static_cast<double>(dh * inv * inv)};
    };
    const double spread = spec.max() - spec.min();
    const double lo = std::max(1.0 / (n * a), 1.0 / a - spread) * (1.0 - 1e-12);
    const double hi = (1.0 / a) * (1.0 + 1e-12);
    double tau;
    if (hi - lo <= 0.0 || spread == 0.0) {
        tau = 1.0 / a;
    } else {
        tau = detail::bracketed_newton(eval, lo, hi, lo, cfg.rel_ftol / a, cfg.max_iter);
    }
    BranchPoint out;
    out.z = lower ? anchor - tau : anchor + tau;
    out.residual = std::abs(spec.stieltjes(out.z) - g);
    return out;
}

struct TransformValue {
    double value = 0.0;
    double residual = 0.0;  // forward residual of the underlying inversion
};

inline TransformValue r_transform_detail(const EmpiricalSpectrum& spec, double s, const RootConfig& cfg = {}) {
    require(std::isfinite(s), ErrorCode::NonFinite, "r_transform argument");
    if (s == 0.0) fail(ErrorCode::OutOfDomain, "R-transform evaluated at s = 0");
    const BranchPoint b = inverse_stieltjes(spec, -s, cfg);
    return {b.z - 1.0 / s, b.residual};
}

/// R(s) = B(-s) - 1/s.
inline double r_transform(const EmpiricalSpectrum& spec, double s, const RootConfig& cfg = {}) {
    return r_transform_detail(spec, s, cfg).value;
}

/// R~(s) = s R(s).
inline double r_tilde(const EmpiricalSpectrum& spec, double s, const RootConfig& cfg = {}) {
    return s * r_transform(spec, s, cfg);
}

/// S(w) = R~^{-1}(w) / w. Parametrized by the branch point z: with
/// s = -G(z), R~(s) = -1 - z G(z) = -(1/n) sum x_i / (x_i - z).
inline TransformValue s_transform_detail(const EmpiricalSpectrum& spec, double omega, const RootConfig& cfg = {}) {
    require(std::isfinite(omega), ErrorCode::NonFinite, "s_transform argument");
    const double m1 = spec.mean();
    const double scale = std::max(std::abs(spec.min()), std::abs(spec.max()));
    if (!(std::abs(m1) > 1e-14 * scale)) fail(ErrorCode::ZeroMean, "S-transform needs a nonzero mean");
    if (omega == 0.0) fail(ErrorCode::OutOfDomain, "S-transform evaluated at omega = 0");

    const bool lower = omega < 0.0;
    const double anchor = lower ? spec.min() : spec.max();
    const auto& xs = spec.values();
    const double n = static_cast<double>(xs.size());
    const double target = -omega;  // psi(z) = (1/n) sum x/(x - z) must equal -omega
    auto psi = [&](double tau) {
        long double v = 0.0L, dv = 0.0L;
        for (double x : xs) {
            // x - z with z = anchor -/+ tau
            const long double d = lower ? static_cast<long double>(x - anchor) + tau
                                        : static_cast<long double>(x - anchor) - tau;
            v += x / d;
            dv += lower ? -x / (d * d) : x / (d * d);
        }
        return std::pair<double, double>{static_cast<double>(v / n - target), static_cast<double>(dv / n)};
    };
    // Bracket search over tau in (0, inf), geometric in both directions.
    double a = 1.0;
    double fa = psi(a).first;
    double b = a;
    double fb = fa;
    bool found = false;
    for (int i = 0; i < cfg.max_expansions && !found; ++i) {
        const double t_up = a * std::pow(2.0, i + 1);
        const double t_dn = a * std::pow(0.5, i + 1);
        if (std::isfinite(t_up)) {
            const double f = psi(t_up).first;
            if ((f > 0.0) != (fa > 0.0)) {
                b = t_up;
                fb = f;
                found = true;
                break;
            }
        }
        if (t_dn > 0.0) {
            const double f = psi(t_dn).first;
            if ((f > 0.0) != (fa > 0.0)) {
                b = t_dn;
                fb = f;
                found = true;
                break;
            }
        }
    }
    if (!found) fail(ErrorCode::OutOfDomain, "omega not attained by R~ on the real branch");
    (void)fb;
    const double lo = std::min(a, b), hi = std::max(a, b);
    // Both bracket endpoints are within a factor 2 of each other; refine a/b
    // to the adjacent pair that actually straddles the root.
    double left = lo, right = hi;
    if (hi > 2.0 * lo) {
        // b was reached by repeated doubling/halving: narrow to the last step.
        left = (b > a) ? b / 2.0 : b;
        right = (b > a) ? b : b * 2.0;
        if ((psi(left).first > 0.0) == (psi(right).first > 0.0)) {
            left = lo;
            right = hi;
        }
    }
    const double tau = detail::bracketed_newton(psi, left, right, 0.5 * (left + right),
                                                cfg.rel_ftol * std::max(1.0, std::abs(omega)), cfg.max_iter);
    const double z = lower ? anchor - tau : anchor + tau;
    const double g = spec.stieltjes(z);
    const double s = -g;
    const double rt = -1.0 - z * g;
    return {s / omega, std::abs(rt - omega)};
}

inline double s_transform(const EmpiricalSpectrum& spec, double omega, const RootConfig& cfg = {}) {
    return s_transform_detail(spec, omega, cfg).value;
}

/// |1/R_A(s) - R_{A^{-1}}(-R_A(s)(1 + s R_A(s)))| for a strictly positive
/// spectrum.
inline double r_inverse_relation_check(const EmpiricalSpectrum& spec, double s, const RootConfig& cfg = {}) {
    require(spec.min() > 0.0, ErrorCode::OutOfDomain, "inverse relation needs a strictly positive spectrum");
    const EmpiricalSpectrum inv = spec.inverse();
    const double ra = r_transform(spec, s, cfg);
    const double arg = -ra * (1.0 + s * ra);
    const double rinv = r_transform(inv, arg, cfg);
    return std::abs(1.0 / ra - rinv);
}

// ---------------------------------------------------------------------------
// Free cumulants

constexpr int kMaxCumulantOrder = 12;

namespace detail {

/// Coefficients [x^r] M(x)^k for k = 0..p, r = 0..p with M(x) = sum m_j x^j, m_0 = 1.
inline std::vector<std::vector<double>> moment_series_powers(const std::vector<double>& m_with_zero, int p) {
    std::vector<std::vector<double>> pw(static_cast<std::size_t>(p + 1), std::vector<double>(static_cast<std::size_t>(p + 1), 0.0));
    pw[0][0] = 1.0;
    for (int k = 1; k <= p; ++k) {
        for (int r = 0; r <= p; ++r) {
            long double acc = 0.0L;
            for (int j = 0; j <= r && j < static_cast<int>(m_with_zero.size()); ++j) {
                acc += static_cast<long double>(m_with_zero[static_cast<std::size_t>(j)]) * pw[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(r - j)];
            }
            pw[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] = static_cast<double>(acc);
        }
    }
    return pw;
}

}  // namespace detail

/// Free cumulants k_1..k_p from moments m_1..m_p using the non-crossing
/// moment-cumulant recursion
///   m_p = sum_{k=1}^{p} k_k sum_{i_1+..+i_k = p-k} m_{i_1} ... m_{i_k}.
inline std::vector<double> free_cumulants_from_moments(const std::vector<double>& moments) {
    const int p = static_cast<int>(moments.size());
    require(p >= 1 && p <= kMaxCumulantOrder, ErrorCode::InvalidParameter, "cumulant order must be in [1, 12]");
    for (double m : moments) require(std::isfinite(m), ErrorCode::NonFinite, "moment is not finite");
    std::vector<double> m0{1.0};
    m0.insert(m0.end(), moments.begin(), moments.end());
    const auto pw = detail::moment_series_powers(m0, p);
    std::vector<double> kappa(static_cast<std::size_t>(p), 0.0);
    for (int q = 1; q <= p; ++q) {
        long double acc = moments[static_cast<std::size_t>(q - 1)];
        for (int k = 1; k < q; ++k) acc -= static_cast<long double>(kappa[static_cast<std::size_t>(k - 1)]) * pw[static_cast<std::size_t>(k)][static_cast<std::size_t>(q - k)];
        kappa[static_cast<std::size_t>(q - 1)] = static_cast<double>(acc);
        require(std::isfinite(kappa[static_cast<std::size_t>(q - 1)]), ErrorCode::NonFinite, "cumulant overflow");
    }
    return kappa;
}

/// Inverse of free_cumulants_from_moments.
inline std::vector<double> moments_from_free_cumulants(const std::vector<double>& kappa) {
    const int p = static_cast<int>(kappa.size());
    require(p >= 1 && p <= kMaxCumulantOrder, ErrorCode::InvalidParameter, "cumulant order must be in [1, 12]");
    std::vector<double> m0{1.0};
    for (int q = 1; q <= p; ++q) {
        const auto pw = detail::moment_series_powers(m0, q);
        long double acc = kappa[static_cast<std::size_t>(q - 1)];
        for (int k = 1; k < q; ++k) acc += static_cast<long double>(kappa[static_cast<std::size_t>(k - 1)]) * pw[static_cast<std::size_t>(k)][static_cast<std::size_t>(q - k)];
        m0.push_back(static_cast<double>(acc));
    }
    return {m0.begin() + 1, m0.end()};
}

/// Truncated series R(s) ~ sum_j k_{j+1} s^j.
inline double truncated_r_series(const std::vector<double>& kappa, double s) {
    double acc = 0.0;
    for (auto it = kappa.rbegin(); it != kappa.rend(); ++it) acc = acc * s + *it;
    return acc;
}

inline std::vector<double> spectral_moments(const EmpiricalSpectrum& spec, int p) {
    std::vector<double> m;
    for (int j = 1; j <= p; ++j) m.push_back(spec.moment(j));
    return m;
}

/// Normalized trace moments (1/n) tr(A^j), j = 1..p, by repeated products.
inline std::vector<double> matrix_moments(const Matrix& a, int p) {
    require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "matrix_moments needs a square matrix");
    std::vector<double> m;
    Matrix power = a;
    for (int j = 1; j <= p; ++j) {
        if (j > 1) power = power * a;
        m.push_back(normalized_trace(power));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Transform grids and free convolution checks

struct TransformGrid {
    std::vector<double> s_values;
    std::vector<double> outputs;
    std::vector<bool> converged_flags;
};

template <class Fn>
TransformGrid evaluate_grid(const std::vector<double>& grid, Fn&& fn) {
    TransformGrid out;
    for (double s : grid) {
        out.s_values.push_back(s);
        try {
            const double v = fn(s);
            out.outputs.push_back(v);
            out.converged_flags.push_back(std::isfinite(v));
        } catch (const Error&) {
            out.outputs.push_back(std::numeric_limits<double>::quiet_NaN());
            out.converged_flags.push_back(false);
        }
    }
    return out;
}

inline TransformGrid r_transform_grid(const EmpiricalSpectrum& spec, const std::vector<double>& grid) {
    return evaluate_grid(grid, [&](double s) { return r_transform(spec, s); });
}

inline TransformGrid s_transform_grid(const EmpiricalSpectrum& spec, const std::vector<double>& grid) {
    return evaluate_grid(grid, [&](double w) { return s_transform(spec, w); });
}

struct ConvolutionCheck {
    double max_residual = 0.0;
    std::vector<double> grid;
    std::vector<double> residuals;  // NaN where excluded
    std::vector<double> excluded;   // grid points that failed to evaluate
};

inline ConvolutionCheck additive_convolution_check(const EmpiricalSpectrum& a, const EmpiricalSpectrum& b,
                                                   const EmpiricalSpectrum& sum, const std::vector<double>& s_grid) {
    require(a.size() == b.size() && b.size() == sum.size(), ErrorCode::DimensionMismatch,
            "additive check needs spectra of equal dimension");
    ConvolutionCheck out;
    for (double s : s_grid) {
        out.grid.push_back(s);
        try {
            const double r = std::abs(r_transform(sum, s) - r_transform(a, s) - r_transform(b, s));
            out.residuals.push_back(r);
            out.max_residual = std::max(out.max_residual, r);
        } catch (const Error&) {
            out.residuals.push_back(std::numeric_limits<double>::quiet_NaN());
            out.excluded.push_back(s);
        }
    }
    return out;
}

inline ConvolutionCheck multiplicative_convolution_check(const EmpiricalSpectrum& a, const EmpiricalSpectrum& b,
                                                         const EmpiricalSpectrum& prod,
                                                         const std::vector<double>& omega_grid) {
    require(a.size() == b.size() && b.size() == prod.size(), ErrorCode::DimensionMismatch,
            "multiplicative check needs spectra of equal dimension");
    for (const auto* sp : {&a, &b, &prod}) {
        const double scale = std::max(std::abs(sp->min()), std::abs(sp->max()));
        if (!(std::abs(sp->mean()) > 1e-14 * scale)) fail(ErrorCode::ZeroMean, "multiplicative check needs nonzero means");
    }
    ConvolutionCheck out;
    for (double w : omega_grid) {
        out.grid.push_back(w);
        try {
            const double r = std::abs(s_transform(prod, w) - s_transform(a, w) * s_transform(b, w));
            out.residuals.push_back(r);
            out.max_residual = std::max(out.max_residual, r);
        } catch (const Error&) {
            out.residuals.push_back(std::numeric_limits<double>::quiet_NaN());
            out.excluded.push_back(w);
        }
    }
    return out;
}

/// A^{1/2} B A^{1/2} for symmetric positive semidefinite A; shares the nonzero
/// spectrum of AB.
inline Matrix symmetrized_product(const Matrix& a, const Matrix& b) {
    require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(), ErrorCode::DimensionMismatch,
            "symmetrized_product shapes");
    Matrix root;
    if (a.isDiagonal(0.0)) {
        const Vector d = a.diagonal().cwiseMax(0.0).cwiseSqrt();
        Matrix out = d.asDiagonal() * b * d.asDiagonal();
        return 0.5 * (out + out.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    Matrix out = root * b * root;
    return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// Freeness tester

struct WordTrace {
    std::string word;
    double value = 0.0;
};

struct FreenessReport {
    double max_word_trace = 0.0;
    std::vector<WordTrace> per_word;
    int degree_bound = 0;
    int length_bound = 0;
};

struct FreenessOptions {
    /// Divide each centered monomial Q by sqrt(phi(Q^2)) so word traces are
    /// scale free.
    bool standardize = true;
};

constexpr int kMaxFreenessDegree = 3;
constexpr int kMaxFreenessLength = 6;

/// Normalized traces of alternating words Q_1 Q_2 ... Q_L (2 <= L <= length
/// bound), where each Q_i = M^p - phi(M^p) I is a centered monomial (p <=
/// degree bound) of a matrix M from one set of the family and adjacent
/// factors come from different sets.
inline FreenessReport freeness_score(const std::vector<std::vector<Matrix>>& family, int degree_bound,
                                     int length_bound, const FreenessOptions& opt = {}) {
    require(degree_bound >= 1 && degree_bound <= kMaxFreenessDegree, ErrorCode::InvalidParameter,
            "degree bound must be in [1, 3]");
    require(length_bound >= 2 && length_bound <= kMaxFreenessLength, ErrorCode::InvalidParameter,
            "length bound must be in [2, 6]");
    FreenessReport report;
    report.degree_bound = degree_bound;
    report.length_bound = length_bound;

    Eigen::Index n = -1;
    for (const auto& set : family)
        for (const auto& m : set) {
            require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "freeness family matrices must be square");
            if (n < 0) n = m.rows();
            require(m.rows() == n, ErrorCode::DimensionMismatch, "freeness family matrices must share dimension");
        }
    std::size_t nonempty = 0;
    for (const auto& set : family) nonempty += set.empty() ? 0 : 1;
    if (nonempty < 2) return report;

    struct Factor {
        std::size_t set;
        std::string name;
        Matrix q;
    };
    std::vector<Factor> factors;
    const double dn = static_cast<double>(n);
    for (std::size_t s = 0; s < family.size(); ++s) {
        for (std::size_t j = 0; j < family[s].size(); ++j) {
            Matrix power = family[s][j];
            for (int p = 1; p <= degree_bound; ++p) {
                if (p > 1) power = power * family[s][j];
                Matrix q = power;
                q.diagonal().array() -= normalized_trace(power);
                const double second = q.cwiseProduct(q.transpose()).sum() / dn;  // phi(Q^2)
                if (!(second > 1e-300)) continue;  // constant monomial, all words vanish
                if (opt.standardize) q /= std::sqrt(second);
                factors.push_back({s, "Q" + std::to_string(s) + "." + std::to_string(j) + "^" + std::to_string(p), std::move(q)});
            }
        }
    }

    // Depth-first enumeration sharing prefix products; the last factor is
    // folded in with an O(n^2) trace.
    std::function<void(const Matrix&, std::size_t, int, const std::string&)> extend =
        [&](const Matrix& prefix, std::size_t last_set, int len, const std::string& name) {
            for (const auto& f : factors) {
                if (f.set == last_set) continue;
                const std::string word = name + " " + f.name;
                if (len + 1 >= 2) {
                    const double tr = prefix.cwiseProduct(f.q.transpose()).sum() / dn;
                    report.per_word.push_back({word, tr});
                    report.max_word_trace = std::max(report.max_word_trace, std::abs(tr));
                }
                if (len + 1 < length_bound) {
                    Matrix next = prefix * f.q;
                    extend(next, f.set, len + 1, word);
                }
            }
        };
    for (const auto& f : factors) extend(f.q, f.set, 1, f.name);
    return report;
}

}  // namespace fpep::freeprob
