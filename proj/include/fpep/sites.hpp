#pragma once

// Tilted moments of one-dimensional site factors under a Gaussian cavity:
// given a cavity N(x | m, v) and a nonnegative site t(x), the mean, variance
// and log normalizer of  t(x) N(x | m, v) / Z.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <utility>

#include "fpep/error.hpp"

namespace fpep::sites {

struct CavityGaussian {
    double mean = 0.0;
    double var = 1.0;
};

struct TiltedMoments {
    double mean = 0.0;
    double var = 0.0;
    double log_partition = 0.0;
};

inline void validate_cavity(const CavityGaussian& c) {
    require(std::isfinite(c.mean), ErrorCode::NonFinite, "cavity mean is not finite");
    require(std::isfinite(c.var) && c.var > 0.0, ErrorCode::InvalidParameter, "cavity variance must be positive");
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double log_normal_density(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

namespace detail {

inline TiltedMoments checked(TiltedMoments t) {
    if (!std::isfinite(t.mean) || !std::isfinite(t.var) || !std::isfinite(t.log_partition)) {
        fail(ErrorCode::NonFinite, "tilted moments overflowed");
    }
    if (t.var < 0.0) t.var = 0.0;
    return t;
}

/// 1/(x + 2/(x + 3/(x + ...))) for x >= 6. With R(x) = Q(x)/phi(x) the Mills
/// ratio, 1/R(x) = x + tail(x).
inline double mills_tail(double x) {
    double f = x;
    for (int k = 120; k >= 2; --k) f = x + k / f;
    return 1.0 / f;
}

}  // namespace detail

/// Product of the cavity with a Gaussian prior N(x | prior_mean, prior_var).
inline TiltedMoments tilted_gaussian_prior(const CavityGaussian& c, double prior_mean, double prior_var) {
    validate_cavity(c);
    require(prior_var > 0.0, ErrorCode::InvalidParameter, "prior variance must be positive");
    TiltedMoments t;
    t.var = 1.0 / (1.0 / c.var + 1.0 / prior_var);
    t.mean = t.var * (c.mean / c.var + prior_mean / prior_var);
    t.log_partition = log_normal_density(prior_mean, c.mean, c.var + prior_var);
    return detail::checked(t);
}

/// Cavity times the mixture (1 - rho) delta(x) + rho N(x | 0, slab_var).
/// Responsibilities are formed in the log domain.
inline TiltedMoments tilted_spike_slab(const CavityGaussian& c, double rho, double slab_var) {
    validate_cavity(c);
    require(rho > 0.0 && rho <= 1.0, ErrorCode::InvalidParameter, "rho must be in (0, 1]");
    require(slab_var > 0.0 && std::isfinite(slab_var), ErrorCode::InvalidParameter, "slab variance must be positive");
    const double log_slab = std::log(rho) + log_normal_density(0.0, c.mean, c.var + slab_var);
    TiltedMoments t;
    double pi_slab = 1.0;
    if (rho < 1.0) {
        const double log_spike = std::log1p(-rho) + log_normal_density(0.0, c.mean, c.var);
        const double hi = std::max(log_slab, log_spike);
        t.log_partition = hi + std::log(std::exp(log_slab - hi) + std::exp(log_spike - hi));
        pi_slab = 1.0 / (1.0 + std::exp(log_spike - log_slab));
    } else {
        t.log_partition = log_slab;
    }
    const double vs = 1.0 / (1.0 / c.var + 1.0 / slab_var);
    const double ms = vs * c.mean / c.var;
    t.mean = pi_slab * ms;
    t.var = pi_slab * vs + pi_slab * (1.0 - pi_slab) * ms * ms;
    return detail::checked(t);
}

/// Cavity times Phi(label * x / sqrt(noise_var)).
inline TiltedMoments tilted_probit(const CavityGaussian& c, double label, double noise_var) {
    validate_cavity(c);
    require(label == 1.0 || label == -1.0, ErrorCode::InvalidParameter, "probit label must be +1 or -1");
    require(noise_var > 0.0 && std::isfinite(noise_var), ErrorCode::InvalidParameter, "noise variance must be positive");
    const double s2 = noise_var + c.var;
    const double s = std::sqrt(s2);
    const double t = label * c.mean / s;
    double r;       // phi(t) / Phi(t)
    double r_plus;  // r + t
    TiltedMoments out;
    if (t < -6.0) {
        const double x = -t;
        const double tail = detail::mills_tail(x);
        r = x + tail;
        r_plus = tail;
        out.log_partition = -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(r);
    } else {
        const double cdf = normal_cdf(t);
        r = normal_pdf(t) / cdf;
        r_plus = r + t;
        out.log_partition = std::log(cdf);
    }
    out.mean = c.mean + label * c.var * r / s;
    out.var = c.var - c.var * c.var * r * r_plus / s2;
    return detail::checked(out);
}

/// Trapezoid rule on mean +- 12 sd, doubling the point count from n_points
/// until mass, mean and variance change by less than 1e-10 (relative). The
/// tilted mass must lie inside that window; strongly shifted sites need a
/// smaller cavity variance.
inline TiltedMoments quadrature_oracle(const CavityGaussian& c, const std::function<double(double)>& site,
                                       int n_points = 64) {
    validate_cavity(c);
    require(n_points >= 64, ErrorCode::InvalidParameter, "quadrature needs at least 64 points");
    const double sd = std::sqrt(c.var);
    const double lo = c.mean - 12.0 * sd;
    const double hi = c.mean + 12.0 * sd;
    constexpr long kMaxPoints = 1L << 22;

    struct Sums {
        long double z, m1, m2;
    };
    auto integrate = [&](long n) {
        const double h = (hi - lo) / static_cast<double>(n - 1);
        Sums acc{0.0L, 0.0L, 0.0L};
        for (long i = 0; i < n; ++i) {
            const double x = lo + h * static_cast<double>(i);
            const double d = x - c.mean;
            const double f = site(x);
            require(f >= 0.0, ErrorCode::InvalidParameter, "site density must be nonnegative");
            const long double w = static_cast<long double>((i == 0 || i == n - 1) ? 0.5 : 1.0) * f *
                                  std::exp(-0.5 * d * d / c.var);
            acc.z += w;
            acc.m1 += w * d;
            acc.m2 += w * d * d;
        }
        const long double scale = h / std::sqrt(2.0 * std::numbers::pi * c.var);
        return Sums{acc.z * scale, acc.m1 * scale, acc.m2 * scale};
    };
    auto moments = [&](const Sums& s) {
        if (!(s.z >= 1e-300L)) fail(ErrorCode::ZeroMass, "tilted density has no mass on the integration window");
        const long double e1 = s.m1 / s.z;
        const long double e2 = s.m2 / s.z;
        TiltedMoments t;
        t.mean = static_cast<double>(c.mean + e1);
        t.var = static_cast<double>(e2 - e1 * e1);
        t.log_partition = static_cast<double>(std::log(s.z));
        return t;
    };
    auto close = [](double a, double b, double scale) { return std::abs(a - b) <= 1e-10 * std::max(scale, std::abs(b)); };

    long n = n_points;
    Sums prev = integrate(n);
    TiltedMoments prev_t = moments(prev);
    while (n < kMaxPoints) {
        n = 2 * n - 1;  // reuses the previous nodes
        const Sums cur = integrate(n);
        const TiltedMoments t = moments(cur);
        const bool stable = std::abs(static_cast<double>(cur.z - prev.z)) <= 1e-10 * static_cast<double>(cur.z) &&
                            close(prev_t.mean, t.mean, sd) && close(prev_t.var, t.var, c.var);
        prev = cur;
        prev_t = t;
        if (stable) break;
    }
    return detail::checked(prev_t);
}

/// Natural cavity parameter gamma such that the probit tilted mean under
/// cavity N(gamma / c_lambda, 1 / c_lambda) equals target_eta. The tilted
/// mean is strictly increasing in gamma with derivative equal to the tilted
/// variance.
inline double monotone_link_inverse(double target_eta, double c_lambda, double label, double noise_var) {
    require(std::isfinite(target_eta), ErrorCode::NonFinite, "target is not finite");
    require(c_lambda > 0.0 && std::isfinite(c_lambda), ErrorCode::InvalidParameter, "cavity precision must be positive");
    constexpr double kBound = 1e6;
    auto eval = [&](double gamma) {
        const auto t = tilted_probit({gamma / c_lambda, 1.0 / c_lambda}, label, noise_var);
        return std::pair<double, double>{t.mean - target_eta, t.var};
    };
    double lo = -kBound, hi = kBound;
    const double flo = eval(lo).first;
    const double fhi = eval(hi).first;
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) fail(ErrorCode::NoBracket, "no sign change of the link residual on [-1e6, 1e6]");

    const double ftol = 1e-12 * std::max(1.0, std::abs(target_eta));
    double x = std::clamp(target_eta * c_lambda, lo, hi);
    for (int it = 0; it < 300; ++it) {
        const auto [f, df] = eval(x);
        if (std::abs(f) <= ftol) return x;
        if (f < 0.0) lo = x;
        else hi = x;
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) return x;
        double next = df > 0.0 ? x - f / df : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        x = next;
    }
    return x;
}

}  // namespace fpep::sites
