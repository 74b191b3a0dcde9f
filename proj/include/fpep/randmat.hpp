#pragma once

// Seeded generators for the matrix ensembles used by the experiments.
//
// Each generator draws from its own Philox stream (see rng.hpp), so the same
// seed passed to two different generators gives independent output. A
// `substream` index separates repeated draws of one generator under one seed.

#include <bit>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "fpep/error.hpp"
#include "fpep/linalg.hpp"
#include "fpep/rng.hpp"

namespace fpep::randmat {

struct Uniform {
    double a = 0.0;
    double b = 1.0;
};

struct TwoPoint {
    double x1 = 0.0;
    double x2 = 1.0;
    double p = 0.5;  // probability of x1
};

using DiagLaw = std::variant<Uniform, TwoPoint>;

inline void validate_law(const DiagLaw& law) {
    if (const auto* u = std::get_if<Uniform>(&law)) {
        require(std::isfinite(u->a) && std::isfinite(u->b) && u->a < u->b, ErrorCode::InvalidParameter,
                "uniform law needs a < b");
    } else {
        const auto& t = std::get<TwoPoint>(law);
        require(t.p > 0.0 && t.p < 1.0, ErrorCode::InvalidParameter, "two-point law needs p in (0,1)");
        require(std::isfinite(t.x1) && std::isfinite(t.x2), ErrorCode::InvalidParameter,
                "two-point law needs finite atoms");
    }
}

/// Haar-distributed orthogonal matrix: QR of an iid Gaussian matrix with the
/// columns of Q rescaled so that diag(R) > 0.
inline Matrix haar_orthogonal(Eigen::Index n, std::uint64_t seed, std::uint32_t substream = 0) {
    require(n >= 1, ErrorCode::InvalidParameter, "haar_orthogonal needs n >= 1");
    rng::CounterRng gen(seed, rng::StreamTag::Haar, substream);
    Matrix g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = gen.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix& r = qr.matrixQR();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

inline bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline std::vector<Eigen::Index> random_permutation(Eigen::Index n, rng::CounterRng& gen) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    for (Eigen::Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(gen.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

/// Sylvester Hadamard matrix of order n (entries +-1, unnormalized).
inline Matrix sylvester_hadamard(Eigen::Index n) {
    if (!is_power_of_two(n)) fail(ErrorCode::NotPowerOfTwo, "Hadamard order " + std::to_string(n));
    Matrix h(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) h(i, j) = (std::popcount(static_cast<std::uint64_t>(i & j)) & 1) ? -1.0 : 1.0;
    return h;
}

/// (1/sqrt n) P1 D H P2 with random permutations P1, P2 and random signs D.
inline Matrix permuted_hadamard(Eigen::Index n, std::uint64_t seed, std::uint32_t substream = 0) {
    if (!is_power_of_two(n)) fail(ErrorCode::NotPowerOfTwo, "permuted_hadamard order " + std::to_string(n));
    rng::CounterRng gen(seed, rng::StreamTag::Hadamard, substream);
    const auto rows = random_permutation(n, gen);
    const auto cols = random_permutation(n, gen);
    Vector signs(n);
    for (Eigen::Index i = 0; i < n; ++i) signs(i) = gen.rademacher();
    const Matrix h = sylvester_hadamard(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    Matrix out(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index hj = cols[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index hi = rows[static_cast<std::size_t>(i)];
            out(i, j) = scale * signs(hi) * h(hi, hj);
        }
    }
    return out;
}

/// n x k matrix of iid N(0, scale^2) entries, filled column by column.
inline Matrix gaussian_iid(Eigen::Index n, Eigen::Index k, double scale, std::uint64_t seed,
                           std::uint32_t substream = 0) {
    require(n >= 1 && k >= 1, ErrorCode::InvalidParameter, "gaussian_iid needs positive dimensions");
    require(scale > 0.0 && std::isfinite(scale), ErrorCode::InvalidParameter, "gaussian_iid needs scale > 0");
    rng::CounterRng gen(seed, rng::StreamTag::GaussianIid, substream);
    Matrix out(n, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < n; ++i) out(i, j) = scale * gen.normal();
    return out;
}

inline Vector rademacher_diag(Eigen::Index n, std::uint64_t seed, std::uint32_t substream = 0) {
    require(n >= 1, ErrorCode::InvalidParameter, "rademacher_diag needs n >= 1");
    rng::CounterRng gen(seed, rng::StreamTag::Rademacher, substream);
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = gen.rademacher();
    return out;
}

inline Vector diag_from_law(Eigen::Index n, const DiagLaw& law, std::uint64_t seed, std::uint32_t substream = 0) {
    require(n >= 1, ErrorCode::InvalidParameter, "diag_from_law needs n >= 1");
    validate_law(law);
    rng::CounterRng gen(seed, rng::StreamTag::DiagLaw, substream);
    Vector out(n);
    if (const auto* u = std::get_if<Uniform>(&law)) {
        for (Eigen::Index i = 0; i < n; ++i) out(i) = gen.uniform(u->a, u->b);
    } else {
        const auto& t = std::get<TwoPoint>(law);
        for (Eigen::Index i = 0; i < n; ++i) out(i) = gen.uniform() < t.p ? t.x1 : t.x2;
    }
    return out;
}

/// O diag(d) O^T, symmetrized to remove rounding asymmetry.
inline Matrix conjugate_diagonal(const Matrix& o, const Vector& d) {
    require(o.cols() == d.size(), ErrorCode::DimensionMismatch, "conjugate_diagonal shape");
    Matrix od = o * d.asDiagonal();
    Matrix out = od * o.transpose();
    return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// Ensemble specification used by configuration files.

struct HaarOrthogonal {};
struct PermutedHadamard {};
struct GaussianIid {
    double scale = 1.0;
};
struct RademacherDiag {};
struct DiagFromLaw {
    DiagLaw law;
};

using EnsembleKind = std::variant<HaarOrthogonal, PermutedHadamard, GaussianIid, RademacherDiag, DiagFromLaw>;

struct EnsembleSpec {
    EnsembleKind kind;
    std::uint64_t seed = 0;
};

inline std::string kind_name(const EnsembleKind& kind) {
    struct Namer {
        std::string operator()(const HaarOrthogonal&) const { return "haar"; }
        std::string operator()(const PermutedHadamard&) const { return "hadamard"; }
        std::string operator()(const GaussianIid&) const { return "gaussian"; }
        std::string operator()(const RademacherDiag&) const { return "rademacher"; }
        std::string operator()(const DiagFromLaw&) const { return "diag"; }
    };
    return std::visit(Namer{}, kind);
}

/// Draws a matrix from the ensemble. Diagonal ensembles return diag(v) (n x n);
/// GaussianIid returns n x k.
inline Matrix sample(const EnsembleSpec& spec, Eigen::Index n, Eigen::Index k = 0, std::uint32_t substream = 0) {
    struct Sampler {
        Eigen::Index n, k;
        std::uint64_t seed;
        std::uint32_t sub;
        Matrix operator()(const HaarOrthogonal&) const { return haar_orthogonal(n, seed, sub); }
        Matrix operator()(const PermutedHadamard&) const { return permuted_hadamard(n, seed, sub); }
        Matrix operator()(const GaussianIid& g) const { return gaussian_iid(n, k > 0 ? k : n, g.scale, seed, sub); }
        Matrix operator()(const RademacherDiag&) const { return rademacher_diag(n, seed, sub).asDiagonal(); }
        Matrix operator()(const DiagFromLaw& d) const { return diag_from_law(n, d.law, seed, sub).asDiagonal(); }
    };
    return std::visit(Sampler{n, k, spec.seed, substream}, spec.kind);
}

}  // namespace fpep::randmat
