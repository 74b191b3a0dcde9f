#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <gtest/gtest.h>

#include "fpep/freeprob.hpp"
#include "fpep/locallaw.hpp"
#include "fpep/randmat.hpp"

using namespace fpep;
using namespace fpep::locallaw;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no exception";
    return ErrorCode::IoError;
}

std::vector<std::uint64_t> seeds(int n) {
    std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
    std::iota(s.begin(), s.end(), 0);
    return s;
}

double median_deviation(const LocalLawExperiment& e, Eigen::Index n) {
    std::vector<double> v;
    for (const auto& r : e.reports)
        if (r.n == n) v.push_back(r.l2_deviation);
    return median(v);
}

// -------------------------------------------------------------- implied diag

TEST(ImpliedLambda2, ShiftAndZero) {
    const Vector l1 = randmat::diag_from_law(10, randmat::Uniform{1.0, 2.0}, 3);
    const auto s = implied_lambda2_diagonal(l1, 0.7 * Matrix::Identity(10, 10));
    EXPECT_LT((s.lambda2_diag.array() - 0.7).abs().maxCoeff(), 1e-14);
    const auto z = implied_lambda2_diagonal(l1, Matrix::Zero(10, 10));
    EXPECT_LT(z.lambda2_diag.cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(z.chi, l1.cwiseInverse().mean(), 1e-15);
}

TEST(ImpliedLambda2, MatchesDenseInverse) {
    const Vector l1 = randmat::diag_from_law(6, randmat::Uniform{1.0, 2.0}, 4);
    const Matrix j = randmat::conjugate_diagonal(randmat::haar_orthogonal(6, 4),
                                                 randmat::diag_from_law(6, randmat::Uniform{0.0, 1.0}, 4, 1));
    Matrix m = j;
    m.diagonal() += l1;
    const Matrix inv = m.inverse();
    const auto s = implied_lambda2_diagonal(l1, j);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(s.lambda2_diag(i), 1.0 / inv(i, i) - l1(i), 1e-12);
    EXPECT_NEAR(s.chi, inv.trace() / 6.0, 1e-12);
    EXPECT_EQ(code_of([&] { implied_lambda2_diagonal(l1, Matrix::Zero(5, 5)); }), ErrorCode::DimensionMismatch);
}

// ----------------------------------------------------------------- local law

TEST(LocalLaw, ShiftHasZeroDeviation) {
    JEnsemble e;
    e.kind = JKind::Shift;
    e.shift = 0.5;
    const auto ex = local_law_experiment(randmat::Uniform{1.0, 2.0}, e, {64}, seeds(3));
    ASSERT_EQ(ex.reports.size(), 3u);
    for (const auto& r : ex.reports) {
        EXPECT_LT(r.l2_deviation, 1e-28);
        EXPECT_NEAR(r.lambda2_predicted, 0.5, 1e-12);
    }
}

TEST(LocalLaw, ReportFieldsAreConsistent) {
    JEnsemble e;
    const auto ex = local_law_experiment(randmat::Uniform{1.0, 2.0}, e, {64}, {7});
    const auto& r = ex.reports.at(0);
    EXPECT_EQ(r.seed, 7u);
    EXPECT_NEAR(r.l2_deviation, mean_square_deviation(r.lambda2_diagonal, r.lambda2_predicted), 1e-18);
    EXPECT_TRUE(std::isfinite(r.resolvent_norm));
}

TEST(LocalLaw, HaarDeviationDecaysWithSize) {
    JEnsemble e;
    const auto ex = local_law_experiment(randmat::Uniform{1.0, 2.0}, e, {128, 256, 512}, seeds(10));
    const double m128 = median_deviation(ex, 128), m256 = median_deviation(ex, 256), m512 = median_deviation(ex, 512);
    EXPECT_LT(m256, m128);
    EXPECT_LT(m512, m256);
    EXPECT_LT(m512, 0.5 * m128);
}

TEST(LocalLaw, HadamardDeviationDecaysWithSize) {
    JEnsemble e;
    e.kind = JKind::HadamardRotated;
    const auto ex = local_law_experiment(randmat::Uniform{1.0, 2.0}, e, {128, 512}, seeds(10));
    EXPECT_LT(median_deviation(ex, 512), 0.5 * median_deviation(ex, 128));
}

TEST(LocalLaw, DependentControlDoesNotDecay) {
    JEnsemble e;
    e.kind = JKind::DependentControl;
    e.noise_norm = 1e-3;
    const auto ex = local_law_experiment(randmat::Uniform{1.0, 2.0}, e, {128, 512}, seeds(5));
    const double a = median_deviation(ex, 128), b = median_deviation(ex, 512);
    EXPECT_GT(b, 0.5 * a);
    EXPECT_GT(b, 1e-3);
}

// -------------------------------------------------------- Neumann series

TEST(NeumannDecomposition, PointSpectrumIsDegenerate) {
    const Vector l1 = randmat::diag_from_law(8, randmat::Uniform{1.0, 2.0}, 1);
    EXPECT_EQ(code_of([&] { neumann_decomposition_check(l1, 0.3 * Matrix::Identity(8, 8)); }),
              ErrorCode::DegenerateSpectrum);
}

TEST(NeumannDecomposition, HaarInstanceReconstructs) {
    JEnsemble e;
    const auto inst = draw_local_law_instance(randmat::Uniform{1.0, 2.0}, e, 128, 3);
    const auto r = neumann_decomposition_check(inst.lambda1, inst.j, 64);
    ASSERT_LT(r.spectral_radius_EJEY, 1.0);
    EXPECT_FALSE(r.series_diverges);
    EXPECT_LT(r.reconstruction_error, 1e-6);
    EXPECT_LT(std::abs(r.trace_EJ), 1e-8);
    EXPECT_LT(std::abs(r.trace_EY), 1e-8);
    // Errors shrink until they hit rounding.
    for (std::size_t i = 1; i < r.errors.size(); ++i) {
        if (r.errors[i - 1] > 1e-12) EXPECT_LT(r.errors[i], r.errors[i - 1]);
    }
    EXPECT_EQ(r.orders.back(), 64);
}

TEST(NeumannDecomposition, TruncationValidation) {
    const Vector l1 = randmat::diag_from_law(4, randmat::Uniform{1.0, 2.0}, 1);
    EXPECT_EQ(code_of([&] { neumann_decomposition_check(l1, Matrix::Identity(4, 4), 0); }), ErrorCode::InvalidParameter);
}

// ---------------------------------------------------------------- Rademacher

TEST(RademacherTraces, ZeroAndIdentity) {
    const auto z = rademacher_trace_check(Matrix::Zero(16, 16), seeds(10));
    EXPECT_EQ(z.mean_abs_trace_EZ, 0.0);
    EXPECT_EQ(z.mean_abs_trace_EZE, 0.0);
    const int n = 1024;
    const auto id = rademacher_trace_check(Matrix::Identity(n, n), seeds(100));
    // E|mean of n signs| ~ sqrt(2 / (pi n))
    EXPECT_NEAR(id.mean_abs_trace_EZ, std::sqrt(2.0 / (M_PI * n)), 0.3 * std::sqrt(2.0 / (M_PI * n)));
}

TEST(RademacherTraces, ShrinkWithSize) {
    auto e_of = [](Eigen::Index n) {
        return centered_inverse(randmat::diag_from_law(n, randmat::Uniform{1.0, 2.0}, 5).array() + 0.4);
    };
    const auto a = rademacher_trace_check(e_of(256), seeds(100));
    const auto b = rademacher_trace_check(e_of(1024), seeds(100));
    const double ratio = a.mean_abs_trace_EZ / b.mean_abs_trace_EZ;
    EXPECT_GT(ratio, 1.4);
    EXPECT_LT(ratio, 2.8);
    EXPECT_LT(std::abs(centered_inverse(Vector::LinSpaced(9, 1.0, 3.0)).trace()), 1e-14);
}

// ---------------------------------------------------------- scalar lambda2

TEST(ScalarLambda2, OrthogonalDesignIsExact) {
    const Matrix o = randmat::haar_orthogonal(32, 6);
    const auto r = scalar_lambda2_check(Vector::Constant(32, 0.8), Vector::Constant(32, 1.9), o);
    EXPECT_NEAR(r.lambda2w, 1.9, 1e-10);
    EXPECT_NEAR(r.lambda2z, 0.8, 1e-10);
    EXPECT_LT(r.residual_w, 1e-10);
    EXPECT_LT(r.residual_z, 1e-10);
    EXPECT_LT(r.trace_identity_residual, 1e-10);
}

TEST(ScalarLambda2, ResidualsDecreaseWithSize) {
    std::vector<double> rw, rz;
    for (Eigen::Index k : {128, 256, 512}) {
        std::vector<double> w, z;
        for (std::uint64_t s = 0; s < 5; ++s) {
            const Eigen::Index n = k / 2;
            const Matrix x = randmat::gaussian_iid(n, k, 1.0 / std::sqrt(static_cast<double>(n)), s);
            const auto r = scalar_lambda2_check(randmat::diag_from_law(k, randmat::Uniform{0.5, 1.5}, s, 0),
                                                 randmat::diag_from_law(n, randmat::Uniform{0.5, 1.5}, s, 1), x);
            w.push_back(r.residual_w);
            z.push_back(r.residual_z);
        }
        rw.push_back(median(w));
        rz.push_back(median(z));
    }
    EXPECT_GT(rw[0], rw[1]);
    EXPECT_GT(rw[1], rw[2]);
    EXPECT_GT(rz[0], rz[1]);
    EXPECT_GT(rz[1], rz[2]);
}

TEST(EffectiveScalars, PointMassReducesToOrthogonalCase) {
    const auto r = effective_scalars(freeprob::EmpiricalSpectrum::point_mass(0.8, 16),
                                  freeprob::EmpiricalSpectrum::point_mass(1.9, 16), Vector::Ones(16), 1.0, 1e-12);
    EXPECT_NEAR(r.lambda1w_eff, 0.8, 1e-10);
    EXPECT_NEAR(r.lambda1z_eff, 1.9, 1e-10);
    EXPECT_NEAR(r.lambda2w, 1.9, 1e-10);
    EXPECT_NEAR(r.lambda2z, 0.8, 1e-10);
    EXPECT_LT(r.trace_identity_residual, 1e-10);
    EXPECT_LT(r.consistency_residual, 1e-10);
}

TEST(EffectiveScalars, ConsistentOnNonTrivialSpectra) {
    const Matrix x = randmat::gaussian_iid(128, 256, 1.0 / std::sqrt(128.0), 2);
    Vector t = Vector::Zero(256);
    t.tail(128) = symmetric_eigenvalues(x * x.transpose()).cwiseMax(0.0);
    const double tol = 1e-12;
    const auto r = effective_scalars(freeprob::EmpiricalSpectrum(randmat::diag_from_law(256, randmat::Uniform{0.5, 1.5}, 2)),
                                  freeprob::EmpiricalSpectrum(randmat::diag_from_law(128, randmat::Uniform{0.5, 1.5}, 2, 1)),
                                  t, 0.5, tol);
    EXPECT_LT(r.trace_identity_residual, 1e-8);
    EXPECT_LT(r.consistency_residual, 1e-6);
    EXPECT_EQ(code_of([&] {
                  effective_scalars(freeprob::EmpiricalSpectrum(Vector::Constant(3, -1.0)),
                                 freeprob::EmpiricalSpectrum::point_mass(1.0, 3), Vector::Ones(3), 1.0);
              }),
              ErrorCode::InvalidParameter);
}

TEST(EffectiveScalars, AgreesWithScalarCheckForPointMassLambda1) {
    const Matrix x = randmat::gaussian_iid(256, 512, 1.0 / std::sqrt(256.0), 8);
    const auto th = scalar_lambda2_check(Vector::Constant(512, 0.9), Vector::Constant(256, 1.3), x);
    Vector t = Vector::Zero(512);
    t.tail(256) = symmetric_eigenvalues(x * x.transpose()).cwiseMax(0.0);
    const auto rm = effective_scalars(freeprob::EmpiricalSpectrum::point_mass(0.9, 512),
                                   freeprob::EmpiricalSpectrum::point_mass(1.3, 256), t, 0.5, 1e-13);
    EXPECT_NEAR(rm.lambda2w, th.lambda2w, 1e-6);
    EXPECT_NEAR(rm.lambda2z, th.lambda2z, 1e-6);
}

// ---------------------------------------------------------------- Woodbury

TEST(Woodbury, Examples) {
    const Matrix o = randmat::haar_orthogonal(12, 1);
    EXPECT_LT(woodbury_identity_check(Vector::Constant(12, 0.6), Vector::Constant(12, 2.0), o), 1e-12);
    const Matrix x = randmat::gaussian_iid(32, 20, 0.3, 2);
    EXPECT_LT(woodbury_identity_check(randmat::diag_from_law(20, randmat::Uniform{0.5, 2.0}, 1),
                                      randmat::diag_from_law(32, randmat::Uniform{0.5, 2.0}, 1, 1), x),
              1e-10);
    EXPECT_EQ(code_of([] { woodbury_identity_check(Vector::Ones(3), Vector::Ones(2), Matrix::Zero(2, 3)); }),
              ErrorCode::DegenerateSpectrum);
}

}  // namespace
