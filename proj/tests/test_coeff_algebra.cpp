#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "beltrami/coeff_algebra.hpp"
#include "test_support.hpp"

using namespace beltrami;
using testing_support::max_abs;

namespace {

const double kSqrt3 = std::sqrt(3.0);

Mat2 extremal(double lambda, double sign = 1.0) {
    const double b = sign * std::sqrt(1.0 - lambda * lambda);
    Mat2 m;
    m << lambda, b, -b, lambda;
    return m;
}

} // namespace

TEST(SigmaFromBeltrami, ZeroPairIsIdentity) {
    EXPECT_LE(max_abs(sigma_from_beltrami({0.0, 0.0}) - Mat2::Identity()), 1e-15);
}

TEST(SigmaFromBeltrami, ImaginaryNuGivesExtremalMatrix) {
    const Mat2 s = sigma_from_beltrami({0.0, Complex(0.0, kSqrt3 / 3.0)});
    EXPECT_LE(max_abs(s - extremal(0.5)), 1e-15);
}

TEST(SigmaFromBeltrami, RealNegativeNuGivesScalar) {
    const Mat2 s = sigma_from_beltrami({0.0, -1.0 / 3.0});
    EXPECT_LE(max_abs(s - 2.0 * Mat2::Identity()), 1e-15);
}

TEST(SigmaFromBeltrami, RejectsNonEllipticPair) {
    EXPECT_THROW(sigma_from_beltrami({0.5, 0.5}), DomainError);
    EXPECT_THROW(sigma_from_beltrami({Complex(0.0, 0.7), 0.4}), DomainError);
}

TEST(SigmaFromBeltrami, RejectsCollapsedDenominator) {
    EXPECT_THROW(sigma_from_beltrami({0.0, -(1.0 - 1e-15)}), DegeneratePairError);
}

TEST(SigmaFromBeltrami, ResultSatisfiesBothPositivityConditions) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        const Mat2 s = sigma_from_beltrami(testing_support::random_pair(rng, 0.95));
        EXPECT_GT(sym_min_eigenvalue(s), 0.0);
        EXPECT_GT(sym_min_eigenvalue(inverse2(s)), 0.0);
    }
}

TEST(BeltramiFromSigma, Examples) {
    auto p = beltrami_from_sigma(Mat2::Identity());
    EXPECT_LE(std::abs(p.mu) + std::abs(p.nu), 1e-15);

    p = beltrami_from_sigma(2.0 * Mat2::Identity());
    EXPECT_LE(std::abs(p.mu), 1e-15);
    EXPECT_LE(std::abs(p.nu - Complex(-1.0 / 3.0, 0.0)), 1e-15);

    p = beltrami_from_sigma(extremal(0.5));
    EXPECT_LE(std::abs(p.mu), 1e-15);
    EXPECT_LE(std::abs(p.nu - Complex(0.0, kSqrt3 / 3.0)), 1e-15);
    const double K = 2.0 + kSqrt3;
    EXPECT_NEAR(p.dilatation_sum(), (K - 1.0) / (K + 1.0), 1e-15);
    EXPECT_NEAR(p.dilatation_sum(), kSqrt3 / 3.0, 1e-15);
}

TEST(BeltramiFromSigma, RejectsNonElliptic) {
    Mat2 s;
    s << 1.0, 0.0, 0.0, -1.0;
    EXPECT_THROW(beltrami_from_sigma(s), NonEllipticError);
    s << 1.0, 3.0, -3.0, 0.0;  // symmetric part only semidefinite
    EXPECT_THROW(beltrami_from_sigma(s), NonEllipticError);
}

TEST(EllipticityConstants, Examples) {
    auto c = ellipticity_constants(Mat2::Identity());
    EXPECT_DOUBLE_EQ(c.alpha, 1.0);
    EXPECT_DOUBLE_EQ(c.beta, 1.0);

    Mat2 d = Mat2::Zero();
    d(0, 0) = 2.0;
    d(1, 1) = 3.0;
    c = ellipticity_constants(d);
    EXPECT_NEAR(c.alpha, 2.0, 1e-15);
    EXPECT_NEAR(c.beta, 3.0, 1e-15);

    c = ellipticity_constants(extremal(0.5));
    EXPECT_NEAR(c.alpha, 0.5, 1e-15);
    EXPECT_NEAR(c.beta, 2.0, 1e-15);
}

TEST(EllipticityConstants, AttachesBestConstants) {
    Conductivity s(extremal(0.5));
    const auto c = ellipticity_constants(s);
    ASSERT_TRUE(s.alpha_sigma.has_value());
    ASSERT_TRUE(s.beta_sigma.has_value());
    EXPECT_EQ(*s.alpha_sigma, c.alpha);
    EXPECT_EQ(*s.beta_sigma, c.beta);
}

TEST(KOfBeltrami, Examples) {
    EXPECT_DOUBLE_EQ(K_of_beltrami({0.0, 0.0}), 1.0);
    EXPECT_NEAR(K_of_beltrami({0.25, Complex(0.0, 0.25)}), 3.0, 1e-15);
    EXPECT_NEAR(K_of_beltrami({0.0, Complex(0.0, kSqrt3 / 3.0)}), 2.0 + kSqrt3, 1e-12);
}

TEST(KFromLambda, Examples) {
    EXPECT_DOUBLE_EQ(K_from_lambda(1.0), 1.0);
    EXPECT_DOUBLE_EQ(K_from_lambda(1.0, true), 1.0);
    EXPECT_NEAR(K_from_lambda(0.5), 2.0 + kSqrt3, 1e-12);
    EXPECT_NEAR(K_from_lambda(0.5, true), 2.0, 1e-15);
    EXPECT_THROW(K_from_lambda(0.0), DomainError);
    EXPECT_THROW(K_from_lambda(1.5), DomainError);
}

TEST(AstalaExponent, Examples) {
    auto r = astala_exponent(1.0, 1.0);
    EXPECT_DOUBLE_EQ(r.K_beltrami, 1.0);
    EXPECT_TRUE(std::isinf(r.p_sup));

    r = astala_exponent(0.5, 2.0);
    EXPECT_NEAR(r.K_beltrami, 2.0 + kSqrt3, 1e-12);
    EXPECT_NEAR(r.p_sup, 1.0 + kSqrt3, 1e-12);

    r = astala_exponent(1.0, 4.0);
    EXPECT_NEAR(r.K_beltrami, 2.0 + kSqrt3, 1e-12);
    EXPECT_NEAR(r.p_sup, 1.0 + kSqrt3, 1e-12);
    EXPECT_GT(r.p_sup, 2.0);

    EXPECT_THROW(astala_exponent(2.0, 1.0), DomainError);
    EXPECT_THROW(astala_exponent(0.0, 1.0), DomainError);
}

TEST(AstalaExponent, ScaleInvariant) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.1, 10.0);
    for (int i = 0; i < 200; ++i) {
        double a = U(rng), b = U(rng);
        if (a > b) std::swap(a, b);
        const double c = U(rng);
        const auto r1 = astala_exponent(a, b);
        const auto r2 = astala_exponent(c * a, c * b);
        EXPECT_NEAR(r1.K_beltrami, r2.K_beltrami, 1e-12 * r1.K_beltrami);
        EXPECT_NEAR(r1.lambda, r2.lambda, 1e-14);
        if (std::isfinite(r1.p_sup)) EXPECT_NEAR(r1.p_sup, r2.p_sup, 1e-9 * r1.p_sup);
    }
}

TEST(NormalizeSigma, Identity) {
    const auto n = normalize_sigma(Mat2::Identity());
    EXPECT_DOUBLE_EQ(n.scale, 1.0);
    EXPECT_LE(max_abs(n.sigma_tilde - Mat2::Identity()), 1e-15);
}

TEST(NormalizeSigma, DiagonalLandsInSymmetricClass) {
    Mat2 d = Mat2::Zero();
    d(0, 0) = 1.0;
    d(1, 1) = 4.0;
    const auto n = normalize_sigma(d);
    EXPECT_NEAR(n.scale, 0.5, 1e-15);
    const auto c = ellipticity_constants(n.sigma_tilde);
    EXPECT_NEAR(c.alpha, 0.5, 1e-15);
    EXPECT_NEAR(c.beta, 2.0, 1e-15);
}

TEST(NormalizeSigma, ExtremalMatrixAlreadyNormalized) {
    const auto n = normalize_sigma(extremal(0.5));
    EXPECT_NEAR(n.scale, 1.0, 1e-15);
    const auto c = ellipticity_constants(n.sigma_tilde);
    EXPECT_NEAR(c.alpha, 0.5, 1e-15);
    EXPECT_NEAR(c.beta, 2.0, 1e-15);
}

TEST(NormalizeSigma, ConstantsBecomeReciprocal) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 500; ++i) {
        const Mat2 s = testing_support::random_elliptic(rng);
        const auto c = ellipticity_constants(s);
        const auto n = normalize_sigma(s);
        const auto ct = ellipticity_constants(n.sigma_tilde);
        const double lambda = std::sqrt(c.alpha / c.beta);
        EXPECT_NEAR(ct.alpha, lambda, 1e-12);
        EXPECT_NEAR(ct.beta, 1.0 / lambda, 1e-11);
    }
}

TEST(RoundTrip, PairsAndMatrices) {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 10000; ++i) {
        const auto p = testing_support::random_pair(rng, 0.95);
        const auto q = beltrami_from_sigma(sigma_from_beltrami(p));
        ASSERT_LE(std::abs(q.mu - p.mu), 1e-12);
        ASSERT_LE(std::abs(q.nu - p.nu), 1e-12);
    }
    for (int i = 0; i < 10000; ++i) {
        const Mat2 s = testing_support::random_elliptic(rng);
        ASSERT_LE(max_abs(sigma_from_beltrami(beltrami_from_sigma(s)) - s), 1e-12 * std::max(1.0, max_abs(s)));
    }
}

TEST(PropositionEllEG, ForwardBoundsOnTheCriticalSphere) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double K = 1.0 + 9.0 * U(rng);
        const double k = dilatation_of_K(K);
        const double split = U(rng);
        const BeltramiPair p{std::polar(k * split, 2 * M_PI * U(rng)), std::polar(k * (1 - split), 2 * M_PI * U(rng))};
        const auto c = ellipticity_constants(sigma_from_beltrami(p));
        EXPECT_GE(c.alpha, 1.0 / K - 1e-10);
        EXPECT_LE(c.beta, K + 1e-10);
    }
}

TEST(PropositionEllEG, ForwardEqualityForRealNu) {
    for (double K : {1.5, 2.0, 5.0}) {
        const double k = dilatation_of_K(K);
        const auto plus = ellipticity_constants(sigma_from_beltrami({0.0, k}));
        EXPECT_NEAR(plus.alpha, 1.0 / K, 1e-12);
        const auto minus = ellipticity_constants(sigma_from_beltrami({0.0, -k}));
        EXPECT_NEAR(minus.beta, K, 1e-12);
    }
}

TEST(PropositionEllEG, Backward) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        // normalized matrices lie in M(lambda, 1/lambda) with lambda = sqrt(alpha/beta)
        const auto n = normalize_sigma(testing_support::random_elliptic(rng));
        const auto c = ellipticity_constants(n.sigma_tilde);
        const double lambda = std::min(c.alpha, 1.0 / c.beta);
        EXPECT_LE(K_of_beltrami(beltrami_from_sigma(n.sigma_tilde)), K_from_lambda(lambda) + 1e-10);
    }
    for (double lambda : {0.2, 0.5, 0.9}) {
        for (double sign : {1.0, -1.0}) {
            const double K = K_of_beltrami(beltrami_from_sigma(extremal(lambda, sign)));
            EXPECT_NEAR(K, K_from_lambda(lambda), 1e-10);
        }
    }
}

TEST(PropositionEllEG, SymmetricBackwardUsesOneOverLambda) {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> U(0.1, 5.0);
    for (int i = 0; i < 500; ++i) {
        Mat2 d = Mat2::Zero();
        d(0, 0) = U(rng);
        d(1, 1) = U(rng);
        const auto n = normalize_sigma(d);
        const auto c = ellipticity_constants(n.sigma_tilde);
        EXPECT_LE(K_of_beltrami(beltrami_from_sigma(n.sigma_tilde)), K_from_lambda(c.alpha, true) + 1e-10);
    }
}

TEST(TauBound, ClosedFormExamples) {
    EXPECT_DOUBLE_EQ(tau_ellipticity_bound(1.0), 1.0);
    EXPECT_NEAR(tau_ellipticity_bound(2.0), 1.0 - kSqrt3 / 2.0, 1e-15);
    EXPECT_NEAR(tau_ellipticity_bound(2.0), 0.133975, 1e-6);
}

TEST(TauBound, OracleAgreesWithClosedFormAndIsMonotone) {
    double prev = kInfinity;
    for (double K : {1.0, 1.5, 2.0, 4.0}) {
        const auto r = tau_ellipticity_oracle(K);
        EXPECT_NEAR(r.minimum, r.closed_form, 1e-6) << "K=" << K;
        EXPECT_LE(r.minimum, prev + 1e-12);
        prev = r.minimum;
        // the "1 + sqrt" value exceeds 1 and cannot be a minimum of F <= F(D=1, H=0)
        if (K > 1.0) EXPECT_GT(r.plus_branch, 1.0);
    }
    EXPECT_NEAR(tau_ellipticity_oracle(1.0).minimum, 1.0, 1e-6);
}

TEST(TauBound, MinimizerLocation) {
    const double K = 2.0;
    const auto r = tau_ellipticity_oracle(K);
    EXPECT_NEAR(r.D, 1.0, 1e-4);
    EXPECT_NEAR(r.H, 4.0 * (1.0 - 1.0 / (K * K)), 1e-3);
    EXPECT_NEAR(r.T, 2.0 / K, 1e-3);
    // the objective at H = 1 - 1/K^2 is larger than the true minimum
    EXPECT_GT(r.at_short_H, r.minimum + 1e-3);
}
