#pragma once

#include <cmath>
#include <random>

#include "beltrami/beltrami.hpp"

namespace testing_support {

using beltrami::BeltramiPair;
using beltrami::Complex;
using beltrami::Mat2;

/// Random pair with |mu| + |nu| = k * u, u uniform in [0,1].
inline BeltramiPair random_pair(std::mt19937_64& rng, double k_max) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double k = k_max * U(rng);
    const double split = U(rng);
    const double two_pi = 2.0 * M_PI;
    return {std::polar(k * split, two_pi * U(rng)), std::polar(k * (1.0 - split), two_pi * U(rng))};
}

/// Random elliptic matrix: rotation * diag(a, b) * rotation^T plus an antisymmetric part.
inline Mat2 random_elliptic(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double th = 2.0 * M_PI * U(rng);
    Mat2 R;
    R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Mat2 D = Mat2::Zero();
    D(0, 0) = 0.2 + 3.0 * U(rng);
    D(1, 1) = 0.2 + 3.0 * U(rng);
    const double b = 2.0 * (U(rng) - 0.5);
    Mat2 A;
    A << 0.0, b, -b, 0.0;
    return R * D * R.transpose() + A;
}

inline double max_abs(const Mat2& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace testing_support
