#pragma once

// Algebra between Beltrami pairs (mu, nu) and 2x2 conductivity matrices,
// together with the sharp ellipticity-constant formulas that relate them.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <utility>

#include "beltrami/errors.hpp"

namespace beltrami {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;
using Complex = std::complex<double>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Rotation by pi/2, J = [[0,-1],[1,0]].
inline Mat2 rotation_J() {
    Mat2 J;
    J << 0.0, -1.0, 1.0, 0.0;
    return J;
}

struct BeltramiPair {
    Complex mu{0.0, 0.0};
    Complex nu{0.0, 0.0};

    double dilatation_sum() const { return std::abs(mu) + std::abs(nu); }
    bool elliptic() const { return dilatation_sum() < 1.0; }
};

/// Real 2x2 conductivity. The best ellipticity constants are attached
/// once computed by ellipticity_constants().
struct Conductivity {
    Mat2 entries = Mat2::Identity();
    std::optional<double> alpha_sigma;
    std::optional<double> beta_sigma;

    Conductivity() = default;
    explicit Conductivity(const Mat2& m) : entries(m) {}
};

struct EllipticityReport {
    double alpha = 1.0;
    double beta = 1.0;
    double K_beltrami = 1.0;
    double lambda = 1.0;
    double p_sup = kInfinity;
};

struct EllipticityConstants {
    double alpha;
    double beta;
};

/// Smallest eigenvalue of (m + m^T)/2 by the 2x2 quadratic formula.
inline double sym_min_eigenvalue(const Mat2& m) {
    const double a = m(0, 0);
    const double d = m(1, 1);
    const double off = 0.5 * (m(0, 1) + m(1, 0));
    return 0.5 * (a + d - std::hypot(a - d, 2.0 * off));
}

inline double sym_max_eigenvalue(const Mat2& m) {
    const double a = m(0, 0);
    const double d = m(1, 1);
    const double off = 0.5 * (m(0, 1) + m(1, 0));
    return 0.5 * (a + d + std::hypot(a - d, 2.0 * off));
}

inline Mat2 inverse2(const Mat2& m) {
    const double det = m.determinant();
    Mat2 inv;
    inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return inv / det;
}

/// Both positivity invariants of the class M(alpha, beta).
inline bool is_elliptic(const Mat2& m) {
    if (!m.allFinite()) return false;
    if (!(sym_min_eigenvalue(m) > 0.0)) return false;
    const double det = m.determinant();
    if (!(det > 0.0)) return false;
    return sym_min_eigenvalue(inverse2(m)) > 0.0;
}

inline void require_elliptic(const Mat2& m) {
    BELTRAMI_THROW_IF(!is_elliptic(m), NonEllipticError,
                      "matrix is not elliptic: symmetric part of sigma or sigma^-1 is not positive definite");
}

inline EllipticityConstants ellipticity_constants(const Mat2& sigma) {
    require_elliptic(sigma);
    const double alpha = sym_min_eigenvalue(sigma);
    const double inv_beta = sym_min_eigenvalue(inverse2(sigma));
    return {alpha, 1.0 / inv_beta};
}

inline EllipticityConstants ellipticity_constants(Conductivity& sigma) {
    const auto c = ellipticity_constants(sigma.entries);
    sigma.alpha_sigma = c.alpha;
    sigma.beta_sigma = c.beta;
    return c;
}

inline Mat2 sigma_from_beltrami(const BeltramiPair& p) {
    BELTRAMI_THROW_IF(!p.elliptic(), DomainError, "Beltrami pair violates |mu|+|nu| < 1");
    const Complex one{1.0, 0.0};
    const double den = std::norm(one + p.nu) - std::norm(p.mu);
    const double scale = std::max(1.0, std::norm(one + p.nu) + std::norm(p.mu));
    BELTRAMI_THROW_IF(den <= 1e-14 * scale, DegeneratePairError,
                      "Beltrami pair is degenerate: |1+nu|^2 - |mu|^2 vanishes");
    Mat2 s;
    s(0, 0) = (std::norm(one - p.mu) - std::norm(p.nu)) / den;
    s(0, 1) = 2.0 * (p.nu - p.mu).imag() / den;
    s(1, 0) = -2.0 * (p.nu + p.mu).imag() / den;
    s(1, 1) = (std::norm(one + p.mu) - std::norm(p.nu)) / den;
    return s;
}

inline BeltramiPair beltrami_from_sigma(const Mat2& s) {
    require_elliptic(s);
    const double tr = s.trace();
    const double det = s.determinant();
    const double den = 1.0 + tr + det;
    BeltramiPair p;
    p.mu = Complex(s(1, 1) - s(0, 0), -(s(0, 1) + s(1, 0))) / den;
    p.nu = Complex(1.0 - det, s(0, 1) - s(1, 0)) / den;
    return p;
}

/// Smallest K >= 1 with |mu| + |nu| <= (K-1)/(K+1).
inline double K_of_beltrami(const BeltramiPair& p) {
    BELTRAMI_THROW_IF(!p.elliptic(), DomainError, "Beltrami pair violates |mu|+|nu| < 1");
    const double k = p.dilatation_sum();
    return (1.0 + k) / (1.0 - k);
}

/// Dilatation bound (K-1)/(K+1).
inline double dilatation_of_K(double K) { return (K - 1.0) / (K + 1.0); }

inline double K_from_lambda(double lambda, bool symmetric_only = false) {
    BELTRAMI_THROW_IF(!(lambda > 0.0 && lambda <= 1.0), DomainError, "lambda must lie in (0,1]");
    if (symmetric_only) return 1.0 / lambda;
    return (1.0 + std::sqrt(1.0 - lambda * lambda)) / lambda;
}

/// K of a sigma-harmonic function's quasiregular stream map, and the
/// critical higher-integrability exponent 2K/(K-1).
inline EllipticityReport astala_exponent(double alpha, double beta) {
    BELTRAMI_THROW_IF(!(alpha > 0.0 && beta > 0.0), DomainError, "ellipticity constants must be positive");
    BELTRAMI_THROW_IF(alpha > beta, DomainError, "alpha must not exceed beta");
    EllipticityReport r;
    r.alpha = alpha;
    r.beta = beta;
    const double ratio = beta / alpha;
    r.K_beltrami = std::sqrt(ratio) + std::sqrt(ratio - 1.0);
    r.lambda = std::sqrt(alpha / beta);
    r.p_sup = r.K_beltrami > 1.0 ? 2.0 * r.K_beltrami / (r.K_beltrami - 1.0) : kInfinity;
    return r;
}

struct NormalizedSigma {
    Mat2 sigma_tilde;
    double scale;
};

/// Rescales sigma so that its best constants become (lambda, 1/lambda)
/// with lambda = sqrt(alpha/beta). sigma-harmonic functions are unchanged.
inline NormalizedSigma normalize_sigma(const Mat2& sigma) {
    const auto c = ellipticity_constants(sigma);
    const double scale = 1.0 / std::sqrt(c.alpha * c.beta);
    return {scale * sigma, scale};
}

// ---------------------------------------------------------------------------
// Ellipticity of the push-forward coefficient tau = T_f sigma.

enum class TauBoundMode { closed_form, oracle };

struct TauOracleResult {
    double K = 1.0;
    double minimum = 1.0;      // constrained minimum of F found numerically
    double D = 1.0;            // minimizer
    double H = 0.0;
    double T = 2.0;
    double closed_form = 1.0;  // 1 - sqrt(1 - 1/K^2)
    double plus_branch = 1.0;  // 1 + sqrt(1 - 1/K^2), the sign-flipped closed form
    double at_short_H = 1.0;   // F at D=1, H=1-1/K^2, a quarter of the optimal H
    std::size_t grid_evaluations = 0;
    std::size_t refinement_steps = 0;
};

namespace detail {

inline double tau_objective(double D, double H) {
    return 0.5 * (D + 1.0 - std::sqrt((D - 1.0) * (D - 1.0) + H));
}

/// Constraints: the lower eigenvalue of sym(sigma), and that divided by
/// det sigma, both at least 1/K.
inline bool tau_feasible(double D, double H, double T, double K) {
    constexpr double slack = 1e-15;  // F moves like sqrt(slack) near K = 1
    if (D < 0.0 || D > 1.0 || H < 0.0 || T < 0.0) return false;
    const double q = T * T + H - 4.0 * D;
    if (q < -slack) return false;
    const double low = 0.5 * (T - std::sqrt(std::max(q, 0.0)));
    if (low < 1.0 / K - slack) return false;
    if (D <= 0.0) return false;
    return low / D >= 1.0 / K - slack;
}

} // namespace detail

inline double tau_ellipticity_bound_closed_form(double K) {
    BELTRAMI_THROW_IF(!(K >= 1.0), DomainError, "K must be >= 1");
    return 1.0 - std::sqrt(1.0 - 1.0 / (K * K));
}

namespace detail {

/// Some T in the search range is feasible for (D, H). Candidates are the T
/// grid plus T* = sqrt(4D - H), where q = 0: the lower eigenvalue
/// (T - sqrt(T^2 + H - 4D))/2 decreases in T, so T* is the best T when H < 4D.
inline bool tau_some_T_feasible(double D, double H, double K, int nodes, double t_max, double* T_out) {
    const double t_star = std::sqrt(std::max(0.0, 4.0 * D - H));
    if (t_star <= t_max && tau_feasible(D, H, t_star, K)) {
        if (T_out) *T_out = t_star;
        return true;
    }
    for (int k = 0; k < nodes; ++k) {
        const double T = t_max * k / (nodes - 1);
        if (tau_feasible(D, H, T, K)) {
            if (T_out) *T_out = T;
            return true;
        }
    }
    return false;
}

} // namespace detail

/// Constrained minimum of F(D, H) over D in [0,1], H in [0,4], T in [0,10].
/// F decreases in H, so for each D the search keeps the largest feasible H:
/// a grid scan over H followed by bisection to 1e-13. The outer D search is
/// a grid followed by a shrinking 1-D pattern search down to step 1e-10.
inline TauOracleResult tau_ellipticity_oracle(double K, int grid_nodes = 201) {
    BELTRAMI_THROW_IF(!(K >= 1.0), DomainError, "K must be >= 1");
    BELTRAMI_THROW_IF(grid_nodes < 2, DomainError, "grid needs at least two nodes per axis");
    constexpr double d_max = 1.0, h_max = 4.0, t_max = 10.0;

    TauOracleResult r;
    r.K = K;
    const double s = std::sqrt(1.0 - 1.0 / (K * K));
    r.closed_form = 1.0 - s;
    r.plus_branch = 1.0 + s;
    r.at_short_H = detail::tau_objective(1.0, 1.0 - 1.0 / (K * K));
    const double n = static_cast<double>(grid_nodes - 1);

    // best value over H for one D; NaN when no H is feasible
    auto best_for_D = [&](double D, double* H_out, double* T_out) {
        int last = -1;
        for (int j = 0; j < grid_nodes; ++j) {
            ++r.grid_evaluations;
            if (detail::tau_some_T_feasible(D, h_max * j / n, K, grid_nodes, t_max, nullptr)) last = j;
        }
        if (last < 0) return std::numeric_limits<double>::quiet_NaN();
        double lo = h_max * last / n;
        double hi = last + 1 < grid_nodes ? h_max * (last + 1) / n : lo;
        while (hi - lo > 1e-13) {
            const double mid = 0.5 * (lo + hi);
            if (detail::tau_some_T_feasible(D, mid, K, grid_nodes, t_max, nullptr))
                lo = mid;
            else
                hi = mid;
        }
        detail::tau_some_T_feasible(D, lo, K, grid_nodes, t_max, T_out);
        if (H_out) *H_out = lo;
        return detail::tau_objective(D, lo);
    };

    double best = kInfinity;
    double D_best = 1.0;
    for (int i = 0; i < grid_nodes; ++i) {
        const double D = d_max * i / n;
        const double f = best_for_D(D, nullptr, nullptr);
        if (f < best) {
            best = f;
            D_best = D;
        }
    }
    BELTRAMI_THROW_IF(!std::isfinite(best), Error, "tau oracle found no feasible grid point");

    double step = d_max / n;
    while (step >= 1e-10) {
        bool improved = false;
        for (double dir : {-1.0, 1.0}) {
            const double D = std::clamp(D_best + dir * step, 0.0, d_max);
            const double f = best_for_D(D, nullptr, nullptr);
            if (f < best) {
                best = f;
                D_best = D;
                improved = true;
            }
        }
        ++r.refinement_steps;
        if (!improved) step *= 0.5;
    }
    r.D = D_best;
    r.minimum = best_for_D(D_best, &r.H, &r.T);
    return r;
}

inline double tau_ellipticity_bound(double K, TauBoundMode mode = TauBoundMode::closed_form) {
    if (mode == TauBoundMode::closed_form) return tau_ellipticity_bound_closed_form(K);
    return tau_ellipticity_oracle(K).minimum;
}

} // namespace beltrami
