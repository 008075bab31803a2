#pragma once

// Coefficient families sampled at triangle barycenters, and the
// counter-based random stream that makes random families reproducible.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"

namespace beltrami {

/// Stateless counter-based generator: the value depends only on
/// (seed, stream, counter), never on call order.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t bits(std::uint64_t counter) const {
        return mix(mix(seed_ ^ mix(stream_)) ^ counter);
    }

    /// Uniform double in [0, 1).
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

inline Mat2 isotropic(double a) { return a * Mat2::Identity(); }

inline Mat2 hall_matrix(double a, double b) {
    Mat2 m;
    m << a, b, -b, a;
    return m;
}

namespace coeff {

struct Constant {
    Mat2 matrix = Mat2::Identity();
};

/// Isotropic a on the first `fraction` of each period along `direction`
/// (1 = strips varying in x1, 2 = in x2), b elsewhere.
struct Laminate {
    double a = 1.0;
    double b = 5.0;
    int direction = 1;
    double fraction = 0.5;
    int periods = 1;
};

/// Isotropic a and b on alternating squares of side 1/cells.
struct Checkerboard {
    double a = 1.0;
    double b = 4.0;
    int cells = 2;
};

/// Independent random matrices on a cells x cells grid, each in M(1/K, K)
/// for some K <= K_max. Symmetric draws have real nu.
struct RandomPiecewise {
    double K_max = 5.0;
    int cells = 4;
    std::uint64_t seed = 0;
    bool symmetric = false;
};

struct Hall {
    double a = 0.5;
    double b = 0.8660254037844386;
};

/// Row-major cells x cells table of matrices.
struct Table {
    int cells = 1;
    std::vector<Mat2> matrices;
};

} // namespace coeff

using CoefficientSpec =
    std::variant<coeff::Constant, coeff::Laminate, coeff::Checkerboard, coeff::RandomPiecewise, coeff::Hall, coeff::Table>;

namespace detail {

inline double wrap01(double x) { return x - std::floor(x); }

inline int cell_index(double x, int cells) {
    const int i = static_cast<int>(std::floor(wrap01(x) * cells));
    return std::min(i, cells - 1);
}

} // namespace detail

/// Random Beltrami pair with |mu| + |nu| <= (K_max - 1)/(K_max + 1) for one cell.
inline BeltramiPair random_pair(const coeff::RandomPiecewise& spec, std::uint64_t cell) {
    const CounterRng rng(spec.seed, 0x5eedULL);
    const std::uint64_t base = 8 * cell;
    const double k = dilatation_of_K(spec.K_max) * rng.uniform(base);
    const double split = rng.uniform(base + 1);
    const double phase_mu = 2.0 * std::numbers::pi * rng.uniform(base + 2);
    const double phase_nu = 2.0 * std::numbers::pi * rng.uniform(base + 3);
    BeltramiPair p;
    p.mu = std::polar(k * split, phase_mu);
    if (spec.symmetric)
        p.nu = Complex(rng.uniform(base + 4) < 0.5 ? -k * (1.0 - split) : k * (1.0 - split), 0.0);
    else
        p.nu = std::polar(k * (1.0 - split), phase_nu);
    return p;
}

inline Mat2 sample_coefficient(const CoefficientSpec& spec, const Vec2& x) {
    return std::visit(
        [&](const auto& s) -> Mat2 {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, coeff::Constant>) {
                return s.matrix;
            } else if constexpr (std::is_same_v<T, coeff::Laminate>) {
                const double coord = s.direction == 1 ? x.x() : x.y();
                return isotropic(detail::wrap01(coord * s.periods) < s.fraction ? s.a : s.b);
            } else if constexpr (std::is_same_v<T, coeff::Checkerboard>) {
                const int i = detail::cell_index(x.x(), s.cells);
                const int j = detail::cell_index(x.y(), s.cells);
                return isotropic((i + j) % 2 == 0 ? s.a : s.b);
            } else if constexpr (std::is_same_v<T, coeff::RandomPiecewise>) {
                const int i = detail::cell_index(x.x(), s.cells);
                const int j = detail::cell_index(x.y(), s.cells);
                return sigma_from_beltrami(random_pair(s, static_cast<std::uint64_t>(j) * s.cells + i));
            } else if constexpr (std::is_same_v<T, coeff::Hall>) {
                return hall_matrix(s.a, s.b);
            } else {
                const int i = detail::cell_index(x.x(), s.cells);
                const int j = detail::cell_index(x.y(), s.cells);
                return s.matrices.at(static_cast<std::size_t>(j) * s.cells + i);
            }
        },
        spec);
}

inline void validate(const CoefficientSpec& spec) {
    std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, coeff::Constant>) {
                require_elliptic(s.matrix);
            } else if constexpr (std::is_same_v<T, coeff::Laminate>) {
                BELTRAMI_THROW_IF(!(s.a > 0.0 && s.b > 0.0), ConfigError, "laminate phases must be positive");
                BELTRAMI_THROW_IF(s.direction != 1 && s.direction != 2, ConfigError, "laminate direction must be 1 or 2");
                BELTRAMI_THROW_IF(!(s.fraction > 0.0 && s.fraction < 1.0), ConfigError, "laminate fraction must be in (0,1)");
                BELTRAMI_THROW_IF(s.periods < 1, ConfigError, "laminate periods must be >= 1");
            } else if constexpr (std::is_same_v<T, coeff::Checkerboard>) {
                BELTRAMI_THROW_IF(!(s.a > 0.0 && s.b > 0.0), ConfigError, "checkerboard phases must be positive");
                BELTRAMI_THROW_IF(s.cells < 1, ConfigError, "checkerboard cells must be >= 1");
            } else if constexpr (std::is_same_v<T, coeff::RandomPiecewise>) {
                BELTRAMI_THROW_IF(!(s.K_max >= 1.0), ConfigError, "random_piecewise K_max must be >= 1");
                BELTRAMI_THROW_IF(s.cells < 1, ConfigError, "random_piecewise cells must be >= 1");
            } else if constexpr (std::is_same_v<T, coeff::Hall>) {
                require_elliptic(hall_matrix(s.a, s.b));
            } else {
                BELTRAMI_THROW_IF(s.cells < 1, ConfigError, "table cells must be >= 1");
                BELTRAMI_THROW_IF(s.matrices.size() != static_cast<std::size_t>(s.cells) * s.cells, ConfigError,
                                  "table needs cells*cells matrices");
                for (const auto& m : s.matrices) require_elliptic(m);
            }
        },
        spec);
}

/// Piecewise-constant field sampled at triangle barycenters.
inline ElementMatrixField make_coefficient_field(const MeshPtr& mesh, const CoefficientSpec& spec) {
    validate(spec);
    std::vector<Mat2> values(mesh->num_triangles());
    for (std::size_t t = 0; t < values.size(); ++t) values[t] = sample_coefficient(spec, mesh->barycenter(t));
    return {mesh, std::move(values)};
}

inline std::string family_name(const CoefficientSpec& spec) {
    static const char* names[] = {"constant", "laminate", "checkerboard", "random_piecewise", "hall", "table"};
    return names[spec.index()];
}

} // namespace beltrami
