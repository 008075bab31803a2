#pragma once

// Structured triangulations of the unit square, regular n-gons and the
// periodic unit cell; P1 nodal fields, per-element fields, and dyadic square
// families used by the weight diagnostics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/errors.hpp"

namespace beltrami {

enum class DomainKind { unit_square, regular_ngon, periodic_cell };
enum class Periodicity { none, unit_square_identification };

struct DomainSpec {
    DomainKind kind = DomainKind::unit_square;
    int n_sides = 4;       // regular_ngon only
    double radius = 1.0;   // regular_ngon only

    static DomainSpec unit_square() { return {}; }
    static DomainSpec periodic_cell() { return {DomainKind::periodic_cell, 4, 1.0}; }
    static DomainSpec regular_ngon(int n, double r) { return {DomainKind::regular_ngon, n, r}; }

    double area() const {
        if (kind == DomainKind::regular_ngon)
            return 0.5 * n_sides * radius * radius * std::sin(2.0 * std::numbers::pi / n_sides);
        return 1.0;
    }
};

using Triangle = std::array<int, 3>;

struct TriMesh {
    std::vector<Vec2> vertices;
    std::vector<Triangle> triangles;
    std::vector<int> boundary_loop;
    Periodicity periodicity = Periodicity::none;
    // Vertex -> equivalence class under periodic identification (identity otherwise).
    std::vector<int> vertex_class;
    int free_vertex_count = 0;
    DomainSpec domain;
    int resolution = 0;
    double h = 0.0;

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_triangles() const { return triangles.size(); }

    double signed_area(std::size_t t) const {
        const auto& tri = triangles[t];
        const Vec2 e1 = vertices[tri[1]] - vertices[tri[0]];
        const Vec2 e2 = vertices[tri[2]] - vertices[tri[0]];
        return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
    }
    double area(std::size_t t) const { return std::abs(signed_area(t)); }

    Vec2 barycenter(std::size_t t) const {
        const auto& tri = triangles[t];
        return (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
    }

    /// Gradients of the three P1 hat functions on triangle t.
    std::array<Vec2, 3> basis_gradients(std::size_t t) const {
        const auto& tri = triangles[t];
        const double twice_area = 2.0 * signed_area(t);
        const Mat2 J = rotation_J();
        std::array<Vec2, 3> g;
        for (int i = 0; i < 3; ++i) {
            const Vec2& a = vertices[tri[(i + 1) % 3]];
            const Vec2& b = vertices[tri[(i + 2) % 3]];
            g[i] = J * (b - a) / twice_area;
        }
        return g;
    }

    std::vector<bool> boundary_mask() const {
        std::vector<bool> mask(vertices.size(), false);
        for (int v : boundary_loop) mask[v] = true;
        return mask;
    }

    double total_area() const {
        double s = 0.0;
        for (std::size_t t = 0; t < triangles.size(); ++t) s += area(t);
        return s;
    }
};

using MeshPtr = std::shared_ptr<const TriMesh>;

inline constexpr std::size_t kDefaultTriangleBudget = 8'000'000;

namespace detail {

inline void orient_ccw(TriMesh& m) {
    for (std::size_t t = 0; t < m.triangles.size(); ++t)
        if (m.signed_area(t) < 0.0) std::swap(m.triangles[t][1], m.triangles[t][2]);
}

inline void build_square(TriMesh& m, int n) {
    const int side = n + 1;
    m.vertices.reserve(static_cast<std::size_t>(side) * side);
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            m.vertices.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n);
    auto id = [side](int i, int j) { return j * side + i; };
    m.triangles.reserve(2 * static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    for (int i = 0; i < n; ++i) m.boundary_loop.push_back(id(i, 0));
    for (int j = 0; j < n; ++j) m.boundary_loop.push_back(id(n, j));
    for (int i = n; i > 0; --i) m.boundary_loop.push_back(id(i, n));
    for (int j = n; j > 0; --j) m.boundary_loop.push_back(id(0, j));
}

// Fan around the center, then rings of similar polygons; ring k carries
// k points per side.
inline void build_ngon(TriMesh& m, int n_sides, double radius, int rings) {
    std::vector<Vec2> corners(n_sides);
    for (int s = 0; s < n_sides; ++s) {
        const double th = 2.0 * std::numbers::pi * s / n_sides;
        corners[s] = radius * Vec2(std::cos(th), std::sin(th));
    }
    m.vertices.emplace_back(0.0, 0.0);
    std::vector<int> ring_start(rings + 1, 0);
    for (int k = 1; k <= rings; ++k) {
        ring_start[k] = static_cast<int>(m.vertices.size());
        const double scale = static_cast<double>(k) / rings;
        for (int s = 0; s < n_sides; ++s) {
            const Vec2 a = scale * corners[s];
            const Vec2 b = scale * corners[(s + 1) % n_sides];
            for (int q = 0; q < k; ++q) m.vertices.push_back(a + (b - a) * (static_cast<double>(q) / k));
        }
    }
    // point q (0..k) on side s of ring k; q == k wraps onto the next side.
    auto ring_point = [&](int k, int s, int q) {
        if (k == 0) return 0;
        if (q == k) {
            s = (s + 1) % n_sides;
            q = 0;
        }
        return ring_start[k] + s * k + q;
    };
    for (int k = 1; k <= rings; ++k) {
        for (int s = 0; s < n_sides; ++s) {
            for (int q = 0; q < k; ++q)
                m.triangles.push_back({ring_point(k - 1, s, q), ring_point(k, s, q), ring_point(k, s, q + 1)});
            for (int q = 0; q + 1 < k; ++q)
                m.triangles.push_back({ring_point(k - 1, s, q), ring_point(k, s, q + 1), ring_point(k - 1, s, q + 1)});
        }
    }
    for (int v = ring_start[rings]; v < static_cast<int>(m.vertices.size()); ++v) m.boundary_loop.push_back(v);
    orient_ccw(m);
}

} // namespace detail

inline MeshPtr build_mesh(const DomainSpec& domain, int resolution,
                          std::size_t triangle_budget = kDefaultTriangleBudget) {
    BELTRAMI_THROW_IF(resolution < 2, DomainError, "mesh resolution must be >= 2");
    if (domain.kind == DomainKind::regular_ngon) {
        BELTRAMI_THROW_IF(domain.n_sides < 3, DomainError, "regular polygon needs at least 3 sides");
        BELTRAMI_THROW_IF(!(domain.radius > 0.0), DomainError, "polygon radius must be positive");
    }
    const std::size_t n = static_cast<std::size_t>(resolution);
    const std::size_t expected = domain.kind == DomainKind::regular_ngon
                                     ? static_cast<std::size_t>(domain.n_sides) * n * n
                                     : 2 * n * n;
    BELTRAMI_THROW_IF(expected > triangle_budget, ResourceError,
                      "mesh would have " + std::to_string(expected) + " triangles, above the budget of " +
                          std::to_string(triangle_budget));

    auto m = std::make_shared<TriMesh>();
    m->domain = domain;
    m->resolution = resolution;
    if (domain.kind == DomainKind::regular_ngon) {
        detail::build_ngon(*m, domain.n_sides, domain.radius, resolution);
        m->h = domain.radius / resolution;
    } else {
        detail::build_square(*m, resolution);
        m->h = 1.0 / resolution;
    }

    m->vertex_class.resize(m->vertices.size());
    if (domain.kind == DomainKind::periodic_cell) {
        m->periodicity = Periodicity::unit_square_identification;
        const int side = resolution + 1;
        for (int j = 0; j <= resolution; ++j)
            for (int i = 0; i <= resolution; ++i)
                m->vertex_class[j * side + i] = (j % resolution) * resolution + (i % resolution);
        m->free_vertex_count = resolution * resolution;
    } else {
        for (std::size_t v = 0; v < m->vertices.size(); ++v) m->vertex_class[v] = static_cast<int>(v);
        m->free_vertex_count = static_cast<int>(m->vertices.size());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Fields

struct ScalarFieldP1 {
    MeshPtr mesh;
    std::vector<double> nodal_values;

    ScalarFieldP1() = default;
    ScalarFieldP1(MeshPtr m, std::vector<double> v) : mesh(std::move(m)), nodal_values(std::move(v)) {
        BELTRAMI_THROW_IF(nodal_values.size() != mesh->num_vertices(), DomainError,
                          "nodal value count does not match vertex count");
    }

    static ScalarFieldP1 interpolate(const MeshPtr& m, const std::function<double(const Vec2&)>& f) {
        std::vector<double> v(m->num_vertices());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(m->vertices[i]);
        return {m, std::move(v)};
    }

    double operator[](std::size_t i) const { return nodal_values[i]; }
};

struct ElementMatrixField {
    MeshPtr mesh;
    std::vector<Mat2> values;

    ElementMatrixField() = default;
    ElementMatrixField(MeshPtr m, std::vector<Mat2> v) : mesh(std::move(m)), values(std::move(v)) {
        BELTRAMI_THROW_IF(values.size() != mesh->num_triangles(), DomainError,
                          "element value count does not match triangle count");
    }

    static ElementMatrixField constant(const MeshPtr& m, const Mat2& s) {
        return {m, std::vector<Mat2>(m->num_triangles(), s)};
    }
};

using ElementVectorField = std::vector<Vec2>;
using ElementScalarField = std::vector<double>;

/// Exact gradient of the piecewise-linear interpolant on each triangle.
inline ElementVectorField element_gradient(const ScalarFieldP1& f) {
    const TriMesh& m = *f.mesh;
    ElementVectorField g(m.num_triangles());
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto grads = m.basis_gradients(t);
        const auto& tri = m.triangles[t];
        g[t] = f.nodal_values[tri[0]] * grads[0] + f.nodal_values[tri[1]] * grads[1] +
               f.nodal_values[tri[2]] * grads[2];
    }
    return g;
}

/// Exact integral of a P1 field.
inline double integrate(const ScalarFieldP1& f) {
    const TriMesh& m = *f.mesh;
    double s = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        s += m.area(t) * (f.nodal_values[tri[0]] + f.nodal_values[tri[1]] + f.nodal_values[tri[2]]) / 3.0;
    }
    return s;
}

inline std::vector<double> element_areas(const TriMesh& m) {
    std::vector<double> a(m.num_triangles());
    for (std::size_t t = 0; t < a.size(); ++t) a[t] = m.area(t);
    return a;
}

inline std::vector<Vec2> element_barycenters(const TriMesh& m) {
    std::vector<Vec2> b(m.num_triangles());
    for (std::size_t t = 0; t < b.size(); ++t) b[t] = m.barycenter(t);
    return b;
}

// ---------------------------------------------------------------------------
// Dyadic squares

struct DyadicSquare {
    Vec2 corner;
    double side = 1.0;
    int level = 0;
    std::vector<int> members;     // triangles whose barycenter lies inside
    double member_area = 0.0;     // measure used for means
    bool too_few_elements = false;
    bool inside_domain = true;    // Q itself inside the domain
    bool doubled_inside = false;  // 2Q (same center, twice the side) inside the domain
};

struct DyadicSquareSet {
    Vec2 origin{0.0, 0.0};
    double side = 1.0;
    int max_level = 0;
    std::vector<DyadicSquare> squares;
};

inline constexpr std::size_t kMinElementsPerSquare = 8;

/// Predicate deciding whether an axis-aligned box (lower corner, side) lies in the domain.
using BoxInsideDomain = std::function<bool(const Vec2&, double)>;

inline DyadicSquareSet dyadic_squares(std::span<const Vec2> barycenters, std::span<const double> areas,
                                      const Vec2& origin, double side, int max_level,
                                      const BoxInsideDomain& inside = {}) {
    BELTRAMI_THROW_IF(max_level < 0 || max_level > 20, DomainError, "dyadic level out of range");
    BELTRAMI_THROW_IF(barycenters.size() != areas.size(), DomainError, "barycenter/area size mismatch");
    DyadicSquareSet set;
    set.origin = origin;
    set.side = side;
    set.max_level = max_level;
    for (int level = 0; level <= max_level; ++level) {
        const int cells = 1 << level;
        const double s = side / cells;
        const std::size_t first = set.squares.size();
        for (int j = 0; j < cells; ++j) {
            for (int i = 0; i < cells; ++i) {
                DyadicSquare q;
                q.corner = origin + Vec2(i * s, j * s);
                q.side = s;
                q.level = level;
                set.squares.push_back(std::move(q));
            }
        }
        for (std::size_t t = 0; t < barycenters.size(); ++t) {
            const Vec2 rel = (barycenters[t] - origin) / side;
            if (rel.x() < 0.0 || rel.x() > 1.0 || rel.y() < 0.0 || rel.y() > 1.0) continue;
            const int i = std::min(cells - 1, static_cast<int>(std::floor(rel.x() * cells)));
            const int j = std::min(cells - 1, static_cast<int>(std::floor(rel.y() * cells)));
            auto& q = set.squares[first + static_cast<std::size_t>(j) * cells + i];
            q.members.push_back(static_cast<int>(t));
            q.member_area += areas[t];
        }
        for (std::size_t k = first; k < set.squares.size(); ++k) {
            auto& q = set.squares[k];
            q.too_few_elements = q.members.size() < kMinElementsPerSquare;
            if (inside) {
                q.inside_domain = inside(q.corner, q.side);
                q.doubled_inside = inside(q.corner - Vec2(0.5 * q.side, 0.5 * q.side), 2.0 * q.side);
            }
        }
    }
    return set;
}

/// Dyadic squares of a square-domain mesh (unit square or periodic cell).
inline DyadicSquareSet dyadic_squares(const TriMesh& mesh, int max_level) {
    BELTRAMI_THROW_IF(mesh.domain.kind == DomainKind::regular_ngon, DomainError,
                      "dyadic squares need a square reference domain");
    const auto bary = element_barycenters(mesh);
    const auto areas = element_areas(mesh);
    constexpr double eps = 1e-12;
    auto inside = [](const Vec2& lo, double s) {
        return lo.x() >= -eps && lo.y() >= -eps && lo.x() + s <= 1.0 + eps && lo.y() + s <= 1.0 + eps;
    };
    return dyadic_squares(bary, areas, Vec2(0.0, 0.0), 1.0, max_level, inside);
}

// ---------------------------------------------------------------------------
// CSV export. Column order: index, x, y, value(s).

struct NamedColumn {
    std::string name;
    std::span<const double> values;
};

inline void write_vertex_csv(std::ostream& os, const TriMesh& m, std::span<const NamedColumn> columns = {}) {
    os << "index,x,y";
    for (const auto& c : columns) os << ',' << c.name;
    os << '\n';
    os.precision(17);
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
        os << v << ',' << m.vertices[v].x() << ',' << m.vertices[v].y();
        for (const auto& c : columns) os << ',' << c.values[v];
        os << '\n';
    }
}

/// One row per triangle: index, barycenter x, y, vertex ids, value(s).
inline void write_triangle_csv(std::ostream& os, const TriMesh& m, std::span<const NamedColumn> columns = {}) {
    os << "index,x,y,v0,v1,v2";
    for (const auto& c : columns) os << ',' << c.name;
    os << '\n';
    os.precision(17);
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const Vec2 b = m.barycenter(t);
        const auto& tri = m.triangles[t];
        os << t << ',' << b.x() << ',' << b.y() << ',' << tri[0] << ',' << tri[1] << ',' << tri[2];
        for (const auto& c : columns) os << ',' << c.values[t];
        os << '\n';
    }
}

} // namespace beltrami
