#pragma once

// sigma-harmonic mappings and primary pairs, Wirtinger calculus on P1
// elements, Jacobian and injectivity checks, and the push-forward of sigma
// by the stream map f = u1 + i u1~.
//
// Two gradient conventions for stream functions are used. "Exact" takes the
// per-element rotated flux J sigma grad u; the pointwise identities between
// sigma, (mu, nu) and the Jacobian are checked with it. "Recovered" uses the
// least-squares P1 stream function, a genuine single-valued potential, which
// is what image areas and image triangulations need.

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/elliptic_solver.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"

namespace beltrami {

struct ComplexMap {
    ScalarFieldP1 re;
    ScalarFieldP1 im;

    ComplexMap() = default;
    ComplexMap(ScalarFieldP1 r, ScalarFieldP1 i) : re(std::move(r)), im(std::move(i)) {
        BELTRAMI_THROW_IF(re.mesh != im.mesh, DomainError, "complex map components must share one mesh");
    }

    const MeshPtr& mesh() const { return re.mesh; }
    Complex at_vertex(std::size_t v) const { return {re.nodal_values[v], im.nodal_values[v]}; }
};

struct SigmaHarmonicMap {
    ScalarFieldP1 u1;
    ScalarFieldP1 u2;
    ElementMatrixField sigma;
    ElementScalarField det_DU;

    const MeshPtr& mesh() const { return u1.mesh; }
    Vec2 image(std::size_t v) const { return {u1.nodal_values[v], u2.nodal_values[v]}; }
};

struct WirtingerField {
    std::vector<Complex> f_z;
    std::vector<Complex> f_zbar;
};

/// Determinant of the per-element Jacobian with rows grad a, grad b.
inline ElementScalarField jacobian_det(const ElementVectorField& grad_a, const ElementVectorField& grad_b) {
    ElementScalarField d(grad_a.size());
    for (std::size_t t = 0; t < d.size(); ++t)
        d[t] = grad_a[t].x() * grad_b[t].y() - grad_a[t].y() * grad_b[t].x();
    return d;
}

inline ElementScalarField jacobian_det(const ScalarFieldP1& a, const ScalarFieldP1& b) {
    return jacobian_det(element_gradient(a), element_gradient(b));
}

inline ElementScalarField jacobian_det(const SigmaHarmonicMap& U) { return jacobian_det(U.u1, U.u2); }

inline SigmaHarmonicMap make_sigma_harmonic_map(ScalarFieldP1 u1, ScalarFieldP1 u2, ElementMatrixField sigma) {
    SigmaHarmonicMap U{std::move(u1), std::move(u2), std::move(sigma), {}};
    U.det_DU = jacobian_det(U);
    return U;
}

// ---------------------------------------------------------------------------
// Wirtinger derivatives

/// F = u + i v with per-element gradients of u and v.
inline WirtingerField wirtinger(const ElementVectorField& grad_re, const ElementVectorField& grad_im) {
    WirtingerField w;
    w.f_z.resize(grad_re.size());
    w.f_zbar.resize(grad_re.size());
    for (std::size_t t = 0; t < grad_re.size(); ++t) {
        const Vec2& a = grad_re[t];
        const Vec2& b = grad_im[t];
        w.f_z[t] = 0.5 * Complex(a.x() + b.y(), b.x() - a.y());
        w.f_zbar[t] = 0.5 * Complex(a.x() - b.y(), b.x() + a.y());
    }
    return w;
}

inline WirtingerField wirtinger(const ComplexMap& F) {
    return wirtinger(element_gradient(F.re), element_gradient(F.im));
}

/// Wirtinger derivatives of u + i u~ with the exact rotated flux for grad u~.
inline WirtingerField wirtinger_exact(const ElementMatrixField& sigma, const ScalarFieldP1& u) {
    const auto gu = element_gradient(u);
    return wirtinger(gu, rotated_flux(sigma, gu));
}

/// |f_zbar - mu f_z - nu conj(f_z)| per element.
inline ElementScalarField beltrami_residual(const WirtingerField& w, std::span<const BeltramiPair> pairs) {
    BELTRAMI_THROW_IF(pairs.size() != 1 && pairs.size() != w.f_z.size(), DomainError,
                      "need one Beltrami pair or one per element");
    ElementScalarField r(w.f_z.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
        const BeltramiPair& p = pairs.size() == 1 ? pairs[0] : pairs[t];
        r[t] = std::abs(w.f_zbar[t] - p.mu * w.f_z[t] - p.nu * std::conj(w.f_z[t]));
    }
    return r;
}

inline ElementScalarField beltrami_residual(const ComplexMap& F, const BeltramiPair& pair) {
    return beltrami_residual(wirtinger(F), std::span<const BeltramiPair>(&pair, 1));
}

inline std::vector<BeltramiPair> beltrami_pairs(const ElementMatrixField& sigma) {
    std::vector<BeltramiPair> p(sigma.values.size());
    for (std::size_t t = 0; t < p.size(); ++t) p[t] = beltrami_from_sigma(sigma.values[t]);
    return p;
}

/// Folds the nu-term into mu for a fixed F_z: mu + (conj(F_z)/F_z) nu.
inline Complex reduce_nu_to_zero(const BeltramiPair& pair, Complex f_z) {
    BELTRAMI_THROW_IF(std::abs(f_z) == 0.0, DomainError, "reduction undefined where F_z vanishes");
    return pair.mu + (std::conj(f_z) / f_z) * pair.nu;
}

/// |Im(Phi_z conj(Psi_z)) - (1 + tr sigma + det sigma) det DU / 4| per element.
/// The factor 1/4 comes from the normalization f_z = (f_x - i f_y)/2.
inline ElementScalarField equival_residual(const WirtingerField& phi, const WirtingerField& psi,
                                           const ElementMatrixField& sigma, const ElementScalarField& det_DU) {
    ElementScalarField r(det_DU.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
        const Mat2& s = sigma.values[t];
        const double lhs = (phi.f_z[t] * std::conj(psi.f_z[t])).imag();
        const double rhs = 0.25 * (1.0 + s.trace() + s.determinant()) * det_DU[t];
        r[t] = std::abs(lhs - rhs);
    }
    return r;
}

/// Exact-convention version built straight from the sigma-harmonic map.
inline ElementScalarField equival_residual(const SigmaHarmonicMap& U) {
    return equival_residual(wirtinger_exact(U.sigma, U.u1), wirtinger_exact(U.sigma, U.u2), U.sigma, U.det_DU);
}

// ---------------------------------------------------------------------------
// Polygon utilities

namespace detail {

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline int orientation(const Vec2& a, const Vec2& b, const Vec2& c, double eps) {
    const double v = cross(b - a, c - a);
    if (v > eps) return 1;
    if (v < -eps) return -1;
    return 0;
}

inline bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p, double eps) {
    return p.x() >= std::min(a.x(), b.x()) - eps && p.x() <= std::max(a.x(), b.x()) + eps &&
           p.y() >= std::min(a.y(), b.y()) - eps && p.y() <= std::max(a.y(), b.y()) + eps;
}

inline bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2, double eps) {
    const int o1 = orientation(p1, p2, q1, eps);
    const int o2 = orientation(p1, p2, q2, eps);
    const int o3 = orientation(q1, q2, p1, eps);
    const int o4 = orientation(q1, q2, p2, eps);
    if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
    if (o1 == 0 && on_segment(p1, p2, q1, eps)) return true;
    if (o2 == 0 && on_segment(p1, p2, q2, eps)) return true;
    if (o3 == 0 && on_segment(q1, q2, p1, eps)) return true;
    if (o4 == 0 && on_segment(q1, q2, p2, eps)) return true;
    return false;
}

} // namespace detail

inline double polygon_signed_area(std::span<const Vec2> poly) {
    double s = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) s += detail::cross(poly[i], poly[(i + 1) % poly.size()]);
    return 0.5 * s;
}

/// No two non-adjacent edges touch and no edge is degenerate.
inline bool polygon_is_simple(std::span<const Vec2> poly) {
    const std::size_t n = poly.size();
    if (n < 3) return false;
    double scale = 0.0;
    for (const auto& p : poly) scale = std::max(scale, p.cwiseAbs().maxCoeff());
    const double eps = 1e-14 * std::max(scale * scale, 1e-300);
    for (std::size_t i = 0; i < n; ++i)
        if ((poly[(i + 1) % n] - poly[i]).norm() <= 1e-14 * std::max(scale, 1e-300)) return false;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            if (detail::segments_intersect(a, b, poly[j], poly[(j + 1) % n], eps)) return false;
        }
    }
    return true;
}

inline bool point_in_polygon(std::span<const Vec2> poly, const Vec2& p) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y())) {
            const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
            if (p.x() < x) inside = !inside;
        }
    }
    return inside;
}

/// Axis-aligned box [lo, lo+side]^2 contained in the polygon.
inline bool box_inside_polygon(std::span<const Vec2> poly, const Vec2& lo, double side) {
    const std::array<Vec2, 4> c{lo, lo + Vec2(side, 0.0), lo + Vec2(side, side), lo + Vec2(0.0, side)};
    for (const auto& p : c)
        if (!point_in_polygon(poly, p)) return false;
    const double eps = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % poly.size()];
        for (int k = 0; k < 4; ++k)
            if (detail::segments_intersect(a, b, c[k], c[(k + 1) % 4], eps)) return false;
    }
    return true;
}

struct EmbeddingCheck {
    bool simple = false;
    bool counterclockwise = false;
    bool convex = false;
    bool ok() const { return simple && counterclockwise && convex; }
};

/// Sense-preserving embedding of the boundary loop onto a convex polygon
/// (collinear consecutive points allowed).
inline EmbeddingCheck check_convex_embedding(std::span<const Vec2> poly) {
    EmbeddingCheck c;
    c.simple = polygon_is_simple(poly);
    c.counterclockwise = polygon_signed_area(poly) > 0.0;
    if (!c.simple || !c.counterclockwise) return c;
    double scale = 0.0;
    for (const auto& p : poly) scale = std::max(scale, p.cwiseAbs().maxCoeff());
    const double eps = 1e-12 * scale * scale;
    const std::size_t n = poly.size();
    double turning = 0.0;
    bool left_turns_only = true;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 e0 = poly[(i + 1) % n] - poly[i];
        const Vec2 e1 = poly[(i + 2) % n] - poly[(i + 1) % n];
        if (detail::cross(e0, e1) < -eps) left_turns_only = false;
        turning += std::atan2(detail::cross(e0, e1), e0.dot(e1));
    }
    c.convex = left_turns_only && std::abs(turning - 2.0 * std::numbers::pi) < 1e-6;
    return c;
}

// ---------------------------------------------------------------------------
// Primary pairs and sigma-harmonic maps

struct PrimaryPair {
    ComplexMap Phi;  // u1 + i u1~ (recovered stream function)
    ComplexMap Psi;  // u2 + i u2~
    SigmaHarmonicMap U;
    double stream_residual_1 = 0.0;
    double stream_residual_2 = 0.0;
    SolveStats stats_1;
    SolveStats stats_2;
};

inline void require_convex_domain(const TriMesh& m) {
    BELTRAMI_THROW_IF(m.periodicity != Periodicity::none, DomainError, "primary pairs need a bounded convex domain");
}

inline PrimaryPair primary_pair(const ElementMatrixField& sigma, const SolveOptions& opts = {}) {
    require_convex_domain(*sigma.mesh);
    PrimaryPair p;
    auto u1 = solve_dirichlet(sigma, [](const Vec2& x) { return x.x(); }, opts, &p.stats_1);
    auto u2 = solve_dirichlet(sigma, [](const Vec2& x) { return x.y(); }, opts, &p.stats_2);
    auto s1 = stream_function(sigma, u1);
    auto s2 = stream_function(sigma, u2);
    p.stream_residual_1 = s1.residual_l2;
    p.stream_residual_2 = s2.residual_l2;
    p.Phi = ComplexMap(u1, std::move(s1.psi));
    p.Psi = ComplexMap(u2, std::move(s2.psi));
    p.U = make_sigma_harmonic_map(std::move(u1), std::move(u2), sigma);
    return p;
}

struct SigmaHarmonicMapResult {
    SigmaHarmonicMap U;
    EmbeddingCheck boundary_embedding;
    bool warning = false;  // boundary data is not a convex sense-preserving embedding
    std::string message;
};

inline SigmaHarmonicMapResult sigma_harmonic_map(const ElementMatrixField& sigma, const BoundaryTrace& phi1,
                                                 const BoundaryTrace& phi2, const SolveOptions& opts = {}) {
    require_convex_domain(*sigma.mesh);
    const TriMesh& m = *sigma.mesh;
    std::vector<Vec2> image;
    image.reserve(m.boundary_loop.size());
    for (int v : m.boundary_loop) image.emplace_back(phi1(m.vertices[v]), phi2(m.vertices[v]));
    SigmaHarmonicMapResult r;
    r.boundary_embedding = check_convex_embedding(image);
    if (!r.boundary_embedding.ok()) {
        r.warning = true;
        r.message = "boundary data is not a sense-preserving embedding onto a convex polygon";
    }
    auto u1 = solve_dirichlet(sigma, phi1, opts);
    auto u2 = solve_dirichlet(sigma, phi2, opts);
    r.U = make_sigma_harmonic_map(std::move(u1), std::move(u2), sigma);
    return r;
}

// ---------------------------------------------------------------------------
// Unimodality and injectivity

struct UnimodalityReport {
    bool is_unimodal = false;
    bool is_strict = false;
    bool degenerate = false;  // constant data
    int max_index = -1;       // first index of the maximal arc
    int min_index = -1;       // first index of the minimal arc
};

/// Cyclic boundary samples split into one nondecreasing and one
/// nonincreasing arc. Plateaus make the split non-strict.
inline UnimodalityReport unimodality_check(std::span<const double> g) {
    BELTRAMI_THROW_IF(g.size() < 3, DomainError, "unimodality needs at least 3 boundary samples");
    UnimodalityReport rep;
    const std::size_t n = g.size();
    double scale = 0.0;
    for (double x : g) scale = std::max(scale, std::abs(x));
    const double tol = 1e-12 * std::max(scale, 1.0);
    auto eq = [&](double a, double b) { return std::abs(a - b) <= tol; };

    std::size_t start = n;
    for (std::size_t i = 0; i < n; ++i)
        if (!eq(g[i], g[(i + n - 1) % n])) {
            start = i;
            break;
        }
    if (start == n) {
        rep.degenerate = true;
        return rep;
    }
    // groups of equal consecutive values, starting at a value change
    struct Group {
        std::size_t first;
        std::size_t size;
        double value;
    };
    std::vector<Group> groups;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = (start + k) % n;
        if (!groups.empty() && eq(g[i], groups.back().value))
            ++groups.back().size;
        else
            groups.push_back({i, 1, g[i]});
    }
    const std::size_t m = groups.size();
    int maxima = 0;
    int minima = 0;
    bool plateau = false;
    for (std::size_t k = 0; k < m; ++k) {
        const double prev = groups[(k + m - 1) % m].value;
        const double next = groups[(k + 1) % m].value;
        const double v = groups[k].value;
        if (groups[k].size > 1) plateau = true;
        if (v > prev && v > next) {
            ++maxima;
            rep.max_index = static_cast<int>(groups[k].first);
        }
        if (v < prev && v < next) {
            ++minima;
            rep.min_index = static_cast<int>(groups[k].first);
        }
    }
    rep.is_unimodal = maxima == 1 && minima == 1;
    rep.is_strict = rep.is_unimodal && !plateau;
    return rep;
}

struct InjectivityReport {
    bool locally_injective = false;
    bool globally_injective = false;
    double min_det = 0.0;
    double image_polygon_area = 0.0;
    double element_area_sum = 0.0;
};

/// Local: det > 0 on every triangle (threshold 0). Global: additionally the
/// image boundary polygon is simple and its area equals the sum of element
/// image areas to 1e-8 relative.
inline InjectivityReport injectivity_check(const MeshPtr& mesh, const ScalarFieldP1& a, const ScalarFieldP1& b) {
    const TriMesh& m = *mesh;
    const auto det = jacobian_det(a, b);
    InjectivityReport r;
    r.min_det = det.empty() ? 0.0 : *std::min_element(det.begin(), det.end());
    r.locally_injective = !det.empty() && r.min_det > 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) r.element_area_sum += std::abs(det[t]) * m.area(t);
    std::vector<Vec2> image;
    image.reserve(m.boundary_loop.size());
    for (int v : m.boundary_loop) image.emplace_back(a.nodal_values[v], b.nodal_values[v]);
    r.image_polygon_area = polygon_signed_area(image);
    const bool areas_match =
        std::abs(r.image_polygon_area - r.element_area_sum) <= 1e-8 * std::max(std::abs(r.element_area_sum), 1e-300);
    r.globally_injective = r.locally_injective && areas_match && polygon_is_simple(image);
    return r;
}

inline InjectivityReport injectivity_check(const SigmaHarmonicMap& U) { return injectivity_check(U.mesh(), U.u1, U.u2); }

inline InjectivityReport injectivity_check(const ComplexMap& F) { return injectivity_check(F.mesh(), F.re, F.im); }

// ---------------------------------------------------------------------------
// Push-forward tau = (Df sigma Df^T) / det Df on the image triangulation

struct TauField {
    std::vector<Mat2> tau;
    ElementScalarField b;  // tau_12
    ElementScalarField c;  // det tau
    ElementScalarField residual_11;  // |tau_11 - 1|
    ElementScalarField residual_21;  // |tau_21|
    ElementScalarField det_Df;
    std::vector<bool> flagged;       // near-degenerate image triangle
    std::vector<Vec2> image_barycenter;
    ElementScalarField image_area;
    double l1_residual_11 = 0.0;     // over image triangles, flagged excluded
    double l1_residual_21 = 0.0;
    double max_c_mismatch = 0.0;     // |c - det sigma|
    double max_b_mismatch = 0.0;     // |b - (sigma_12 - sigma_21)|
    InjectivityReport injectivity;
};

inline TauField pushforward_tau(const ElementMatrixField& sigma, const ComplexMap& f) {
    BELTRAMI_THROW_IF(sigma.mesh != f.mesh(), DomainError, "sigma and f must share one mesh");
    const TriMesh& m = *f.mesh();
    TauField r;
    r.injectivity = injectivity_check(f);
    BELTRAMI_THROW_IF(!r.injectivity.globally_injective, DomainError,
                      "push-forward needs a globally injective f (min det Df = " +
                          std::to_string(r.injectivity.min_det) + ")");
    const auto ga = element_gradient(f.re);
    const auto gb = element_gradient(f.im);
    const std::size_t n = m.num_triangles();
    r.tau.resize(n);
    r.b.resize(n);
    r.c.resize(n);
    r.residual_11.resize(n);
    r.residual_21.resize(n);
    r.det_Df.resize(n);
    r.flagged.assign(n, false);
    r.image_barycenter.resize(n);
    r.image_area.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        Mat2 Df;
        Df.row(0) = ga[t].transpose();
        Df.row(1) = gb[t].transpose();
        const double det = Df.determinant();
        r.det_Df[t] = det;
        const auto& tri = m.triangles[t];
        r.image_barycenter[t] = Vec2::Zero();
        for (int k = 0; k < 3; ++k)
            r.image_barycenter[t] += Vec2(f.re.nodal_values[tri[k]], f.im.nodal_values[tri[k]]) / 3.0;
        r.image_area[t] = std::abs(det) * m.area(t);
        if (std::abs(det) < 1e-12 * std::max(Df.squaredNorm(), 1e-300)) {
            r.flagged[t] = true;
            r.tau[t] = Mat2::Constant(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const Mat2& s = sigma.values[t];
        const Mat2 tau = Df * s * Df.transpose() / det;
        r.tau[t] = tau;
        r.b[t] = tau(0, 1);
        r.c[t] = tau.determinant();
        r.residual_11[t] = std::abs(tau(0, 0) - 1.0);
        r.residual_21[t] = std::abs(tau(1, 0));
        r.l1_residual_11 += r.image_area[t] * r.residual_11[t];
        r.l1_residual_21 += r.image_area[t] * r.residual_21[t];
        r.max_c_mismatch = std::max(r.max_c_mismatch, std::abs(r.c[t] - s.determinant()));
        r.max_b_mismatch = std::max(r.max_b_mismatch, std::abs(r.b[t] - (s(0, 1) - s(1, 0))));
    }
    return r;
}

/// Per-element tau with the exact rotated flux as grad u1~, which makes
/// tau_11 = 1 and tau_21 = 0 hold identically.
inline std::vector<Mat2> pushforward_tau_exact(const ElementMatrixField& sigma, const ScalarFieldP1& u1) {
    const auto gu = element_gradient(u1);
    const auto gs = rotated_flux(sigma, gu);
    std::vector<Mat2> tau(gu.size());
    for (std::size_t t = 0; t < tau.size(); ++t) {
        Mat2 Df;
        Df.row(0) = gu[t].transpose();
        Df.row(1) = gs[t].transpose();
        tau[t] = Df * sigma.values[t] * Df.transpose() / Df.determinant();
    }
    return tau;
}

/// det DV = det DU / det Df for V = U o f^-1, carried to the image triangles of f.
struct ImageWeight {
    std::vector<Vec2> barycenters;
    std::vector<double> areas;
    std::vector<double> values;
    std::vector<Vec2> boundary;  // image of the boundary loop
};

inline ImageWeight factorized_jacobian(const SigmaHarmonicMap& U, const ComplexMap& f) {
    const TriMesh& m = *U.mesh();
    const auto det_f = jacobian_det(f.re, f.im);
    ImageWeight w;
    w.barycenters.resize(m.num_triangles());
    w.areas.resize(m.num_triangles());
    w.values.resize(m.num_triangles());
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        Vec2 b = Vec2::Zero();
        for (int k = 0; k < 3; ++k) b += Vec2(f.re.nodal_values[tri[k]], f.im.nodal_values[tri[k]]) / 3.0;
        w.barycenters[t] = b;
        w.areas[t] = std::abs(det_f[t]) * m.area(t);
        w.values[t] = U.det_DU[t] / det_f[t];
    }
    for (int v : m.boundary_loop) w.boundary.emplace_back(f.re.nodal_values[v], f.im.nodal_values[v]);
    return w;
}

} // namespace beltrami
