#pragma once

// Periodic cell problems, effective conductivity and the area formulas
// relating sigma_eff to image areas of the stream maps f^xi = u^xi + i u^xi~.

#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/elliptic_solver.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"
#include "beltrami/sigma_harmonic.hpp"

namespace beltrami {

struct EffectiveTensor {
    Mat2 matrix = Mat2::Identity();           // columns: cell averages of sigma grad u^{e_j}
    std::array<Vec2, 3> probes{Vec2(1, 0), Vec2(0, 1), Vec2(1, 1)};
    std::array<double, 3> quadratic_form_values{};  // int_Q sigma grad u^xi . grad u^xi
    Mat2 quadratic_form_matrix = Mat2::Identity();  // symmetric matrix polarized from the probes
    ScalarFieldP1 cell_e1;
    ScalarFieldP1 cell_e2;
    std::array<double, 2> solve_residuals{};
    int resolution = 0;

    /// max |polarized quadratic form - sym(matrix)|; only the symmetric part is visible to the form.
    double symmetry_gap() const {
        const Mat2 sym = 0.5 * (matrix + matrix.transpose());
        return (quadratic_form_matrix - sym).cwiseAbs().maxCoeff();
    }
};

inline double energy(const ElementMatrixField& sigma, const ScalarFieldP1& u) {
    const TriMesh& m = *sigma.mesh;
    const auto g = element_gradient(u);
    double e = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) e += m.area(t) * g[t].dot(sigma.values[t] * g[t]);
    return e;
}

inline Vec2 average_flux(const ElementMatrixField& sigma, const ScalarFieldP1& u) {
    const TriMesh& m = *sigma.mesh;
    const auto g = element_gradient(u);
    Vec2 f = Vec2::Zero();
    for (std::size_t t = 0; t < m.num_triangles(); ++t) f += m.area(t) * (sigma.values[t] * g[t]);
    return f / m.total_area();
}

inline EffectiveTensor effective_conductivity(const ElementMatrixField& sigma, const SolveOptions& opts = {}) {
    EffectiveTensor e;
    SolveStats s1, s2;
    e.cell_e1 = solve_periodic_cell(sigma, Vec2(1.0, 0.0), opts, &s1);
    e.cell_e2 = solve_periodic_cell(sigma, Vec2(0.0, 1.0), opts, &s2);
    e.solve_residuals = {s1.relative_residual, s2.relative_residual};
    e.resolution = sigma.mesh->resolution;
    e.matrix.col(0) = average_flux(sigma, e.cell_e1);
    e.matrix.col(1) = average_flux(sigma, e.cell_e2);
    // u^{e1+e2} = u^{e1} + u^{e2} by linearity of the cell problem
    std::vector<double> sum(e.cell_e1.nodal_values.size());
    for (std::size_t v = 0; v < sum.size(); ++v) sum[v] = e.cell_e1.nodal_values[v] + e.cell_e2.nodal_values[v];
    const ScalarFieldP1 u12{sigma.mesh, std::move(sum)};
    e.quadratic_form_values = {energy(sigma, e.cell_e1), energy(sigma, e.cell_e2), energy(sigma, u12)};
    const auto& q = e.quadratic_form_values;
    const double off = 0.5 * (q[2] - q[0] - q[1]);
    e.quadratic_form_matrix << q[0], off, off, q[1];
    return e;
}

/// CSV header and row for effective tensors (11 columns).
inline const char* effective_tensor_csv_header() {
    return "s11,s12,s21,s22,q_e1,q_e2,q_e1e2,residual_e1,residual_e2,symmetry_gap,resolution";
}

inline void write_effective_tensor_row(std::ostream& os, const EffectiveTensor& e) {
    os.precision(17);
    os << e.matrix(0, 0) << ',' << e.matrix(0, 1) << ',' << e.matrix(1, 0) << ',' << e.matrix(1, 1) << ','
       << e.quadratic_form_values[0] << ',' << e.quadratic_form_values[1] << ',' << e.quadratic_form_values[2] << ','
       << e.solve_residuals[0] << ',' << e.solve_residuals[1] << ',' << e.symmetry_gap() << ',' << e.resolution
       << '\n';
}

/// Harmonic and arithmetic means of sigma over the cell (Reuss / Voigt bounds).
struct MeanBounds {
    Mat2 harmonic;
    Mat2 arithmetic;
};

inline MeanBounds mean_bounds(const ElementMatrixField& sigma) {
    const TriMesh& m = *sigma.mesh;
    Mat2 mean = Mat2::Zero();
    Mat2 mean_inv = Mat2::Zero();
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const Mat2 s = 0.5 * (sigma.values[t] + sigma.values[t].transpose());
        mean += m.area(t) * s;
        mean_inv += m.area(t) * inverse2(s);
    }
    const double a = m.total_area();
    return {inverse2(mean_inv / a), mean / a};
}

// ---------------------------------------------------------------------------
// Cell maps U^A

struct CellMap {
    Mat2 A = Mat2::Identity();
    SigmaHarmonicMap U;
    SigmaHarmonicMap U_identity;       // U^I, for the linearity check
    double linearity_gap = 0.0;        // max_v |U^A - A U^I|
    bool homeomorphism_checked = false;
    InjectivityReport injectivity;
};

inline CellMap cell_map(const ElementMatrixField& sigma, const Mat2& A, const SolveOptions& opts = {}) {
    CellMap c;
    c.A = A;
    auto uA1 = solve_periodic_cell(sigma, A.row(0).transpose(), opts);
    auto uA2 = solve_periodic_cell(sigma, A.row(1).transpose(), opts);
    auto uI1 = solve_periodic_cell(sigma, Vec2(1.0, 0.0), opts);
    auto uI2 = solve_periodic_cell(sigma, Vec2(0.0, 1.0), opts);
    for (std::size_t v = 0; v < uA1.nodal_values.size(); ++v) {
        const double l1 = A(0, 0) * uI1.nodal_values[v] + A(0, 1) * uI2.nodal_values[v];
        const double l2 = A(1, 0) * uI1.nodal_values[v] + A(1, 1) * uI2.nodal_values[v];
        c.linearity_gap = std::max({c.linearity_gap, std::abs(uA1.nodal_values[v] - l1),
                                    std::abs(uA2.nodal_values[v] - l2)});
    }
    c.U = make_sigma_harmonic_map(std::move(uA1), std::move(uA2), sigma);
    c.U_identity = make_sigma_harmonic_map(std::move(uI1), std::move(uI2), sigma);
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if (std::abs(A.determinant()) > 1e-12 * scale * scale) {
        c.homeomorphism_checked = true;
        // orientation-reversing A flips the sign of det DU^A
        if (A.determinant() > 0.0) {
            c.injectivity = injectivity_check(c.U);
        } else {
            ScalarFieldP1 neg = c.U.u2;
            for (double& x : neg.nodal_values) x = -x;
            c.injectivity = injectivity_check(c.U.mesh(), c.U.u1, neg);
        }
    }
    return c;
}

/// f^xi = u^xi + i u^xi~ on the unwrapped fundamental domain.
inline ComplexMap cell_stream_map(const ElementMatrixField& sigma, const Vec2& xi, const SolveOptions& opts = {}) {
    auto u = solve_periodic_cell(sigma, xi, opts);
    auto s = stream_function(sigma, u);
    return ComplexMap(std::move(u), std::move(s.psi));
}

// ---------------------------------------------------------------------------
// Area formulas

struct ImageAreaResult {
    double area = 0.0;               // sum |det D| |T|
    double overlap_corrected = 0.0;  // |sum det D |T||, folded parts cancel
    bool injective = true;
};

/// Region given as triangle indices; empty means all triangles.
inline ImageAreaResult image_area(const MeshPtr& mesh, const ScalarFieldP1& a, const ScalarFieldP1& b,
                                  std::span<const int> region = {}) {
    const TriMesh& m = *mesh;
    const auto det = jacobian_det(a, b);
    ImageAreaResult r;
    double signed_sum = 0.0;
    bool pos = false, neg = false, flat = false;
    auto add = [&](std::size_t t) {
        r.area += std::abs(det[t]) * m.area(t);
        signed_sum += det[t] * m.area(t);
        pos = pos || det[t] > 0.0;
        neg = neg || det[t] < 0.0;
        flat = flat || det[t] == 0.0;
    };
    if (region.empty())
        for (std::size_t t = 0; t < m.num_triangles(); ++t) add(t);
    else
        for (int t : region) add(static_cast<std::size_t>(t));
    r.overlap_corrected = std::abs(signed_sum);
    r.injective = !(pos && neg) && !flat;
    return r;
}

inline ImageAreaResult image_area(const ComplexMap& F, std::span<const int> region = {}) {
    return image_area(F.mesh(), F.re, F.im, region);
}

inline ImageAreaResult image_area(const SigmaHarmonicMap& U, std::span<const int> region = {}) {
    return image_area(U.mesh(), U.u1, U.u2, region);
}

struct AreaFormulaResult {
    double lhs = 0.0;  // sum_E phi(U(barycenter)) |det DU| |T|
    double rhs = 0.0;  // quadrature of phi over the image triangles
    double relative_gap = 0.0;
};

/// The right-hand side uses the edge-midpoint rule, exact for quadratics on
/// each image triangle.
inline AreaFormulaResult area_formula_check(const SigmaHarmonicMap& U, const std::function<double(const Vec2&)>& phi,
                                            std::span<const int> E = {}) {
    const TriMesh& m = *U.mesh();
    AreaFormulaResult r;
    auto add = [&](std::size_t t) {
        const auto& tri = m.triangles[t];
        const Vec2 p0 = U.image(tri[0]), p1 = U.image(tri[1]), p2 = U.image(tri[2]);
        const double img_area = std::abs(U.det_DU[t]) * m.area(t);
        r.lhs += phi((p0 + p1 + p2) / 3.0) * img_area;
        r.rhs += img_area * (phi(0.5 * (p0 + p1)) + phi(0.5 * (p1 + p2)) + phi(0.5 * (p2 + p0))) / 3.0;
    };
    if (E.empty())
        for (std::size_t t = 0; t < m.num_triangles(); ++t) add(t);
    else
        for (int t : E) add(static_cast<std::size_t>(t));
    r.relative_gap = std::abs(r.lhs - r.rhs) / std::max(std::abs(r.rhs), 1e-300);
    return r;
}

} // namespace beltrami
