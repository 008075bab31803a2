#pragma once

// P1 finite elements for div(sigma grad u) = 0 with non-symmetric sigma:
// Dirichlet problems, periodic cell problems and stream functions.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"

namespace beltrami {

enum class SolveMethod { direct_lu, iterative_nonsymmetric };

struct SolveOptions {
    SolveMethod method = SolveMethod::direct_lu;
    double tolerance = 1e-10;  // relative residual
    int max_iterations = 20000;
};

struct SolveStats {
    SolveMethod method = SolveMethod::direct_lu;
    std::size_t dofs = 0;
    int iterations = 0;
    double relative_residual = 0.0;

    std::string log_line(const std::string& label) const {
        std::ostringstream os;
        os.precision(6);
        os << "{\"event\":\"solve\",\"label\":\"" << label << "\",\"method\":\""
           << (method == SolveMethod::direct_lu ? "direct_lu" : "iterative_nonsymmetric")
           << "\",\"dofs\":" << dofs << ",\"iterations\":" << iterations
           << ",\"relative_residual\":" << relative_residual << "}";
        return os.str();
    }
};

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct LinearSystem {
    SparseMatrix matrix;
    Eigen::VectorXd rhs;
    std::vector<int> dof_map;  // vertex -> equation index, -1 when prescribed
};

using BoundaryTrace = std::function<double(const Vec2&)>;

namespace detail {

inline void check_coefficients(const ElementMatrixField& sigma) {
    for (std::size_t t = 0; t < sigma.values.size(); ++t) {
        const Mat2& s = sigma.values[t];
        BELTRAMI_THROW_IF(!is_elliptic(s), NonEllipticError,
                          "coefficient on triangle " + std::to_string(t) + " is not elliptic");
        BELTRAMI_THROW_IF(!(1.0 + s.trace() + s.determinant() > 0.0), NonEllipticError,
                          "1 + tr sigma + det sigma <= 0 on triangle " + std::to_string(t));
    }
}

inline double relative_residual(const SparseMatrix& A, const Eigen::VectorXd& x, const Eigen::VectorXd& b) {
    const double r = (A * x - b).norm();
    const double nb = b.norm();
    return nb > 0.0 ? r / nb : r;
}

} // namespace detail

/// Solves A x = b with a method valid for non-symmetric matrices.
inline Eigen::VectorXd solve_linear(const LinearSystem& sys, const SolveOptions& opts, SolveStats* stats = nullptr) {
    BELTRAMI_THROW_IF(!(opts.tolerance > 0.0), DomainError, "solver tolerance must be positive");
    SolveStats st;
    st.method = opts.method;
    st.dofs = static_cast<std::size_t>(sys.rhs.size());
    Eigen::VectorXd x;
    if (sys.rhs.size() == 0) {
        if (stats) *stats = st;
        return x;
    }
    if (opts.method == SolveMethod::direct_lu) {
        Eigen::SparseMatrix<double> A = sys.matrix;
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw SolverError("sparse LU factorization failed", -1.0, 0);
        x = lu.solve(sys.rhs);
        st.iterations = 1;
    } else {
        Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<double>> it;
        it.setTolerance(opts.tolerance);
        it.setMaxIterations(opts.max_iterations);
        it.compute(sys.matrix);
        x = it.solve(sys.rhs);
        st.iterations = static_cast<int>(it.iterations());
    }
    st.relative_residual = detail::relative_residual(sys.matrix, x, sys.rhs);
    if (stats) *stats = st;
    if (!(st.relative_residual <= opts.tolerance) || !x.allFinite())
        throw SolverError("linear solve did not reach tolerance (relative residual " +
                              std::to_string(st.relative_residual) + ")",
                          st.relative_residual, st.iterations);
    return x;
}

/// Weak form sum_T |T| grad(phi_i) . sigma grad(phi_j) over free vertices,
/// with prescribed boundary values moved to the right-hand side.
inline LinearSystem assemble_dirichlet(const ElementMatrixField& sigma, const std::vector<double>& boundary_values) {
    const TriMesh& m = *sigma.mesh;
    BELTRAMI_THROW_IF(m.periodicity != Periodicity::none, DomainError, "Dirichlet assembly needs a non-periodic mesh");
    detail::check_coefficients(sigma);
    const auto on_boundary = m.boundary_mask();
    LinearSystem sys;
    sys.dof_map.assign(m.num_vertices(), -1);
    int n = 0;
    for (std::size_t v = 0; v < m.num_vertices(); ++v)
        if (!on_boundary[v]) sys.dof_map[v] = n++;
    sys.rhs = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * m.num_triangles());
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto grads = m.basis_gradients(t);
        const double area = m.area(t);
        const auto& tri = m.triangles[t];
        const Mat2& s = sigma.values[t];
        for (int i = 0; i < 3; ++i) {
            const int row = sys.dof_map[tri[i]];
            if (row < 0) continue;
            for (int j = 0; j < 3; ++j) {
                const double a = area * grads[i].dot(s * grads[j]);
                const int col = sys.dof_map[tri[j]];
                if (col >= 0)
                    triplets.emplace_back(row, col, a);
                else
                    sys.rhs[row] -= a * boundary_values[tri[j]];
            }
        }
    }
    sys.matrix.resize(n, n);
    sys.matrix.setFromTriplets(triplets.begin(), triplets.end());
    return sys;
}

inline ScalarFieldP1 solve_dirichlet(const ElementMatrixField& sigma, const BoundaryTrace& g,
                                     const SolveOptions& opts = {}, SolveStats* stats = nullptr) {
    const TriMesh& m = *sigma.mesh;
    std::vector<double> values(m.num_vertices(), 0.0);
    for (int v : m.boundary_loop) {
        values[v] = g(m.vertices[v]);
        BELTRAMI_THROW_IF(!std::isfinite(values[v]), DomainError, "boundary trace is not finite");
    }
    const LinearSystem sys = assemble_dirichlet(sigma, values);
    const Eigen::VectorXd x = solve_linear(sys, opts, stats);
    for (std::size_t v = 0; v < m.num_vertices(); ++v)
        if (sys.dof_map[v] >= 0) values[v] = x[sys.dof_map[v]];
    return {sigma.mesh, std::move(values)};
}

/// Residual of the discrete equation at every free vertex of a Dirichlet mesh.
inline std::vector<double> interior_residuals(const ElementMatrixField& sigma, const ScalarFieldP1& u) {
    const TriMesh& m = *sigma.mesh;
    const auto on_boundary = m.boundary_mask();
    std::vector<double> r(m.num_vertices(), 0.0);
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto grads = m.basis_gradients(t);
        const auto& tri = m.triangles[t];
        Vec2 gu = Vec2::Zero();
        for (int j = 0; j < 3; ++j) gu += u.nodal_values[tri[j]] * grads[j];
        const Vec2 flux = sigma.values[t] * gu;
        for (int i = 0; i < 3; ++i) r[tri[i]] += m.area(t) * grads[i].dot(flux);
    }
    for (std::size_t v = 0; v < r.size(); ++v)
        if (on_boundary[v]) r[v] = 0.0;
    return r;
}

/// Cell problem on the torus: u - xi.x periodic, zero mean over Q.
inline ScalarFieldP1 solve_periodic_cell(const ElementMatrixField& sigma, const Vec2& xi, const SolveOptions& opts = {},
                                         SolveStats* stats = nullptr) {
    const TriMesh& m = *sigma.mesh;
    BELTRAMI_THROW_IF(m.periodicity != Periodicity::unit_square_identification, DomainError,
                      "cell problems need the periodic unit cell mesh");
    detail::check_coefficients(sigma);
    // class 0 is pinned; remaining classes are numbered 0..n-1
    const int n = m.free_vertex_count - 1;
    auto row_of = [](int cls) { return cls - 1; };
    LinearSystem sys;
    sys.dof_map.resize(m.num_vertices());
    for (std::size_t v = 0; v < m.num_vertices(); ++v) sys.dof_map[v] = row_of(m.vertex_class[v]);
    sys.rhs = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * m.num_triangles());
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto grads = m.basis_gradients(t);
        const double area = m.area(t);
        const auto& tri = m.triangles[t];
        const Mat2& s = sigma.values[t];
        const Vec2 applied = s * xi;
        for (int i = 0; i < 3; ++i) {
            const int row = sys.dof_map[tri[i]];
            if (row < 0) continue;
            sys.rhs[row] -= area * grads[i].dot(applied);
            for (int j = 0; j < 3; ++j) {
                const int col = sys.dof_map[tri[j]];
                if (col >= 0) triplets.emplace_back(row, col, area * grads[i].dot(s * grads[j]));
            }
        }
    }
    sys.matrix.resize(n, n);
    sys.matrix.setFromTriplets(triplets.begin(), triplets.end());
    const Eigen::VectorXd w = solve_linear(sys, opts, stats);

    std::vector<double> values(m.num_vertices());
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
        const int row = sys.dof_map[v];
        values[v] = xi.dot(m.vertices[v]) + (row >= 0 ? w[row] : 0.0);
    }
    // the periodic part u - xi.x gets zero mean
    ScalarFieldP1 periodic_part{sigma.mesh, values};
    for (std::size_t v = 0; v < m.num_vertices(); ++v) periodic_part.nodal_values[v] -= xi.dot(m.vertices[v]);
    const double mean = integrate(periodic_part) / m.total_area();
    for (double& x : values) x -= mean;
    return {sigma.mesh, std::move(values)};
}

/// Per-element J sigma grad u, the exact gradient of the stream function.
inline ElementVectorField rotated_flux(const ElementMatrixField& sigma, const ElementVectorField& grad_u) {
    const Mat2 J = rotation_J();
    ElementVectorField g(grad_u.size());
    for (std::size_t t = 0; t < g.size(); ++t) g[t] = J * (sigma.values[t] * grad_u[t]);
    return g;
}

/// Circulation of an element vector field around each vertex patch, i.e.
/// the sum over incident triangles of (opposite edge) . g_T. Zero at interior
/// vertices exactly when g is the rotated flux of a discrete solution.
inline std::vector<double> vertex_circulation(const TriMesh& m, const ElementVectorField& g) {
    std::vector<double> c(m.num_vertices(), 0.0);
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        for (int i = 0; i < 3; ++i) {
            const Vec2 edge = m.vertices[tri[(i + 2) % 3]] - m.vertices[tri[(i + 1) % 3]];
            c[tri[i]] += edge.dot(g[t]);
        }
    }
    return c;
}

struct StreamFunctionResult {
    ScalarFieldP1 psi;
    double residual_l2 = 0.0;  // || grad psi - J sigma grad u ||_{L2}
    SolveStats stats;
};

/// Least-squares P1 potential of an element vector field, anchored to zero
/// at vertex 0. Periodic meshes are treated as the unwrapped fundamental domain.
inline StreamFunctionResult potential_least_squares(const MeshPtr& mesh, const ElementVectorField& g) {
    const TriMesh& m = *mesh;
    BELTRAMI_THROW_IF(g.size() != m.num_triangles(), DomainError, "element field size mismatch");
    const int n = static_cast<int>(m.num_vertices()) - 1;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * m.num_triangles());
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto grads = m.basis_gradients(t);
        const double area = m.area(t);
        const auto& tri = m.triangles[t];
        for (int i = 0; i < 3; ++i) {
            const int row = tri[i] - 1;
            if (row < 0) continue;
            rhs[row] += area * grads[i].dot(g[t]);
            for (int j = 0; j < 3; ++j) {
                const int col = tri[j] - 1;
                if (col >= 0) triplets.emplace_back(row, col, area * grads[i].dot(grads[j]));
            }
        }
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(A);
    if (ldlt.info() != Eigen::Success) throw SolverError("stream function factorization failed", -1.0, 0);
    const Eigen::VectorXd x = ldlt.solve(rhs);

    StreamFunctionResult r;
    r.stats.method = SolveMethod::direct_lu;
    r.stats.dofs = static_cast<std::size_t>(n);
    r.stats.iterations = 1;
    r.stats.relative_residual = rhs.norm() > 0.0 ? (A * x - rhs).norm() / rhs.norm() : (A * x - rhs).norm();
    std::vector<double> values(m.num_vertices(), 0.0);
    for (int v = 1; v <= n; ++v) values[v] = x[v - 1];
    r.psi = ScalarFieldP1{mesh, std::move(values)};
    const auto gp = element_gradient(r.psi);
    double acc = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) acc += m.area(t) * (gp[t] - g[t]).squaredNorm();
    r.residual_l2 = std::sqrt(acc);
    return r;
}

inline StreamFunctionResult stream_function(const ElementMatrixField& sigma, const ScalarFieldP1& u) {
    return potential_least_squares(sigma.mesh, rotated_flux(sigma, element_gradient(u)));
}

} // namespace beltrami
