#pragma once

// Empirical BMO, reverse-Hoelder and A-infinity estimates for positive
// per-element weights (Jacobian determinants), and L^p higher-integrability
// probes of gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/coefficients.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"

namespace beltrami {

/// Positive per-element weight with the measure of each element.
struct WeightField {
    std::vector<double> values;
    std::vector<double> areas;
};

namespace detail {

inline void require_positive(std::span<const double> w) {
    for (std::size_t t = 0; t < w.size(); ++t)
        BELTRAMI_THROW_IF(!(w[t] > 0.0), DomainError,
                          "weight must be positive; element " + std::to_string(t) + " has value " + std::to_string(w[t]));
}

inline double mean_of(const WeightField& w, const DyadicSquare& q, auto&& f) {
    double s = 0.0;
    for (int t : q.members) s += w.areas[t] * f(w.values[t]);
    return s / q.member_area;
}

} // namespace detail

inline bool admissible(const DyadicSquare& q) { return !q.too_few_elements && q.inside_domain && q.member_area > 0.0; }

/// Mean oscillation of log w on one square.
inline double log_oscillation(const WeightField& w, const DyadicSquare& q) {
    const double m = detail::mean_of(w, q, [](double x) { return std::log(x); });
    return detail::mean_of(w, q, [m](double x) { return std::abs(std::log(x) - m); });
}

inline double bmo_norm(const WeightField& w, const DyadicSquareSet& squares) {
    detail::require_positive(w.values);
    double best = 0.0;
    for (const auto& q : squares.squares)
        if (admissible(q)) best = std::max(best, log_oscillation(w, q));
    return best;
}

/// (mean w^p)^(1/p) / mean w on one square.
inline double reverse_holder_ratio(const WeightField& w, const DyadicSquare& q, double exponent) {
    const double mp = detail::mean_of(w, q, [exponent](double x) { return std::pow(x, exponent); });
    const double m1 = detail::mean_of(w, q, [](double x) { return x; });
    return std::pow(mp, 1.0 / exponent) / m1;
}

/// Max over admissible squares. With exponent 2 the squares are further
/// restricted to those whose double 2Q lies inside the domain.
inline double reverse_holder_constant(const WeightField& w, const DyadicSquareSet& squares, double exponent,
                                      std::optional<bool> restrict_to_doubled = std::nullopt) {
    BELTRAMI_THROW_IF(!(exponent > 1.0), DomainError, "reverse Hoelder exponent must exceed 1");
    detail::require_positive(w.values);
    const bool doubled = restrict_to_doubled.value_or(exponent == 2.0);
    double best = 1.0;
    bool any = false;
    for (const auto& q : squares.squares) {
        if (!admissible(q) || (doubled && !q.doubled_inside)) continue;
        best = std::max(best, reverse_holder_ratio(w, q, exponent));
        any = true;
    }
    BELTRAMI_THROW_IF(!any, DomainError, "no admissible square for the reverse Hoelder constant");
    return best;
}

// ---------------------------------------------------------------------------
// Per-square statistics table

struct SquareStats {
    std::size_t id = 0;
    int level = 0;
    Vec2 corner;
    double side = 0.0;
    std::size_t elements = 0;
    bool admissible = false;
    bool doubled_inside = false;
    double mean_w = 0.0;
    double mean_w2 = 0.0;
    std::vector<double> mean_w_theta;  // mean of w^(1+theta)
    double log_oscillation = 0.0;
};

struct SquareStatsTable {
    std::vector<double> theta_grid;
    std::vector<SquareStats> rows;
};

inline SquareStatsTable square_stats(const WeightField& w, const DyadicSquareSet& squares,
                                     std::vector<double> theta_grid = {0.25, 0.5, 1.0}) {
    detail::require_positive(w.values);
    SquareStatsTable table;
    table.theta_grid = std::move(theta_grid);
    for (std::size_t k = 0; k < squares.squares.size(); ++k) {
        const auto& q = squares.squares[k];
        SquareStats s;
        s.id = k;
        s.level = q.level;
        s.corner = q.corner;
        s.side = q.side;
        s.elements = q.members.size();
        s.admissible = admissible(q);
        s.doubled_inside = q.doubled_inside;
        if (q.member_area > 0.0) {
            s.mean_w = detail::mean_of(w, q, [](double x) { return x; });
            s.mean_w2 = detail::mean_of(w, q, [](double x) { return x * x; });
            for (double th : table.theta_grid)
                s.mean_w_theta.push_back(detail::mean_of(w, q, [th](double x) { return std::pow(x, 1.0 + th); }));
            s.log_oscillation = log_oscillation(w, q);
        } else {
            s.mean_w_theta.assign(table.theta_grid.size(), 0.0);
        }
        table.rows.push_back(std::move(s));
    }
    return table;
}

inline void write_square_stats_csv(std::ostream& os, const SquareStatsTable& table) {
    os << "square_id,level,x,y,side,elements,admissible,doubled_inside,mean_w,mean_w2";
    for (double th : table.theta_grid) os << ",mean_w_1p" << th;
    os << ",log_oscillation\n";
    os.precision(17);
    for (const auto& r : table.rows) {
        os << r.id << ',' << r.level << ',' << r.corner.x() << ',' << r.corner.y() << ',' << r.side << ','
           << r.elements << ',' << (r.admissible ? 1 : 0) << ',' << (r.doubled_inside ? 1 : 0) << ',' << r.mean_w
           << ',' << r.mean_w2;
        for (double v : r.mean_w_theta) os << ',' << v;
        os << ',' << r.log_oscillation << '\n';
    }
}

// ---------------------------------------------------------------------------
// A-infinity envelopes

struct SubsetSampler {
    std::vector<double> fractions{1.0 / 16.0, 0.25, 0.5};
    int random_per_fraction = 4;
    bool include_extremes = true;  // heaviest-first and lightest-first subsets
    std::uint64_t seed = 0;
};

struct SubsetSample {
    std::size_t square = 0;
    double area_fraction = 1.0;    // |E| / |P|
    double weight_fraction = 1.0;  // int_E w / int_P w
};

/// Envelopes r <= C t^delta and r >= M t^eta over the sampled (t, r),
/// anchored at the E = P sample (t = r = 1), so C = M = 1 and the
/// exponents are the extreme slopes of log r / log t.
struct AinftyFit {
    double C = 1.0;
    double delta = 1.0;
    double M = 1.0;
    double eta = 1.0;
    std::size_t samples = 0;
    bool brackets_all = true;
    std::vector<SubsetSample> data;
};

namespace detail {

inline std::vector<int> prefix_until(const std::vector<int>& order, const WeightField& w, double target_area) {
    std::vector<int> e;
    double a = 0.0;
    for (int t : order) {
        if (a >= target_area) break;
        e.push_back(t);
        a += w.areas[t];
    }
    return e;
}

} // namespace detail

/// Samples subsets E of each admissible square P as unions of whole elements.
inline std::vector<SubsetSample> sample_subsets(const WeightField& w, const DyadicSquareSet& squares,
                                                const SubsetSampler& sampler) {
    BELTRAMI_THROW_IF(sampler.fractions.empty(), DomainError, "subset sampler has no area fractions");
    for (double f : sampler.fractions)
        BELTRAMI_THROW_IF(!(f > 0.0 && f <= 1.0), DomainError, "subset fractions must lie in (0,1]");
    BELTRAMI_THROW_IF(!sampler.include_extremes && sampler.random_per_fraction <= 0, DomainError,
                      "subset sampler produces no subsets");
    const CounterRng rng(sampler.seed, 0xa1f1ULL);
    std::vector<SubsetSample> out;
    for (std::size_t k = 0; k < squares.squares.size(); ++k) {
        const auto& q = squares.squares[k];
        if (!admissible(q)) continue;
        double wp = 0.0;
        for (int t : q.members) wp += w.areas[t] * w.values[t];
        auto record = [&](const std::vector<int>& e) {
            BELTRAMI_THROW_IF(e.empty(), DomainError, "sampler produced an empty subset");
            double a = 0.0, we = 0.0;
            for (int t : e) {
                a += w.areas[t];
                we += w.areas[t] * w.values[t];
            }
            out.push_back({k, a / q.member_area, we / wp});
        };
        record(q.members);
        for (double f : sampler.fractions) {
            const double target = f * q.member_area;
            if (sampler.include_extremes) {
                std::vector<int> order = q.members;
                std::stable_sort(order.begin(), order.end(),
                                 [&](int a, int b) { return w.values[a] > w.values[b]; });
                record(detail::prefix_until(order, w, target));
                std::reverse(order.begin(), order.end());
                record(detail::prefix_until(order, w, target));
            }
            for (int r = 0; r < sampler.random_per_fraction; ++r) {
                std::vector<std::pair<std::uint64_t, int>> keyed;
                keyed.reserve(q.members.size());
                const std::uint64_t base = (static_cast<std::uint64_t>(k) << 32) ^
                                           (static_cast<std::uint64_t>(r) << 20) ^
                                           static_cast<std::uint64_t>(f * 1e6);
                for (int t : q.members) keyed.emplace_back(rng.bits(base * 0x100000001b3ULL + t), t);
                std::sort(keyed.begin(), keyed.end());
                std::vector<int> order;
                order.reserve(keyed.size());
                for (const auto& kv : keyed) order.push_back(kv.second);
                record(detail::prefix_until(order, w, target));
            }
        }
    }
    return out;
}

inline AinftyFit fit_ainfty_envelopes(std::vector<SubsetSample> data) {
    AinftyFit fit;
    fit.samples = data.size();
    double delta = kInfinity;
    double eta = -kInfinity;
    for (const auto& s : data) {
        if (s.area_fraction >= 1.0 - 1e-12) continue;
        const double slope = std::log(s.weight_fraction) / std::log(s.area_fraction);
        delta = std::min(delta, slope);
        eta = std::max(eta, slope);
    }
    if (std::isfinite(delta)) {
        fit.delta = delta;
        fit.eta = eta;
    }
    for (const auto& s : data) {
        const double up = fit.C * std::pow(s.area_fraction, fit.delta);
        const double low = fit.M * std::pow(s.area_fraction, fit.eta);
        if (s.weight_fraction > up * (1.0 + 1e-12) || s.weight_fraction < low * (1.0 - 1e-12)) fit.brackets_all = false;
    }
    fit.data = std::move(data);
    return fit;
}

inline AinftyFit ainfty_probe(const WeightField& w, const DyadicSquareSet& squares, const SubsetSampler& sampler = {}) {
    detail::require_positive(w.values);
    return fit_ainfty_envelopes(sample_subsets(w, squares, sampler));
}

struct QuantitativeJacobianResult {
    double lhs = 0.0;         // int_E det DU^A / det A
    double rhs_shape = 0.0;   // (|E|/|P|)^delta int_P det DU^A / det A
    double bound = 0.0;       // C * rhs_shape
    bool violated = false;
};

/// Lower bound int_E w >= C (|E|/|P|)^delta int_P w with w = det DU^A / det A.
inline QuantitativeJacobianResult quantitative_jacobian_check(const ElementScalarField& det_DU, double det_A,
                                                              std::span<const double> areas, std::span<const int> E,
                                                              const DyadicSquare& P, double C, double delta) {
    BELTRAMI_THROW_IF(det_A == 0.0, DomainError, "quantitative Jacobian bound needs a nonsingular A");
    std::vector<bool> in_p(areas.size(), false);
    for (int t : P.members) in_p[t] = true;
    QuantitativeJacobianResult r;
    double area_e = 0.0, area_p = 0.0, int_p = 0.0;
    for (int t : E) {
        BELTRAMI_THROW_IF(!in_p[t], DomainError, "subset E must lie inside the square P");
        area_e += areas[t];
        r.lhs += areas[t] * det_DU[t] / det_A;
    }
    for (int t : P.members) {
        area_p += areas[t];
        int_p += areas[t] * det_DU[t] / det_A;
    }
    r.rhs_shape = std::pow(area_e / area_p, delta) * int_p;
    r.bound = C * r.rhs_shape;
    r.violated = r.lhs < r.bound * (1.0 - 1e-12);
    return r;
}

// ---------------------------------------------------------------------------
// Higher integrability

struct LpRow {
    int resolution = 0;
    double p = 2.0;
    double norm = 0.0;  // (int_interior |grad u|^p)^(1/p)
    bool below_p_sup = true;
};

/// Interior L^p norms of |grad u|; the interior excludes a margin (fraction of
/// the bounding box width) on every side.
inline double interior_lp_norm(const TriMesh& m, const ElementVectorField& grad, double p, double margin = 0.125) {
    Vec2 lo = m.vertices.front(), hi = m.vertices.front();
    for (const auto& v : m.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const Vec2 pad = margin * (hi - lo);
    lo += pad;
    hi -= pad;
    double s = 0.0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const Vec2 b = m.barycenter(t);
        if (b.x() < lo.x() || b.y() < lo.y() || b.x() > hi.x() || b.y() > hi.y()) continue;
        s += m.area(t) * std::pow(grad[t].norm(), p);
    }
    return std::pow(s, 1.0 / p);
}

struct GradientSample {
    MeshPtr mesh;
    ElementVectorField grad;
};

inline std::vector<LpRow> higher_integrability_probe(std::span<const GradientSample> samples,
                                                     std::span<const double> p_list, const EllipticityReport& report,
                                                     double margin = 0.125) {
    std::vector<LpRow> rows;
    for (const auto& s : samples)
        for (double p : p_list)
            rows.push_back({s.mesh->resolution, p, interior_lp_norm(*s.mesh, s.grad, p, margin), p < report.p_sup});
    return rows;
}

} // namespace beltrami
