#pragma once

// Config-driven experiment runner. A run executes one task pipeline and
// writes CSV fields, a run log and a summary of named invariants with
// pass/fail; a sweep runs many configs and aggregates headline metrics.
//
// No timings or addresses enter the outputs, so reruns of the same config
// produce byte-identical files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "beltrami/beltrami.hpp"

namespace beltrami {

using Json = nlohmann::ordered_json;

enum class Task { convert, solve, primary_pair, cell, homogenize, diagnose };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::convert: return "convert";
        case Task::solve: return "solve";
        case Task::primary_pair: return "primary-pair";
        case Task::cell: return "cell";
        case Task::homogenize: return "homogenize";
        case Task::diagnose: return "diagnose";
    }
    return "?";
}

inline std::optional<Task> parse_task(const std::string& s) {
    for (Task t : {Task::convert, Task::solve, Task::primary_pair, Task::cell, Task::homogenize, Task::diagnose})
        if (s == task_name(t)) return t;
    if (s == "primary_pair") return Task::primary_pair;
    return std::nullopt;
}

struct BoundarySpec {
    enum class Kind { affine, polygon, samples } kind = Kind::affine;
    Mat2 A = Mat2::Identity();  // affine: phi(x) = A x + b
    Vec2 b = Vec2::Zero();
    std::vector<Vec2> polygon;  // traced by normalized arclength from boundary vertex 0
    std::vector<Vec2> samples;  // one (phi1, phi2) per boundary-loop vertex
};

struct ConvertSpec {
    std::optional<BeltramiPair> pair;
    std::optional<Mat2> sigma;
};

struct DiagnoseSpec {
    int max_level = 4;
    double exponent = 2.0;
    std::vector<double> p_list{2.0, 3.0, 4.0};
    SubsetSampler sampler;
};

struct ExperimentConfig {
    Task task = Task::convert;
    DomainSpec domain;
    int resolution = 32;
    std::optional<CoefficientSpec> coefficient;
    BoundarySpec boundary;
    ConvertSpec convert;
    Mat2 cell_A = Mat2::Identity();
    std::optional<double> oracle_tolerance;  // homogenize: assert the closed-form sigma_eff
    std::optional<double> area_tolerance;    // homogenize: assert the area theorem
    DiagnoseSpec diagnose;
    SolveOptions solver;
    std::string output = "out";
    Json source;  // the document the config was parsed from
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline const Json& require_field(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(path + key + ": required field is missing");
    return j.at(key);
}

template <class T>
T read_as(const Json& j, const std::string& field) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(field + ": wrong type");
    }
}

template <class T>
T read_or(const Json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return read_as<T>(j.at(key), path + key);
}

inline Mat2 read_matrix(const Json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_array() || !j[1].is_array() || j[0].size() != 2 || j[1].size() != 2)
        throw ConfigError(field + ": expected [[a, b], [c, d]]");
    Mat2 m;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) m(r, c) = read_as<double>(j[r][c], field);
    return m;
}

inline Vec2 read_vec(const Json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(field + ": expected [x, y]");
    return {read_as<double>(j[0], field), read_as<double>(j[1], field)};
}

inline Complex read_complex(const Json& j, const std::string& field) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    const Vec2 v = read_vec(j, field);
    return {v.x(), v.y()};
}

inline DomainSpec parse_domain(const Json& j, Task task) {
    const bool cell_task = task == Task::cell || task == Task::homogenize;
    if (j.is_null()) return cell_task ? DomainSpec::periodic_cell() : DomainSpec::unit_square();
    const std::string kind = read_or<std::string>(j, "kind", "domain.", "unit_square");
    DomainSpec d;
    if (kind == "unit_square") {
        d = DomainSpec::unit_square();
    } else if (kind == "periodic_cell") {
        d = DomainSpec::periodic_cell();
    } else if (kind == "regular_ngon") {
        d = DomainSpec::regular_ngon(read_as<int>(require_field(j, "n_sides", "domain."), "domain.n_sides"),
                                     read_or<double>(j, "radius", "domain.", 1.0));
        if (d.n_sides < 3) throw ConfigError("domain.n_sides: need at least 3 sides");
        if (!(d.radius > 0.0)) throw ConfigError("domain.radius: must be positive");
    } else {
        throw ConfigError("domain.kind: unknown domain '" + kind + "'");
    }
    if (cell_task && d.kind != DomainKind::periodic_cell)
        throw ConfigError("domain.kind: task " + std::string(task_name(task)) + " needs periodic_cell");
    if (!cell_task && task != Task::convert && d.kind == DomainKind::periodic_cell)
        throw ConfigError("domain.kind: task " + std::string(task_name(task)) + " needs a bounded convex domain");
    return d;
}

inline CoefficientSpec parse_coefficient(const Json& j) {
    const std::string p = "coefficient.";
    const std::string family = read_as<std::string>(require_field(j, "family", p), p + "family");
    CoefficientSpec spec;
    if (family == "constant") {
        spec = coeff::Constant{read_matrix(require_field(j, "matrix", p), p + "matrix")};
    } else if (family == "laminate") {
        coeff::Laminate s;
        s.a = read_as<double>(require_field(j, "a", p), p + "a");
        s.b = read_as<double>(require_field(j, "b", p), p + "b");
        s.direction = read_or<int>(j, "direction", p, s.direction);
        s.fraction = read_or<double>(j, "fraction", p, s.fraction);
        s.periods = read_or<int>(j, "periods", p, s.periods);
        spec = s;
    } else if (family == "checkerboard") {
        coeff::Checkerboard s;
        s.a = read_as<double>(require_field(j, "a", p), p + "a");
        s.b = read_as<double>(require_field(j, "b", p), p + "b");
        s.cells = read_or<int>(j, "cells", p, s.cells);
        spec = s;
    } else if (family == "random_piecewise") {
        coeff::RandomPiecewise s;
        s.K_max = read_as<double>(require_field(j, "K_max", p), p + "K_max");
        s.cells = read_or<int>(j, "cells", p, s.cells);
        s.seed = read_as<std::uint64_t>(require_field(j, "seed", p), p + "seed");
        s.symmetric = read_or<bool>(j, "symmetric", p, s.symmetric);
        spec = s;
    } else if (family == "hall") {
        coeff::Hall s;
        s.a = read_as<double>(require_field(j, "a", p), p + "a");
        s.b = read_as<double>(require_field(j, "b", p), p + "b");
        spec = s;
    } else if (family == "table") {
        coeff::Table s;
        s.cells = read_as<int>(require_field(j, "cells", p), p + "cells");
        const Json& mats = require_field(j, "matrices", p);
        if (!mats.is_array()) throw ConfigError(p + "matrices: expected a list of matrices");
        for (std::size_t k = 0; k < mats.size(); ++k)
            s.matrices.push_back(read_matrix(mats[k], p + "matrices[" + std::to_string(k) + "]"));
        spec = s;
    } else {
        throw ConfigError(p + "family: unknown family '" + family + "'");
    }
    try {
        validate(spec);
    } catch (const Error& e) {
        throw ConfigError(p + family + ": " + e.what());
    }
    return spec;
}

inline BoundarySpec parse_boundary(const Json& j) {
    BoundarySpec b;
    if (j.is_null()) return b;
    const std::string p = "boundary.";
    const std::string kind = read_or<std::string>(j, "kind", p, "affine");
    if (kind == "affine") {
        b.kind = BoundarySpec::Kind::affine;
        if (j.contains("A")) b.A = read_matrix(j.at("A"), p + "A");
        if (j.contains("b")) b.b = read_vec(j.at("b"), p + "b");
    } else if (kind == "polygon") {
        b.kind = BoundarySpec::Kind::polygon;
        const Json& v = require_field(j, "vertices", p);
        if (!v.is_array() || v.size() < 3) throw ConfigError(p + "vertices: need at least 3 vertices");
        for (std::size_t k = 0; k < v.size(); ++k)
            b.polygon.push_back(read_vec(v[k], p + "vertices[" + std::to_string(k) + "]"));
    } else if (kind == "samples") {
        b.kind = BoundarySpec::Kind::samples;
        const Json& v = require_field(j, "values", p);
        if (!v.is_array()) throw ConfigError(p + "values: expected a list of [phi1, phi2]");
        for (std::size_t k = 0; k < v.size(); ++k)
            b.samples.push_back(read_vec(v[k], p + "values[" + std::to_string(k) + "]"));
    } else {
        throw ConfigError(p + "kind: unknown boundary kind '" + kind + "'");
    }
    return b;
}

inline SolveOptions parse_solver(const Json& j) {
    SolveOptions o;
    if (j.is_null()) return o;
    const std::string p = "solver.";
    const std::string method = read_or<std::string>(j, "method", p, "direct_lu");
    if (method == "direct_lu")
        o.method = SolveMethod::direct_lu;
    else if (method == "iterative_nonsymmetric")
        o.method = SolveMethod::iterative_nonsymmetric;
    else
        throw ConfigError(p + "method: unknown method '" + method + "'");
    o.tolerance = read_or<double>(j, "tolerance", p, o.tolerance);
    o.max_iterations = read_or<int>(j, "max_iterations", p, o.max_iterations);
    if (!(o.tolerance > 0.0)) throw ConfigError(p + "tolerance: must be positive");
    if (o.max_iterations < 1) throw ConfigError(p + "max_iterations: must be >= 1");
    return o;
}

inline Json field_or_null(const Json& j, const std::string& key) { return j.contains(key) ? j.at(key) : Json(); }

} // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
    using namespace detail;
    if (!j.is_object()) throw ConfigError("config: expected an object");
    ExperimentConfig c;
    c.source = j;
    const std::string task = read_as<std::string>(require_field(j, "task", ""), "task");
    const auto t = parse_task(task);
    if (!t) throw ConfigError("task: unknown task '" + task + "'");
    c.task = *t;
    c.domain = parse_domain(field_or_null(j, "domain"), c.task);
    c.resolution = read_or<int>(j, "resolution", "", c.resolution);
    if (c.resolution < 2) throw ConfigError("resolution: must be >= 2");
    c.output = read_or<std::string>(j, "output", "", c.output);
    c.solver = parse_solver(field_or_null(j, "solver"));

    if (c.task == Task::convert) {
        const Json& cv = require_field(j, "convert", "");
        if (cv.contains("sigma")) {
            c.convert.sigma = read_matrix(cv.at("sigma"), "convert.sigma");
        } else {
            BeltramiPair p;
            p.mu = read_complex(require_field(cv, "mu", "convert."), "convert.mu");
            p.nu = read_complex(require_field(cv, "nu", "convert."), "convert.nu");
            c.convert.pair = p;
        }
        return c;
    }

    c.coefficient = parse_coefficient(require_field(j, "coefficient", ""));
    if (c.task == Task::solve) {
        c.boundary = parse_boundary(require_field(j, "boundary", ""));
    }
    if (c.task == Task::cell && j.contains("cell")) {
        const Json& cell = j.at("cell");
        if (cell.contains("A")) c.cell_A = read_matrix(cell.at("A"), "cell.A");
    }
    if (c.task == Task::homogenize && j.contains("homogenize")) {
        const Json& h = j.at("homogenize");
        if (h.contains("oracle_tolerance"))
            c.oracle_tolerance = read_as<double>(h.at("oracle_tolerance"), "homogenize.oracle_tolerance");
        if (h.contains("area_tolerance"))
            c.area_tolerance = read_as<double>(h.at("area_tolerance"), "homogenize.area_tolerance");
    }
    if (c.task == Task::diagnose) {
        if (c.domain.kind != DomainKind::unit_square)
            throw ConfigError("domain.kind: diagnose runs on the unit square");
        if (j.contains("diagnose")) {
            const Json& d = j.at("diagnose");
            const std::string p = "diagnose.";
            c.diagnose.max_level = read_or<int>(d, "max_level", p, c.diagnose.max_level);
            c.diagnose.exponent = read_or<double>(d, "exponent", p, c.diagnose.exponent);
            c.diagnose.p_list = read_or<std::vector<double>>(d, "p_list", p, c.diagnose.p_list);
            if (d.contains("sampler")) {
                const Json& s = d.at("sampler");
                const std::string q = p + "sampler.";
                c.diagnose.sampler.fractions = read_or<std::vector<double>>(s, "fractions", q, c.diagnose.sampler.fractions);
                c.diagnose.sampler.random_per_fraction =
                    read_or<int>(s, "random_per_fraction", q, c.diagnose.sampler.random_per_fraction);
                c.diagnose.sampler.include_extremes =
                    read_or<bool>(s, "include_extremes", q, c.diagnose.sampler.include_extremes);
                c.diagnose.sampler.seed = read_or<std::uint64_t>(s, "seed", q, c.diagnose.sampler.seed);
            }
            if (c.diagnose.max_level < 0 || c.diagnose.max_level > 12)
                throw ConfigError("diagnose.max_level: must lie in [0, 12]");
            if (!(c.diagnose.exponent > 1.0)) throw ConfigError("diagnose.exponent: must exceed 1");
        }
    }
    return c;
}

/// Command-line overrides applied to the raw document before parsing.
struct Overrides {
    std::optional<int> resolution;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
};

inline Json apply_overrides(Json j, const Overrides& o) {
    if (o.resolution) j["resolution"] = *o.resolution;
    if (o.output) j["output"] = *o.output;
    if (o.seed) {
        if (j.contains("coefficient") && j["coefficient"].value("family", "") == "random_piecewise")
            j["coefficient"]["seed"] = *o.seed;
        if (j.value("task", "") == "diagnose") j["diagnose"]["sampler"]["seed"] = *o.seed;
    }
    return j;
}

inline Json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    try {
        return Json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Run records

struct InvariantCheck {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // "<=", ">", ">=", "=="
    bool passed = false;
};

struct RunRecord {
    std::string task;
    std::string family;
    int resolution = 0;
    std::vector<std::pair<std::string, double>> metrics;  // insertion order is output order
    std::vector<InvariantCheck> invariants;
    std::vector<std::string> log;
    std::vector<std::string> files;
    std::string error;

    void metric(const std::string& name, double v) { metrics.emplace_back(name, v); }

    std::optional<double> find_metric(const std::string& name) const {
        for (const auto& [k, v] : metrics)
            if (k == name) return v;
        return std::nullopt;
    }

    void at_most(const std::string& name, double value, double threshold) {
        invariants.push_back({name, value, threshold, "<=", value <= threshold});
    }
    void above(const std::string& name, double value, double threshold) {
        invariants.push_back({name, value, threshold, ">", value > threshold});
    }
    void holds(const std::string& name, bool ok) {
        invariants.push_back({name, ok ? 1.0 : 0.0, 1.0, "==", ok});
    }

    bool all_passed() const {
        if (!error.empty()) return false;
        return std::all_of(invariants.begin(), invariants.end(), [](const auto& i) { return i.passed; });
    }
};

namespace detail {

inline Json finite_or_string(double v) {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name, RunRecord& rec) {
    std::ofstream os(dir / name);
    if (!os) throw ResourceError("cannot write " + (dir / name).string());
    rec.files.push_back(name);
    return os;
}

inline void put_matrix(RunRecord& rec, const std::string& prefix, const Mat2& m) {
    rec.metric(prefix + "11", m(0, 0));
    rec.metric(prefix + "12", m(0, 1));
    rec.metric(prefix + "21", m(1, 0));
    rec.metric(prefix + "22", m(1, 1));
}

inline double min_of(const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(v.begin(), v.end());
}

inline double max_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

inline BoundaryTrace boundary_component(const TriMesh& m, const BoundarySpec& b, int comp) {
    switch (b.kind) {
        case BoundarySpec::Kind::affine: {
            const Vec2 row = b.A.row(comp).transpose();
            const double off = b.b[comp];
            return [row, off](const Vec2& x) { return row.dot(x) + off; };
        }
        case BoundarySpec::Kind::polygon: {
            // normalized arclength of the boundary loop -> same fraction of the polygon perimeter
            const auto& loop = m.boundary_loop;
            std::vector<double> s(loop.size() + 1, 0.0);
            for (std::size_t k = 0; k < loop.size(); ++k)
                s[k + 1] = s[k] + (m.vertices[loop[(k + 1) % loop.size()]] - m.vertices[loop[k]]).norm();
            std::vector<double> ps(b.polygon.size() + 1, 0.0);
            for (std::size_t k = 0; k < b.polygon.size(); ++k)
                ps[k + 1] = ps[k] + (b.polygon[(k + 1) % b.polygon.size()] - b.polygon[k]).norm();
            std::vector<std::pair<Vec2, double>> table;
            for (std::size_t k = 0; k < loop.size(); ++k) {
                const double target = s[k] / s.back() * ps.back();
                std::size_t e = std::upper_bound(ps.begin(), ps.end(), target) - ps.begin() - 1;
                e = std::min(e, b.polygon.size() - 1);
                const double len = ps[e + 1] - ps[e];
                const double w = len > 0.0 ? (target - ps[e]) / len : 0.0;
                const Vec2 p = (1.0 - w) * b.polygon[e] + w * b.polygon[(e + 1) % b.polygon.size()];
                table.emplace_back(m.vertices[loop[k]], p[comp]);
            }
            return [table](const Vec2& x) {
                std::size_t best = 0;
                double d = kInfinity;
                for (std::size_t k = 0; k < table.size(); ++k) {
                    const double dk = (table[k].first - x).squaredNorm();
                    if (dk < d) d = dk, best = k;
                }
                return table[best].second;
            };
        }
        case BoundarySpec::Kind::samples: {
            BELTRAMI_THROW_IF(b.samples.size() != m.boundary_loop.size(), ConfigError,
                              "boundary.values: need " + std::to_string(m.boundary_loop.size()) +
                                  " samples (one per boundary vertex), got " + std::to_string(b.samples.size()));
            std::vector<std::pair<Vec2, double>> table;
            for (std::size_t k = 0; k < m.boundary_loop.size(); ++k)
                table.emplace_back(m.vertices[m.boundary_loop[k]], b.samples[k][comp]);
            return [table](const Vec2& x) {
                std::size_t best = 0;
                double d = kInfinity;
                for (std::size_t k = 0; k < table.size(); ++k) {
                    const double dk = (table[k].first - x).squaredNorm();
                    if (dk < d) d = dk, best = k;
                }
                return table[best].second;
            };
        }
    }
    return {};
}

/// Closed-form sigma_eff where one exists: laminates (harmonic/arithmetic
/// means), two-phase 2x2 checkerboards (geometric mean), constant fields.
inline std::optional<Mat2> oracle_sigma_eff(const CoefficientSpec& spec) {
    if (const auto* s = std::get_if<coeff::Constant>(&spec)) return s->matrix;
    if (const auto* s = std::get_if<coeff::Hall>(&spec)) return hall_matrix(s->a, s->b);
    if (const auto* s = std::get_if<coeff::Laminate>(&spec)) {
        const double harm = 1.0 / (s->fraction / s->a + (1.0 - s->fraction) / s->b);
        const double arit = s->fraction * s->a + (1.0 - s->fraction) * s->b;
        Mat2 m = Mat2::Zero();
        m(0, 0) = s->direction == 1 ? harm : arit;
        m(1, 1) = s->direction == 1 ? arit : harm;
        return m;
    }
    if (const auto* s = std::get_if<coeff::Checkerboard>(&spec)) {
        if (s->cells % 2 == 0) return std::sqrt(s->a * s->b) * Mat2::Identity();
    }
    return std::nullopt;
}

inline EllipticityConstants field_constants(const ElementMatrixField& sigma) {
    EllipticityConstants c{kInfinity, 0.0};
    for (const auto& s : sigma.values) {
        const auto e = ellipticity_constants(s);
        c.alpha = std::min(c.alpha, e.alpha);
        c.beta = std::max(c.beta, e.beta);
    }
    return c;
}

inline ElementScalarField sigma_entry(const ElementMatrixField& f, int r, int c) {
    ElementScalarField out(f.values.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = f.values[t](r, c);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Task pipelines

namespace detail {

inline void run_convert(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir) {
    BeltramiPair pair;
    Mat2 sigma;
    if (c.convert.sigma) {
        sigma = *c.convert.sigma;
        require_elliptic(sigma);
        pair = beltrami_from_sigma(sigma);
    } else {
        pair = *c.convert.pair;
        sigma = sigma_from_beltrami(pair);
    }
    const Mat2 back = sigma_from_beltrami(beltrami_from_sigma(sigma));
    const BeltramiPair pback = beltrami_from_sigma(sigma_from_beltrami(pair));
    const double err = std::max((back - sigma).cwiseAbs().maxCoeff(),
                                std::max(std::abs(pback.mu - pair.mu), std::abs(pback.nu - pair.nu)));
    const auto k = ellipticity_constants(sigma);
    const auto rep = astala_exponent(k.alpha, k.beta);

    rec.metric("mu_re", pair.mu.real());
    rec.metric("mu_im", pair.mu.imag());
    rec.metric("nu_re", pair.nu.real());
    rec.metric("nu_im", pair.nu.imag());
    put_matrix(rec, "sigma_", sigma);
    rec.metric("alpha", k.alpha);
    rec.metric("beta", k.beta);
    rec.metric("K_pair", K_of_beltrami(pair));
    rec.metric("K_stream", rep.K_beltrami);
    rec.metric("p_sup", rep.p_sup);

    rec.at_most("round_trip_error", err, 1e-12);
    rec.above("sigma_elliptic_alpha", k.alpha, 0.0);
    rec.above("sigma_normalization_positive", 1.0 + sigma.trace() + sigma.determinant(), 0.0);
    rec.above("pair_dilatation_margin", 1.0 - pair.dilatation_sum(), 0.0);

    auto os = open_out(dir, "convert.csv", rec);
    os.precision(17);
    os << "mu_re,mu_im,nu_re,nu_im,s11,s12,s21,s22,alpha,beta,K,p_sup\n";
    os << pair.mu.real() << ',' << pair.mu.imag() << ',' << pair.nu.real() << ',' << pair.nu.imag() << ','
       << sigma(0, 0) << ',' << sigma(0, 1) << ',' << sigma(1, 0) << ',' << sigma(1, 1) << ',' << k.alpha << ','
       << k.beta << ',' << rep.K_beltrami << ',' << rep.p_sup << '\n';
}

inline void write_map_fields(const std::filesystem::path& dir, RunRecord& rec, const SigmaHarmonicMap& U,
                             const ElementScalarField* extra = nullptr, const std::string& extra_name = {}) {
    const TriMesh& m = *U.mesh();
    {
        const NamedColumn cols[] = {{"u1", U.u1.nodal_values}, {"u2", U.u2.nodal_values}};
        auto os = open_out(dir, "vertices.csv", rec);
        write_vertex_csv(os, m, cols);
    }
    const auto s11 = sigma_entry(U.sigma, 0, 0), s12 = sigma_entry(U.sigma, 0, 1);
    const auto s21 = sigma_entry(U.sigma, 1, 0), s22 = sigma_entry(U.sigma, 1, 1);
    std::vector<NamedColumn> cols{{"s11", s11}, {"s12", s12}, {"s21", s21}, {"s22", s22}, {"det_DU", U.det_DU}};
    if (extra) cols.push_back({extra_name, *extra});
    auto os = open_out(dir, "triangles.csv", rec);
    write_triangle_csv(os, m, cols);
}

inline void run_solve(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir,
                      const ElementMatrixField& sigma) {
    const TriMesh& m = *sigma.mesh;
    const auto phi1 = boundary_component(m, c.boundary, 0);
    const auto phi2 = boundary_component(m, c.boundary, 1);
    SolveStats s1, s2;
    auto u1 = solve_dirichlet(sigma, phi1, c.solver, &s1);
    auto u2 = solve_dirichlet(sigma, phi2, c.solver, &s2);
    rec.log.push_back(s1.log_line("u1"));
    rec.log.push_back(s2.log_line("u2"));

    std::vector<Vec2> image;
    std::vector<double> g1;
    for (int v : m.boundary_loop) {
        image.emplace_back(phi1(m.vertices[v]), phi2(m.vertices[v]));
        g1.push_back(image.back().x());
    }
    const auto emb = check_convex_embedding(image);
    const auto uni = unimodality_check(g1);
    const double interior = std::max(max_of(interior_residuals(sigma, u1)), max_of(interior_residuals(sigma, u2)));
    const auto U = make_sigma_harmonic_map(std::move(u1), std::move(u2), sigma);
    const auto inj = injectivity_check(U);

    rec.metric("min_det_DU", min_of(U.det_DU));
    rec.metric("boundary_convex_embedding", emb.ok() ? 1.0 : 0.0);
    rec.metric("phi1_unimodal", uni.is_unimodal ? 1.0 : 0.0);
    rec.metric("locally_injective", inj.locally_injective ? 1.0 : 0.0);
    rec.metric("globally_injective", inj.globally_injective ? 1.0 : 0.0);

    rec.at_most("solve_residual_u1", s1.relative_residual, c.solver.tolerance);
    rec.at_most("solve_residual_u2", s2.relative_residual, c.solver.tolerance);
    rec.at_most("interior_equation_residual", interior, 1e-8);
    // the Rado-Kneser-Choquet conclusion is asserted only under its hypothesis
    if (emb.ok()) rec.above("det_DU_positive", min_of(U.det_DU), 0.0);
    write_map_fields(dir, rec, U);
}

inline void run_primary_pair(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir,
                             const ElementMatrixField& sigma) {
    const auto P = primary_pair(sigma, c.solver);
    rec.log.push_back(P.stats_1.log_line("u1"));
    rec.log.push_back(P.stats_2.log_line("u2"));
    const auto eq = equival_residual(P.U);
    const auto pairs = beltrami_pairs(sigma);
    const auto r1 = beltrami_residual(wirtinger_exact(sigma, P.U.u1), pairs);
    const auto r2 = beltrami_residual(wirtinger_exact(sigma, P.U.u2), pairs);
    const auto injU = injectivity_check(P.U);
    const auto injPhi = injectivity_check(P.Phi);

    rec.metric("min_det_DU", min_of(P.U.det_DU));
    rec.metric("max_det_DU", max_of(P.U.det_DU));
    rec.metric("stream_residual_1", P.stream_residual_1);
    rec.metric("stream_residual_2", P.stream_residual_2);
    rec.metric("Phi_globally_injective", injPhi.globally_injective ? 1.0 : 0.0);

    rec.at_most("solve_residual_u1", P.stats_1.relative_residual, c.solver.tolerance);
    rec.at_most("solve_residual_u2", P.stats_2.relative_residual, c.solver.tolerance);
    rec.above("det_DU_positive", min_of(P.U.det_DU), 0.0);
    rec.holds("U_globally_injective", injU.globally_injective);
    rec.at_most("equival_identity_residual", max_of(eq), 1e-12);
    rec.at_most("beltrami_residual_exact", std::max(max_of(r1), max_of(r2)), 1e-10);

    const TriMesh& m = *sigma.mesh;
    {
        const NamedColumn cols[] = {{"u1", P.U.u1.nodal_values},
                                    {"u1_stream", P.Phi.im.nodal_values},
                                    {"u2", P.U.u2.nodal_values},
                                    {"u2_stream", P.Psi.im.nodal_values}};
        auto os = open_out(dir, "vertices.csv", rec);
        write_vertex_csv(os, m, cols);
    }
    const NamedColumn cols[] = {{"det_DU", P.U.det_DU}, {"equival_residual", eq}};
    auto os = open_out(dir, "triangles.csv", rec);
    write_triangle_csv(os, m, cols);
}

inline void run_cell(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir,
                     const ElementMatrixField& sigma) {
    const TriMesh& m = *sigma.mesh;
    const auto C = cell_map(sigma, c.cell_A, c.solver);
    // U^A - A x is periodic (equal on identified vertices) with zero mean
    double periodic_gap = 0.0, mean1 = 0.0, mean2 = 0.0;
    std::vector<double> first1(m.free_vertex_count, kInfinity), first2(m.free_vertex_count, kInfinity);
    std::vector<double> w1(m.num_vertices()), w2(m.num_vertices());
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
        const Vec2 ax = c.cell_A * m.vertices[v];
        w1[v] = C.U.u1.nodal_values[v] - ax.x();
        w2[v] = C.U.u2.nodal_values[v] - ax.y();
        const int k = m.vertex_class[v];
        if (!std::isfinite(first1[k])) {
            first1[k] = w1[v];
            first2[k] = w2[v];
        }
        periodic_gap = std::max({periodic_gap, std::abs(w1[v] - first1[k]), std::abs(w2[v] - first2[k])});
    }
    mean1 = integrate(ScalarFieldP1{sigma.mesh, w1}) / m.total_area();
    mean2 = integrate(ScalarFieldP1{sigma.mesh, w2}) / m.total_area();
    const double scale = std::max(1.0, c.cell_A.cwiseAbs().maxCoeff());

    rec.metric("det_A", c.cell_A.determinant());
    rec.metric("min_det_DU", min_of(C.U.det_DU));
    rec.metric("max_det_DU", max_of(C.U.det_DU));
    rec.at_most("linearity_gap", C.linearity_gap, 1e-8 * scale);
    rec.at_most("periodic_part_gap", periodic_gap, 1e-9 * scale);
    rec.at_most("periodic_part_mean", std::max(std::abs(mean1), std::abs(mean2)), 1e-9 * scale);
    if (C.homeomorphism_checked) {
        const double sign = c.cell_A.determinant() > 0.0 ? 1.0 : -1.0;
        double signed_min = kInfinity;
        for (double d : C.U.det_DU) signed_min = std::min(signed_min, sign * d);
        rec.above("det_DU_sign_matches_det_A", signed_min, 0.0);
        rec.holds("cell_map_locally_injective", C.injectivity.locally_injective);
    }
    write_map_fields(dir, rec, C.U);
}

inline void run_homogenize(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir,
                           const ElementMatrixField& sigma) {
    const auto E = effective_conductivity(sigma, c.solver);
    const auto bounds = mean_bounds(sigma);
    const Mat2 sym = 0.5 * (E.matrix + E.matrix.transpose());
    const double scale = std::max(1.0, E.matrix.cwiseAbs().maxCoeff());

    put_matrix(rec, "sigma_eff_", E.matrix);
    rec.metric("q_e1", E.quadratic_form_values[0]);
    rec.metric("q_e2", E.quadratic_form_values[1]);
    rec.metric("q_e1e2", E.quadratic_form_values[2]);

    rec.at_most("solve_residual_e1", E.solve_residuals[0], c.solver.tolerance);
    rec.at_most("solve_residual_e2", E.solve_residuals[1], c.solver.tolerance);
    rec.above("sigma_eff_symmetric_part_positive", sym_min_eigenvalue(E.matrix), 0.0);
    rec.at_most("quadratic_form_matches_symmetric_part", E.symmetry_gap(), 1e-8 * scale);
    // Reuss <= sym(sigma_eff) <= Voigt in the Loewner order
    rec.above("reuss_lower_bound", sym_min_eigenvalue(sym - bounds.harmonic), -1e-8 * scale);
    rec.above("voigt_upper_bound", sym_min_eigenvalue(bounds.arithmetic - sym), -1e-8 * scale);

    if (const auto oracle = oracle_sigma_eff(*c.coefficient)) {
        const double err = (E.matrix - *oracle).cwiseAbs().maxCoeff() / oracle->cwiseAbs().maxCoeff();
        rec.metric("sigma_eff_error", err);
        const bool constant = std::holds_alternative<coeff::Constant>(*c.coefficient) ||
                              std::holds_alternative<coeff::Hall>(*c.coefficient);
        if (constant) rec.at_most("constant_passthrough", (E.matrix - *oracle).cwiseAbs().maxCoeff(), 1e-10);
        if (c.oracle_tolerance) rec.at_most("sigma_eff_closed_form", err, *c.oracle_tolerance);
    }

    // image area of the stream map f^{e1} against the quadratic form q(e1)
    const auto f = cell_stream_map(sigma, Vec2(1.0, 0.0), c.solver);
    const auto area = image_area(f);
    const double gap = std::abs(area.area - E.quadratic_form_values[0]) / E.quadratic_form_values[0];
    rec.metric("image_area_e1", area.area);
    rec.metric("area_theorem_gap", gap);
    if (c.area_tolerance) rec.at_most("area_theorem", gap, *c.area_tolerance);

    auto os = open_out(dir, "effective_tensor.csv", rec);
    os << effective_tensor_csv_header() << '\n';
    write_effective_tensor_row(os, E);
}

inline void run_diagnose(const ExperimentConfig& c, RunRecord& rec, const std::filesystem::path& dir,
                         const ElementMatrixField& sigma) {
    const TriMesh& m = *sigma.mesh;
    const auto P = primary_pair(sigma, c.solver);
    rec.log.push_back(P.stats_1.log_line("u1"));
    rec.log.push_back(P.stats_2.log_line("u2"));
    const double min_det = min_of(P.U.det_DU);
    rec.metric("min_det_DU", min_det);
    rec.above("det_DU_positive", min_det, 0.0);
    if (!(min_det > 0.0)) return;  // weights below need a positive Jacobian

    const auto squares = dyadic_squares(m, c.diagnose.max_level);
    const WeightField w{P.U.det_DU, element_areas(m)};
    const double bmo = bmo_norm(w, squares);
    const double rh = reverse_holder_constant(w, squares, c.diagnose.exponent);
    auto sampler = c.diagnose.sampler;
    const auto fit = ainfty_probe(w, squares, sampler);
    rec.metric("bmo_log_det_DU", bmo);
    rec.metric("reverse_holder_det_DU", rh);
    rec.metric("ainfty_C", fit.C);
    rec.metric("ainfty_delta", fit.delta);
    rec.metric("ainfty_M", fit.M);
    rec.metric("ainfty_eta", fit.eta);
    rec.metric("ainfty_samples", static_cast<double>(fit.samples));
    rec.holds("ainfty_envelopes_bracket_samples", fit.brackets_all);
    rec.above("ainfty_delta_positive", fit.delta, 0.0);

    // exact-convention tau: tau_11 = 1, tau_21 = 0 identically
    const auto tau_exact = pushforward_tau_exact(sigma, P.U.u1);
    double t11 = 0.0, t21 = 0.0;
    for (const auto& t : tau_exact) {
        t11 = std::max(t11, std::abs(t(0, 0) - 1.0));
        t21 = std::max(t21, std::abs(t(1, 0)));
    }
    rec.at_most("tau_exact_11_is_one", t11, 1e-10);
    rec.at_most("tau_exact_21_is_zero", t21, 1e-10);

    const auto inj = injectivity_check(P.Phi);
    rec.metric("Phi_globally_injective", inj.globally_injective ? 1.0 : 0.0);
    if (inj.globally_injective) {
        const auto tau = pushforward_tau(sigma, P.Phi);
        rec.metric("tau_l1_residual_11", tau.l1_residual_11);
        rec.metric("tau_l1_residual_21", tau.l1_residual_21);
        const auto V = factorized_jacobian(P.U, P.Phi);
        Vec2 lo = V.boundary.front(), hi = V.boundary.front();
        for (const auto& p : V.boundary) lo = lo.cwiseMin(p), hi = hi.cwiseMax(p);
        const double side = (hi - lo).maxCoeff();
        const auto poly = V.boundary;
        const auto img_squares = dyadic_squares(V.barycenters, V.areas, lo, side, c.diagnose.max_level,
                                                [poly](const Vec2& q, double s) { return box_inside_polygon(poly, q, s); });
        try {
            const double rhv = reverse_holder_constant(WeightField{V.values, V.areas}, img_squares, 2.0);
            rec.metric("reverse_holder_det_DV", rhv);
        } catch (const DomainError&) {
            rec.metric("reverse_holder_det_DV", std::numeric_limits<double>::quiet_NaN());
        }
    }

    const auto k = field_constants(sigma);
    const auto rep = astala_exponent(k.alpha, k.beta);
    rec.metric("K_stream", rep.K_beltrami);
    rec.metric("p_sup", rep.p_sup);
    const GradientSample g{sigma.mesh, element_gradient(P.U.u1)};
    for (const auto& row : higher_integrability_probe(std::span<const GradientSample>(&g, 1), c.diagnose.p_list, rep)) {
        std::ostringstream name;
        name << "grad_u1_L" << row.p;
        rec.metric(name.str(), row.norm);
    }

    {
        auto os = open_out(dir, "square_stats.csv", rec);
        write_square_stats_csv(os, square_stats(w, squares));
    }
    {
        auto os = open_out(dir, "ainfty_samples.csv", rec);
        os.precision(17);
        os << "square,area_fraction,weight_fraction\n";
        for (const auto& s : fit.data) os << s.square << ',' << s.area_fraction << ',' << s.weight_fraction << '\n';
    }
    std::vector<double> log_det(P.U.det_DU.size());
    for (std::size_t t = 0; t < log_det.size(); ++t) log_det[t] = std::log(P.U.det_DU[t]);
    const NamedColumn cols[] = {{"det_DU", P.U.det_DU}, {"log_det_DU", log_det}};
    auto os = open_out(dir, "triangles.csv", rec);
    write_triangle_csv(os, m, cols);
}

inline void write_summary(const ExperimentConfig& c, const RunRecord& rec, const std::filesystem::path& dir) {
    Json s;
    s["task"] = rec.task;
    s["family"] = rec.family;
    s["resolution"] = rec.resolution;
    s["all_passed"] = rec.all_passed();
    if (!rec.error.empty()) s["error"] = rec.error;
    Json inv = Json::array();
    for (const auto& i : rec.invariants)
        inv.push_back({{"name", i.name},
                       {"value", finite_or_string(i.value)},
                       {"relation", i.relation},
                       {"threshold", finite_or_string(i.threshold)},
                       {"passed", i.passed}});
    s["invariants"] = inv;
    Json met = Json::object();
    for (const auto& [k, v] : rec.metrics) met[k] = finite_or_string(v);
    s["metrics"] = met;
    s["files"] = rec.files;
    s["config"] = c.source;
    {
        std::ofstream os(dir / "summary.json");
        os << s.dump(2) << '\n';
    }
    {
        std::ofstream os(dir / "summary.csv");
        os.precision(17);
        os << "kind,name,value,relation,threshold,passed\n";
        for (const auto& i : rec.invariants)
            os << "invariant," << i.name << ',' << i.value << ',' << i.relation << ',' << i.threshold << ','
               << (i.passed ? 1 : 0) << '\n';
        for (const auto& [k, v] : rec.metrics) os << "metric," << k << ',' << v << ",,,\n";
    }
    std::ofstream os(dir / "run.log");
    for (const auto& l : rec.log) os << l << '\n';
    if (!rec.error.empty()) os << Json{{"event", "error"}, {"message", rec.error}}.dump() << '\n';
}

} // namespace detail

/// Runs one config into `out_dir` (or the config's output). Solver and
/// domain failures are recorded in the run record, not thrown; config
/// errors are thrown before anything is written.
inline RunRecord run(const ExperimentConfig& c, std::optional<std::filesystem::path> out_dir = std::nullopt) {
    const std::filesystem::path dir = out_dir.value_or(std::filesystem::path(c.output));
    std::filesystem::create_directories(dir);
    RunRecord rec;
    rec.task = task_name(c.task);
    rec.family = c.coefficient ? family_name(*c.coefficient) : "none";
    rec.resolution = c.task == Task::convert ? 0 : c.resolution;
    try {
        if (c.task == Task::convert) {
            detail::run_convert(c, rec, dir);
        } else {
            const auto mesh = build_mesh(c.domain, c.resolution);
            const auto sigma = make_coefficient_field(mesh, *c.coefficient);
            switch (c.task) {
                case Task::solve: detail::run_solve(c, rec, dir, sigma); break;
                case Task::primary_pair: detail::run_primary_pair(c, rec, dir, sigma); break;
                case Task::cell: detail::run_cell(c, rec, dir, sigma); break;
                case Task::homogenize: detail::run_homogenize(c, rec, dir, sigma); break;
                case Task::diagnose: detail::run_diagnose(c, rec, dir, sigma); break;
                default: break;
            }
        }
    } catch (const SolverError& e) {
        std::ostringstream os;
        os.precision(6);
        os << e.what() << " (residual " << e.residual() << ", iterations " << e.iterations() << ")";
        rec.error = os.str();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        rec.error = e.what();
    }
    detail::write_summary(c, rec, dir);
    return rec;
}

// ---------------------------------------------------------------------------
// Sweeps

inline const char* sweep_csv_header() {
    return "index,task,family,resolution,status,all_passed,min_det_DU,sigma_eff_11,sigma_eff_12,sigma_eff_21,"
           "sigma_eff_22,sigma_eff_error,bmo_log_det_DU,ainfty_C,ainfty_delta,error";
}

/// A sweep document is {"base": {...}, "runs": [{...}, ...]}; each run is
/// the base with the run's fields merged in (RFC 7386 merge patch).
inline std::vector<Json> expand_sweep(const Json& doc) {
    if (!doc.is_object()) throw ConfigError("sweep: expected an object");
    if (!doc.contains("runs")) throw ConfigError("runs: required field is missing");
    const Json& runs = doc.at("runs");
    if (!runs.is_array()) throw ConfigError("runs: expected a list");
    const Json base = doc.contains("base") ? doc.at("base") : Json::object();
    std::vector<Json> out;
    for (const auto& r : runs) {
        Json j = base;
        j.merge_patch(r);
        out.push_back(std::move(j));
    }
    return out;
}

struct SweepRow {
    std::size_t index = 0;
    RunRecord record;
    std::string status;  // ok | failed | error
};

/// Each config runs into out_dir/run_NNN. Invalid configs and failed runs
/// are recorded per row and the sweep continues.
inline std::vector<SweepRow> sweep(const std::vector<Json>& configs, const std::filesystem::path& out_dir,
                                   const Overrides& overrides = {}) {
    std::filesystem::create_directories(out_dir);
    std::vector<SweepRow> rows;
    std::optional<std::string> task;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        SweepRow row;
        row.index = i;
        char name[32];
        std::snprintf(name, sizeof name, "run_%03zu", i);
        try {
            const auto cfg = parse_config(apply_overrides(configs[i], overrides));
            if (task && *task != task_name(cfg.task))
                throw ConfigError("task: sweep configs must share one task (" + *task + ")");
            task = task_name(cfg.task);
            row.record = run(cfg, out_dir / name);
            row.status = !row.record.error.empty() ? "error" : (row.record.all_passed() ? "ok" : "failed");
        } catch (const Error& e) {
            row.record.error = e.what();
            row.record.task = configs[i].value("task", "");
            row.status = "error";
        }
        rows.push_back(std::move(row));
    }
    std::ofstream os(out_dir / "sweep.csv");
    os.precision(17);
    os << sweep_csv_header() << '\n';
    for (const auto& r : rows) {
        const auto& rec = r.record;
        auto put = [&](const char* key) {
            os << ',';
            if (const auto v = rec.find_metric(key)) os << *v;
        };
        os << r.index << ',' << rec.task << ',' << rec.family << ',' << rec.resolution << ',' << r.status << ','
           << (rec.all_passed() ? 1 : 0);
        for (const char* key : {"min_det_DU", "sigma_eff_11", "sigma_eff_12", "sigma_eff_21", "sigma_eff_22",
                                "sigma_eff_error", "bmo_log_det_DU", "ainfty_C", "ainfty_delta"})
            put(key);
        std::string err = rec.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << ',' << err << '\n';
    }
    return rows;
}

} // namespace beltrami
