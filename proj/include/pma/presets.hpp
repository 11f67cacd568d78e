#pragma once

// Text-level problem definitions and the shipped presets. A ProblemDef is
// what a config file describes; build_problem turns it into a ProblemSpec on
// a concrete grid.

#include "pma/error.hpp"
#include "pma/expr.hpp"
#include "pma/geometry.hpp"
#include "pma/oracles.hpp"
#include "pma/problem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace pma {

enum class MetricKind { identity, conformal, entries };

struct MetricDef {
    MetricKind kind = MetricKind::identity;
    std::string sigma;                // conformal factor: g = exp(2 sigma) I
    std::vector<std::string> entries; // n*n, row-major, functions of x
};

struct ManufacturedDef {
    std::string u_star;
    double beta = 0.0;
    oracles::RhsSource rhs = oracles::RhsSource::continuum;
};

struct ProblemDef {
    std::string name;
    int n = 2;
    int p = 2;
    std::vector<int> shape;         // empty: default_points(n) per axis
    MetricDef metric;
    std::vector<std::string> A;     // n*n entries or empty
    std::string f;
    std::string phi;
    std::string subsolution;        // empty: same as phi
    std::optional<ManufacturedDef> manufactured;
    double subsolution_tol = 1e-8;
};

/// 33 points per axis for n <= 3, 17 for n = 4, 9 beyond.
inline int default_points(int n) { return n <= 3 ? 33 : (n == 4 ? 17 : 9); }

inline std::vector<int> resolved_shape(const ProblemDef& def) {
    if (!def.shape.empty()) return def.shape;
    return std::vector<int>(static_cast<std::size_t>(def.n), default_points(def.n));
}

namespace detail {

inline double eval_x(const expr::Expr& e, std::span<const double> x, int n) {
    std::vector<double> env(x.begin(), x.begin() + n);
    env.resize(static_cast<std::size_t>(2 * n + 1), 0.0);
    return expr::eval(e, env);
}

inline expr::Expr parse_x_only(const std::string& text, int n, const char* what) {
    auto e = expr::parse(text, n);
    if (e.uses_z() || e.uses_p())
        throw Error(ErrorCode::invalid_argument, std::string(what) + " may depend on x only: " + text);
    return e;
}

} // namespace detail

inline MetricField::MetricFn metric_function(const MetricDef& m, int n) {
    switch (m.kind) {
    case MetricKind::identity:
        return {};
    case MetricKind::conformal: {
        const auto s = detail::parse_x_only(m.sigma, n, "conformal factor");
        return [s, n](std::span<const double> x) -> Eigen::MatrixXd {
            return std::exp(2.0 * detail::eval_x(s, x, n)) * Eigen::MatrixXd::Identity(n, n);
        };
    }
    case MetricKind::entries: {
        if (static_cast<int>(m.entries.size()) != n * n)
            throw Error(ErrorCode::dimension_mismatch, "metric needs n*n entries");
        std::vector<expr::Expr> es;
        for (const auto& t : m.entries) es.push_back(detail::parse_x_only(t, n, "metric entry"));
        return [es, n](std::span<const double> x) -> Eigen::MatrixXd {
            Eigen::MatrixXd g(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) g(i, j) = detail::eval_x(es[static_cast<std::size_t>(i * n + j)], x, n);
            return g;
        };
    }
    }
    return {};
}

struct BuiltProblem {
    ProblemSpec spec;
    std::optional<std::vector<double>> u_star; // manufactured problems only
    double beta = 0.0;
};

/// Builds the spec on the def's grid. Manufactured defs derive f, phi and
/// the subsolution from u*.
inline BuiltProblem build_problem(const ProblemDef& def) {
    if (def.n < 2) throw Error(ErrorCode::invalid_argument, "n must be at least 2");
    const ConeParams cp(def.n, def.p);
    ProblemSpec spec(cp, Grid(def.n, resolved_shape(def)));
    spec.name = def.name;
    spec.subsolution_tol = def.subsolution_tol;
    if (auto fn = metric_function(def.metric, def.n)) spec.set_metric(std::move(fn));
    if (!def.A.empty()) spec.A = TensorCoefficient::from_exprs(def.A, def.n);

    if (def.manufactured) {
        const auto us = detail::parse_x_only(def.manufactured->u_star, def.n, "u_star");
        const int n = def.n;
        oracles::PointFn ufn = [us, n](std::span<const double> x) { return detail::eval_x(us, x, n); };
        oracles::ManufacturedOptions opt;
        opt.beta = def.manufactured->beta;
        opt.rhs = def.manufactured->rhs;
        auto mp = oracles::manufactured_problem(ufn, spec, opt);
        mp.spec.phi = Coefficient::from_expr(us);
        return BuiltProblem{std::move(mp.spec), std::move(mp.u_star), mp.beta};
    }

    if (def.f.empty()) throw Error(ErrorCode::config_error, "problem.f is required");
    if (def.phi.empty()) throw Error(ErrorCode::config_error, "problem.phi is required");
    spec.f = Coefficient::from_expr(def.f, def.n);
    spec.phi = Coefficient::from_expr(detail::parse_x_only(def.phi, def.n, "phi"));
    const auto sub = Coefficient::from_expr(
        detail::parse_x_only(def.subsolution.empty() ? def.phi : def.subsolution, def.n, "subsolution"));
    spec.subsolution = sample_expression(spec.grid, sub);
    return BuiltProblem{std::move(spec), std::nullopt, 0.0};
}

// Presets.

inline ProblemDef preset_poisson2d() {
    ProblemDef d;
    d.name = "poisson2d";
    d.n = 2;
    d.p = 2;
    d.f = "2 + x1*x2";
    d.phi = "x1^2 + x2^2";
    return d;
}

inline ProblemDef preset_ma2d() {
    ProblemDef d;
    d.name = "ma2d";
    d.n = 2;
    d.p = 1;
    d.f = "exp(0.2*z)*(1 + 0.5*x1*x2) + 0.05*(p1^2 + p2^2)";
    d.phi = "x1^2 + x2^2";
    return d;
}

inline ProblemDef preset_pma_half() {
    ProblemDef d;
    d.name = "pma_half";
    d.n = 4;
    d.p = 2;
    d.metric.kind = MetricKind::conformal;
    d.metric.sigma = "0.1*x1";
    d.f = "(1 + 0.5*x2)*exp(0.1*z) + 0.02*(p1^2 + p2^2 + p3^2 + p4^2)";
    d.phi = "0.5*(x1^2 + x2^2 + x3^2 + x4^2)";
    return d;
}

inline ProblemDef preset_poisson2d_mms() {
    ProblemDef d = preset_poisson2d();
    d.name = "poisson2d_mms";
    d.f.clear();
    d.phi.clear();
    d.manufactured = ManufacturedDef{"x1^2 + x2^2 + 0.1*sin(pi*x1)*sin(pi*x2)", 0.5, oracles::RhsSource::continuum};
    return d;
}

inline ProblemDef preset_ma2d_mms() {
    ProblemDef d = preset_ma2d();
    d.name = "ma2d_mms";
    d.f.clear();
    d.phi.clear();
    d.manufactured =
        ManufacturedDef{"0.5*(x1^2 + x2^2) + 0.1*sin(pi*x1)*sin(pi*x2)", 0.5, oracles::RhsSource::continuum};
    return d;
}

inline ProblemDef preset_pma_half_mms() {
    ProblemDef d = preset_pma_half();
    d.name = "pma_half_mms";
    d.f.clear();
    d.phi.clear();
    d.manufactured = ManufacturedDef{
        "0.5*(x1^2 + x2^2 + x3^2 + x4^2) + 0.05*sin(pi*x1)*sin(pi*x2)*sin(pi*x3)*sin(pi*x4)", 0.5,
        oracles::RhsSource::continuum};
    return d;
}

inline std::vector<std::string> preset_names() {
    return {"poisson2d", "ma2d", "pma_half", "poisson2d_mms", "ma2d_mms", "pma_half_mms"};
}

inline ProblemDef preset(const std::string& name) {
    if (name == "poisson2d") return preset_poisson2d();
    if (name == "ma2d") return preset_ma2d();
    if (name == "pma_half") return preset_pma_half();
    if (name == "poisson2d_mms") return preset_poisson2d_mms();
    if (name == "ma2d_mms") return preset_ma2d_mms();
    if (name == "pma_half_mms") return preset_pma_half_mms();
    throw Error(ErrorCode::config_error, "unknown preset '" + name + "'");
}

} // namespace pma
