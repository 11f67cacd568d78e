#pragma once

// Problem description for F(lambda(nabla^2 u + A[u])) = f~(x, u, grad u) on
// the unit box with Dirichlet data, the normalization f~ = f^(1/C(n,p)) and
// checks on the subsolution and on f.

#include "pma/error.hpp"
#include "pma/expr.hpp"
#include "pma/geometry.hpp"
#include "pma/spectral_operator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pma {

/// Multilinear interpolant of node values on a grid; a function of x only.
class GriddedFunction {
public:
    GriddedFunction(Grid grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (values_.size() != grid_.size()) throw Error(ErrorCode::dimension_mismatch, "gridded values size mismatch");
    }

    const Grid& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }

    double operator()(std::span<const double> x) const {
        const int n = grid_.dim();
        std::vector<int> base(static_cast<std::size_t>(n));
        std::vector<double> frac(static_cast<std::size_t>(n));
        for (int a = 0; a < n; ++a) {
            const int last = grid_.shape()[a] - 1;
            const double t = std::clamp(x[a], 0.0, 1.0) / grid_.spacing(a);
            int i = static_cast<int>(std::floor(t + 1e-9));
            double w = t - i;
            if (std::abs(w) < 1e-9) w = 0.0;
            if (i >= last) {
                i = last;
                w = 0.0;
            }
            base[a] = i;
            frac[a] = w;
        }
        double acc = 0.0;
        for (unsigned corner = 0; corner < (1u << n); ++corner) {
            double weight = 1.0;
            std::size_t idx = 0;
            for (int a = 0; a < n; ++a) {
                const bool up = (corner >> a) & 1u;
                const double w = up ? frac[a] : 1.0 - frac[a];
                if (w == 0.0) {
                    weight = 0.0;
                    break;
                }
                weight *= w;
                idx += static_cast<std::size_t>(base[a] + (up ? 1 : 0)) * grid_.stride(a);
            }
            if (weight != 0.0) acc += weight * values_[idx];
        }
        return acc;
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

/// Scalar coefficient of the environment [x1..xn, z, p1..pn].
struct Coefficient {
    std::function<double(std::span<const double>)> fn;
    std::function<double(int, std::span<const double>)> partial_fn;
    bool uses_z = false;
    bool uses_p = false;
    std::string description;

    double operator()(std::span<const double> env) const { return fn(env); }

    /// d/d env[var]; central difference with step 1e-6 (1 + |env[var]|)
    /// unless the source supplies its own.
    double partial(int var, std::span<const double> env) const {
        if (partial_fn) return partial_fn(var, env);
        std::vector<double> probe(env.begin(), env.end());
        const double x0 = probe[static_cast<std::size_t>(var)];
        const double h = 1e-6 * (1.0 + std::abs(x0));
        probe[static_cast<std::size_t>(var)] = x0 + h;
        const double fp = fn(probe);
        probe[static_cast<std::size_t>(var)] = x0 - h;
        return (fp - fn(probe)) / (2.0 * h);
    }

    static Coefficient constant(double c) {
        Coefficient k;
        k.fn = [c](std::span<const double>) { return c; };
        k.partial_fn = [](int, std::span<const double>) { return 0.0; };
        k.description = std::to_string(c);
        return k;
    }

    static Coefficient from_expr(const expr::Expr& e) {
        Coefficient k;
        k.fn = [e](std::span<const double> env) { return expr::eval(e, env); };
        k.partial_fn = [e](int var, std::span<const double> env) { return expr::partial(e, var, env); };
        k.uses_z = e.uses_z();
        k.uses_p = e.uses_p();
        k.description = e.source();
        return k;
    }

    static Coefficient from_expr(const std::string& text, int n) { return from_expr(expr::parse(text, n)); }

    static Coefficient from_gridded(std::shared_ptr<const GriddedFunction> g) {
        Coefficient k;
        k.fn = [g](std::span<const double> env) { return (*g)(env.first(static_cast<std::size_t>(g->grid().dim()))); };
        k.description = "gridded";
        return k;
    }
};

/// Symmetric n x n tensor of coefficients; absent entries are zero.
struct TensorCoefficient {
    int n = 0;
    std::vector<Coefficient> entries; // row-major, empty when identically zero

    bool zero() const { return entries.empty(); }
    bool uses_z() const {
        return std::any_of(entries.begin(), entries.end(), [](const Coefficient& c) { return c.uses_z; });
    }
    bool uses_p() const {
        return std::any_of(entries.begin(), entries.end(), [](const Coefficient& c) { return c.uses_p; });
    }
    /// Independent of (z, p): the special case chi(x).
    bool chi_only() const { return !uses_z() && !uses_p(); }

    void evaluate(std::span<const double> env, Eigen::MatrixXd& out) const {
        out.setZero(n, n);
        if (zero()) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = entries[static_cast<std::size_t>(i * n + j)](env);
        out = (0.5 * (out + out.transpose())).eval();
    }

    /// Symmetrized d/d env[var] of every entry.
    void partial(int var, std::span<const double> env, Eigen::MatrixXd& out) const {
        out.setZero(n, n);
        if (zero()) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = entries[static_cast<std::size_t>(i * n + j)].partial(var, env);
        out = (0.5 * (out + out.transpose())).eval();
    }

    static TensorCoefficient from_exprs(const std::vector<std::string>& texts, int n) {
        if (static_cast<int>(texts.size()) != n * n)
            throw Error(ErrorCode::dimension_mismatch, "tensor needs n*n entries");
        TensorCoefficient t;
        t.n = n;
        for (const auto& s : texts) t.entries.push_back(Coefficient::from_expr(s, n));
        return t;
    }
};

/// Full problem instance on a grid.
struct ProblemSpec {
    ProblemSpec(ConeParams cp, Grid g) : cone(std::move(cp)), grid(std::move(g)), metric(MetricField::identity(grid)) {
        if (cone.n() != grid.dim()) throw Error(ErrorCode::dimension_mismatch, "cone and grid dimensions differ");
        A.n = grid.dim();
    }

    std::string name;
    ConeParams cone;
    Grid grid;
    MetricField metric;
    MetricField::MetricFn metric_fn; // empty for the identity metric
    TensorCoefficient A;
    Coefficient f;
    Coefficient phi;                 // function of x
    std::vector<double> subsolution; // grid field, equal to phi on the boundary
    double subsolution_tol = 1e-8;

    int n() const { return grid.dim(); }

    void set_metric(MetricField::MetricFn fn) {
        metric = MetricField::from_function(grid, fn);
        metric_fn = std::move(fn);
    }

    Eigen::MatrixXd metric_at(std::span<const double> x) const {
        if (metric_fn) return metric_fn(x);
        return Eigen::MatrixXd::Identity(n(), n());
    }

    /// Environment [x, z, p] at a grid point.
    std::vector<double> env(std::size_t idx, double z, const Eigen::VectorXd& grad) const {
        const int d = n();
        std::vector<double> e(static_cast<std::size_t>(2 * d + 1));
        for (int a = 0; a < d; ++a) e[a] = grid.coord(idx, a);
        e[d] = z;
        for (int a = 0; a < d; ++a) e[d + 1 + a] = grad[a];
        return e;
    }

    /// phi sampled on every grid point (only boundary values are used).
    std::vector<double> boundary_field() const {
        const int d = n();
        return grid.sample([&](const std::vector<double>& x) {
            std::vector<double> e(x);
            e.resize(static_cast<std::size_t>(2 * d + 1), 0.0);
            return phi(e);
        });
    }

    AugmentFn augment() const {
        if (A.zero()) return {};
        return [this](std::size_t idx, double z, const Eigen::VectorXd& grad, Eigen::MatrixXd& out) {
            A.evaluate(env(idx, z, grad), out);
        };
    }
};

/// Samples an x-only expression on the grid (z and p bound to 0).
inline std::vector<double> sample_expression(const Grid& grid, const Coefficient& c) {
    const int d = grid.dim();
    return grid.sample([&](const std::vector<double>& x) {
        std::vector<double> e(x);
        e.resize(static_cast<std::size_t>(2 * d + 1), 0.0);
        return c(e);
    });
}

struct FTilde {
    double value = 0.0;
    double dz = 0.0;
    Eigen::VectorXd dp;
};

/// f~ = f^(1/C(n,p)) and its z and p partials by the chain rule.
inline FTilde ftilde(const ProblemSpec& spec, std::span<const double> env) {
    const int n = spec.n();
    const double c = static_cast<double>(spec.cone.tuple_count());
    const double f = spec.f(env);
    if (!(f > 0.0)) throw Error(ErrorCode::nonpositive_f, "f = " + std::to_string(f) + " is not positive");
    FTilde out;
    out.value = std::pow(f, 1.0 / c);
    out.dp = Eigen::VectorXd::Zero(n);
    const double scale = out.value / (c * f);
    if (spec.f.uses_z) out.dz = scale * spec.f.partial(expr::z_var(n), env);
    if (spec.f.uses_p)
        for (int l = 0; l < n; ++l) out.dp[l] = scale * spec.f.partial(expr::p_var(n, l), env);
    return out;
}

struct PointIssue {
    std::size_t index = 0;
    std::string kind; // "cone", "equation", "boundary"
    double margin = 0.0;
};

struct SubsolutionReport {
    bool passed = true;
    double min_cone_margin = std::numeric_limits<double>::infinity();
    double min_equation_margin = std::numeric_limits<double>::infinity(); // F(U) - f~
    double max_boundary_mismatch = 0.0;
    std::vector<PointIssue> failures;
};

/// Checks that the subsolution is admissible, satisfies F(U) >= f~ - tol at
/// every interior point and matches phi on the boundary within tol.
inline SubsolutionReport validate_subsolution(const ProblemSpec& spec) {
    SubsolutionReport rep;
    const auto& g = spec.grid;
    const auto& u = spec.subsolution;
    if (u.size() != g.size()) throw Error(ErrorCode::dimension_mismatch, "subsolution field size mismatch");
    const double tol = spec.subsolution_tol;
    const auto phi = spec.boundary_field();
    for (std::size_t idx = 0; idx < g.size(); ++idx)
        if (g.is_boundary(idx)) {
            const double d = std::abs(u[idx] - phi[idx]);
            rep.max_boundary_mismatch = std::max(rep.max_boundary_mismatch, d);
            if (d > tol) rep.failures.push_back({idx, "boundary", -d});
        }

    const auto field = covariant_hessian(g, u, spec.metric, spec.cone, spec.augment());
    for (std::size_t k = 0; k < field.points.size(); ++k) {
        const std::size_t idx = field.points[k];
        const double m = field.margin[k];
        rep.min_cone_margin = std::min(rep.min_cone_margin, m);
        if (!(m > 0.0)) {
            rep.failures.push_back({idx, "cone", m});
            continue;
        }
        Eigen::VectorXd grad(spec.n());
        for (int a = 0; a < spec.n(); ++a) grad[a] = grid_d1(g, u, idx, a);
        const double F = eval_F(field.spectrum[k], spec.cone).F_value;
        double target;
        try {
            target = ftilde(spec, spec.env(idx, u[idx], grad)).value;
        } catch (const Error& e) {
            rep.failures.push_back({idx, "equation", -std::numeric_limits<double>::infinity()});
            rep.min_equation_margin = -std::numeric_limits<double>::infinity();
            continue;
        }
        const double em = F - target;
        rep.min_equation_margin = std::min(rep.min_equation_margin, em);
        if (em < -tol) rep.failures.push_back({idx, "equation", em});
    }
    rep.passed = rep.failures.empty();
    return rep;
}

/// Random environments: x at grid points, z in [z_lo, z_hi], p in [-p_max, p_max]^n.
inline std::vector<std::vector<double>> sample_environments(const ProblemSpec& spec, std::size_t count,
                                                            std::uint64_t seed, double z_lo, double z_hi,
                                                            double p_max) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, spec.grid.size() - 1);
    std::uniform_real_distribution<double> zd(z_lo, z_hi);
    std::uniform_real_distribution<double> pd(-p_max, p_max);
    std::vector<std::vector<double>> out;
    out.reserve(count);
    const int n = spec.n();
    for (std::size_t s = 0; s < count; ++s) {
        Eigen::VectorXd p(n);
        const std::size_t idx = pick(rng);
        const double z = zd(rng);
        for (int l = 0; l < n; ++l) p[l] = pd(rng);
        out.push_back(spec.env(idx, z, p));
    }
    return out;
}

struct FzReport {
    double min_fz = std::numeric_limits<double>::infinity();
    double max_neg_fz_over_f = -std::numeric_limits<double>::infinity();
    bool uniqueness_guaranteed = true; // f_z >= 0 on every sample
    std::size_t samples = 0;
};

/// Sampled f_z and -f_z/f; uniqueness holds when f_z >= 0.
inline FzReport fz_positivity_diagnostic(const ProblemSpec& spec, const std::vector<std::vector<double>>& samples) {
    FzReport rep;
    const int zi = expr::z_var(spec.n());
    for (const auto& env : samples) {
        const double f = spec.f(env);
        const double fz = spec.f.uses_z ? spec.f.partial(zi, env) : 0.0;
        rep.min_fz = std::min(rep.min_fz, fz);
        if (f > 0.0) rep.max_neg_fz_over_f = std::max(rep.max_neg_fz_over_f, -fz / f);
        ++rep.samples;
    }
    rep.uniqueness_guaranteed = rep.samples > 0 && rep.min_fz >= 0.0;
    return rep;
}

/// Empirical exponent gamma0 in |f~_x| + |f~_z||p| + |f~_p||p|^2 ~ |p|^(2+gamma0),
/// estimated between |p| = r1 and r2 along the first axis at the given x, z.
/// Information only.
inline double growth_exponent(const ProblemSpec& spec, std::size_t idx, double z, double r1 = 10.0,
                              double r2 = 100.0) {
    const int n = spec.n();
    auto lhs = [&](double r) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
        p[0] = r;
        const auto env = spec.env(idx, z, p);
        const auto ft = ftilde(spec, env);
        double fx = 0.0;
        const double c = static_cast<double>(spec.cone.tuple_count());
        const double scale = ft.value / (c * spec.f(env));
        for (int a = 0; a < n; ++a) fx += std::abs(scale * spec.f.partial(a, env));
        return fx + std::abs(ft.dz) * r + ft.dp.norm() * r * r;
    };
    const double a = lhs(r1), b = lhs(r2);
    if (!(a > 0.0) || !(b > 0.0)) return -std::numeric_limits<double>::infinity();
    return std::log(b / a) / std::log(r2 / r1) - 2.0;
}

} // namespace pma
