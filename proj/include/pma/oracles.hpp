#pragma once

// Reference computations kept independent of the main evaluation paths:
// the direct product over enumerated subsets, central-difference gradients
// and manufactured problems built from a known solution.

#include "pma/error.hpp"
#include "pma/geometry.hpp"
#include "pma/problem.hpp"
#include "pma/spectral_operator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pma::oracles {

/// Product of all p-subset sums, multiplied directly.
inline double brute_force_M(std::span<const double> lambda, int p) {
    const int n = static_cast<int>(lambda.size());
    if (n > 12) throw Error(ErrorCode::invalid_argument, "brute force limited to n <= 12");
    double prod = 1.0;
    for_each_combination(n, p, [&](std::span<const int> t) {
        double s = 0.0;
        for (int i : t) s += lambda[i];
        prod *= s;
    });
    if (!std::isfinite(prod) || (prod == 0.0 && n > 0))
        throw Error(ErrorCode::overflow, "product of subset sums is not representable");
    return prod;
}

/// Central-difference gradient; default step 1e-6 (1 + |lambda_i|). A probe
/// that raises CONE_VIOLATION shrinks the step by 10, at most three times.
template <class Fn>
std::vector<double> fd_gradient(Fn&& fn, std::span<const double> lambda, double h = -1.0) {
    std::vector<double> probe(lambda.begin(), lambda.end());
    std::vector<double> out(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        double step = h > 0.0 ? h : 1e-6 * (1.0 + std::abs(lambda[i]));
        bool done = false;
        for (int attempt = 0; attempt < 4 && !done; ++attempt, step /= 10.0) {
            try {
                probe[i] = lambda[i] + step;
                const double fp = fn(std::span<const double>(probe));
                probe[i] = lambda[i] - step;
                const double fm = fn(std::span<const double>(probe));
                out[i] = (fp - fm) / (2.0 * step);
                done = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::cone_violation) throw;
            }
            probe[i] = lambda[i];
        }
        if (!done) throw Error(ErrorCode::cone_violation, "finite-difference probe left the cone");
    }
    return out;
}

using PointFn = std::function<double(std::span<const double>)>;

namespace detail {

// Fourth-order central differences with step 2e-3.
constexpr double fd_step = 2e-3;

inline double d1(const PointFn& f, std::vector<double> x, int a) {
    const double h = fd_step, x0 = x[a];
    auto at = [&](double s) {
        x[a] = x0 + s * h;
        return f(x);
    };
    return (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
}

inline double d2(const PointFn& f, std::vector<double> x, int a) {
    const double h = fd_step, x0 = x[a];
    auto at = [&](double s) {
        x[a] = x0 + s * h;
        return f(x);
    };
    return (-at(2) + 16.0 * at(1) - 30.0 * at(0) + 16.0 * at(-1) - at(-2)) / (12.0 * h * h);
}

inline double dmixed(const PointFn& f, const std::vector<double>& x, int a, int b) {
    PointFn fa = [&f, a](std::span<const double> y) { return d1(f, std::vector<double>(y.begin(), y.end()), a); };
    return d1(fa, x, b);
}

} // namespace detail

/// Continuum covariant Hessian, gradient and metric of u at x.
struct ContinuumDerivatives {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    Eigen::MatrixXd g;
};

inline ContinuumDerivatives continuum_derivatives(const PointFn& u, const ProblemSpec& spec,
                                                  const std::vector<double>& x) {
    const int n = spec.n();
    ContinuumDerivatives out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n), spec.metric_at(x)};
    for (int a = 0; a < n; ++a) out.grad[a] = detail::d1(u, x, a);
    for (int a = 0; a < n; ++a) {
        out.hess(a, a) = detail::d2(u, x, a);
        for (int b = a + 1; b < n; ++b) out.hess(a, b) = out.hess(b, a) = detail::dmixed(u, x, a, b);
    }
    if (spec.metric_fn) {
        // dg[c](i,j) = d_c g_ij
        std::vector<Eigen::MatrixXd> dg(static_cast<std::size_t>(n), Eigen::MatrixXd(n, n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                PointFn gij = [&spec, i, j](std::span<const double> y) { return spec.metric_fn(y)(i, j); };
                for (int c = 0; c < n; ++c) dg[c](i, j) = detail::d1(gij, x, c);
            }
        const Eigen::MatrixXd ginv = out.g.inverse();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) {
                    double gam = 0.0;
                    for (int l = 0; l < n; ++l) gam += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                    s += 0.5 * gam * out.grad[k];
                }
                out.hess(i, j) -= s;
            }
    }
    return out;
}

enum class RhsSource {
    continuum, // f from the exact Hessian of u*: the discrete solution converges to u* at O(h^2)
    discrete,  // f from the grid Hessian of u*: u* solves the discrete equation exactly
};

struct ManufacturedOptions {
    double beta = 0.0;
    RhsSource rhs = RhsSource::continuum;
};

struct ManufacturedProblem {
    ProblemSpec spec;
    std::vector<double> u_star; // exact solution on the grid
    double beta = 0.0;          // subsolution offset actually used
};

/// Turns a known admissible u* into a problem: f := F(U[u*])^C(n,p) stored
/// on the grid, phi := u*, u_sub := u* - beta prod x_i (1 - x_i). beta is
/// halved until u_sub is admissible (down to 0).
inline ManufacturedProblem manufactured_problem(const PointFn& u_star, const ProblemSpec& skeleton,
                                                const ManufacturedOptions& options = {}) {
    ProblemSpec spec = skeleton;
    const auto& grid = spec.grid;
    const int n = spec.n();
    const auto star = grid.sample([&](const std::vector<double>& x) { return u_star(x); });

    std::vector<double> fvals(grid.size(), 0.0);
    std::vector<std::size_t> bad;
    std::vector<char> ok(grid.size(), 0);
    auto rhs_from = [&](const Eigen::MatrixXd& U, const Eigen::MatrixXd& g) -> std::optional<double> {
        const auto spec_l = eigen_wrt_metric(U, g);
        if (!in_cone(spec_l, spec.cone)) return std::nullopt;
        return std::exp(eval_F(spec_l, spec.cone).log_M);
    };

    if (options.rhs == RhsSource::discrete) {
        const auto field = covariant_hessian(grid, star, spec.metric, spec.cone, spec.augment());
        for (std::size_t k = 0; k < field.points.size(); ++k) {
            const std::size_t idx = field.points[k];
            if (field.margin[k] > 0.0) {
                fvals[idx] = std::exp(eval_F(field.spectrum[k], spec.cone).log_M);
                ok[idx] = 1;
            } else {
                bad.push_back(idx);
            }
        }
    } else {
        Eigen::MatrixXd a;
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const auto x = grid.point(idx);
            auto d = continuum_derivatives(u_star, spec, x);
            if (!spec.A.zero()) {
                spec.A.evaluate(spec.env(idx, u_star(x), d.grad), a);
                d.hess += a;
            }
            const auto v = rhs_from(d.hess, d.g);
            if (v) {
                fvals[idx] = *v;
                ok[idx] = 1;
            } else if (!grid.is_boundary(idx)) {
                bad.push_back(idx);
            }
        }
    }
    if (!bad.empty())
        throw Error(ErrorCode::inadmissible_ustar,
                    "u* is not admissible at " + std::to_string(bad.size()) + " interior point(s)", bad);
    // Boundary nodes without a value copy the nearest interior node.
    std::vector<int> m(static_cast<std::size_t>(n));
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        if (!ok[idx]) {
            grid.multi_index(idx, m);
            std::size_t in = 0;
            for (int a = 0; a < n; ++a)
                in += static_cast<std::size_t>(std::clamp(m[a], 1, grid.shape()[a] - 2)) * grid.stride(a);
            fvals[idx] = fvals[in];
        }

    spec.f = Coefficient::from_gridded(std::make_shared<const GriddedFunction>(grid, std::move(fvals)));
    spec.f.description = "manufactured";
    spec.phi = Coefficient{};
    spec.phi.fn = [u_star, n](std::span<const double> env) { return u_star(env.first(static_cast<std::size_t>(n))); };
    spec.phi.description = "u*";

    const auto bump = grid.sample([](const std::vector<double>& x) {
        double b = 1.0;
        for (double xi : x) b *= xi * (1.0 - xi);
        return b;
    });
    double beta = options.beta;
    for (int attempt = 0;; ++attempt) {
        std::vector<double> sub(star);
        for (std::size_t idx = 0; idx < grid.size(); ++idx) sub[idx] -= beta * bump[idx];
        const auto field = covariant_hessian(grid, sub, spec.metric, spec.cone, spec.augment());
        if (beta == 0.0 || field.min_margin() > 0.0) {
            spec.subsolution = std::move(sub);
            break;
        }
        beta = attempt >= 30 ? 0.0 : 0.5 * beta;
    }
    return ManufacturedProblem{std::move(spec), star, beta};
}

} // namespace pma::oracles
