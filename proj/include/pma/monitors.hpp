#pragma once

// Post-solve checks mirroring the a priori estimates: the C0 sandwich between
// the subsolution and the harmonic-type supersolution h, sup-norm ratios of
// gradient and Hessian against their boundary values, and a barrier
// certificate v = u - u_sub + t d - N d^2 on a boundary collar.

#include "pma/geometry.hpp"
#include "pma/problem.hpp"
#include "pma/solver.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pma {

/// tr_g A(x, u_sub, grad u_sub) at an interior point.
inline double frozen_trace_A(const ProblemSpec& spec, std::size_t idx) {
    if (spec.A.zero()) return 0.0;
    const int n = spec.n();
    Eigen::VectorXd grad(n);
    for (int a = 0; a < n; ++a) grad[a] = grid_d1(spec.grid, spec.subsolution, idx, a);
    Eigen::MatrixXd a;
    spec.A.evaluate(spec.env(idx, spec.subsolution[idx], grad), a);
    return (spec.metric.ginv(idx).array() * a.array()).sum();
}

/// Solves g^ij nabla_ij h + tr_g A = 0 with h = phi on the boundary. A is
/// frozen at the subsolution when it depends on (z, p).
inline std::vector<double> supersolution_h(const ProblemSpec& spec, const SolverSettings& settings = {}) {
    const auto& grid = spec.grid;
    const int n = spec.n();
    const auto phi = spec.boundary_field();
    const auto& interior = grid.interior();
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(interior.size()));
    Eigen::VectorXd c1(n);
    for (std::size_t row = 0; row < interior.size(); ++row) {
        const std::size_t idx = interior[row];
        const auto ginv = spec.metric.ginv(idx);
        c1.setZero();
        if (!spec.metric.flat())
            for (int k = 0; k < n; ++k)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) c1[k] -= ginv(i, j) * spec.metric.gamma(idx, k, i, j);
        double b = -frozen_trace_A(spec, idx);
        emit_stencil(grid, idx, ginv, c1, 0.0, [&](std::size_t col, double w) {
            const long k = grid.unknown(col);
            if (k >= 0) trip.emplace_back(static_cast<int>(row), static_cast<int>(k), w);
            else b -= w * phi[col];
        });
        rhs[static_cast<Eigen::Index>(row)] = b;
    }
    const auto m = static_cast<Eigen::Index>(interior.size());
    Eigen::SparseMatrix<double, Eigen::RowMajor> mat(m, m);
    mat.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd sol = solve_linear(mat, rhs, grid, settings);
    // Iterative refinement; the Krylov tolerance is relative to |rhs|.
    for (int pass = 0; pass < 5; ++pass) {
        const Eigen::VectorXd r = rhs - mat * sol;
        if (r.lpNorm<Eigen::Infinity>() <= 1e-12) break;
        sol += solve_linear(mat, r, grid, settings);
    }
    std::vector<double> h(phi);
    for (std::size_t row = 0; row < interior.size(); ++row) h[interior[row]] = sol[static_cast<Eigen::Index>(row)];
    return h;
}

/// sup over interior points of |g^ij nabla_ij h + tr_g A|.
inline double supersolution_residual(const ProblemSpec& spec, std::span<const double> h) {
    double worst = 0.0;
    for (std::size_t idx : spec.grid.interior()) {
        const auto d = covariant_derivatives(spec.grid, spec.metric, h, idx);
        const double r = (spec.metric.ginv(idx).array() * d.hess.array()).sum() + frozen_trace_A(spec, idx);
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

struct C0Report {
    double lower = std::numeric_limits<double>::infinity(); // min(u - u_sub)
    double upper = std::numeric_limits<double>::infinity(); // min(h - u)
    std::size_t lower_at = 0;
    std::size_t upper_at = 0;
    bool passed = true;
    std::vector<PointIssue> violations;
};

inline C0Report c0_sandwich(std::span<const double> u, std::span<const double> u_sub, std::span<const double> h,
                            double tol = 1e-8) {
    if (u.size() != u_sub.size() || u.size() != h.size())
        throw Error(ErrorCode::dimension_mismatch, "sandwich fields must share a grid");
    C0Report rep;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double lo = u[i] - u_sub[i];
        const double up = h[i] - u[i];
        if (lo < rep.lower) rep.lower = lo, rep.lower_at = i;
        if (up < rep.upper) rep.upper = up, rep.upper_at = i;
        if (lo < -tol) rep.violations.push_back({i, "lower", lo});
        if (up < -tol) rep.violations.push_back({i, "upper", up});
    }
    rep.passed = rep.violations.empty();
    return rep;
}

struct DerivativeReport {
    double grad_sup_interior = 0.0;
    double grad_sup_boundary = 0.0;
    double hess_sup_interior = 0.0;
    double hess_sup_boundary = 0.0;
    double grad_ratio = 0.0; // sup over the closed box / (1 + sup on the boundary)
    double hess_ratio = 0.0;
};

/// Metric norms |grad u|_g and |nabla^2 u|_g; one-sided differences on the
/// boundary. Informational.
inline DerivativeReport derivative_bounds(std::span<const double> u, const ProblemSpec& spec) {
    DerivativeReport rep;
    for (std::size_t idx = 0; idx < spec.grid.size(); ++idx) {
        const auto d = covariant_derivatives(spec.grid, spec.metric, u, idx);
        const auto gi = spec.metric.ginv(idx);
        const double gn = std::sqrt(std::max(0.0, d.grad.dot(gi * d.grad)));
        const Eigen::MatrixXd m = gi * d.hess;
        const double hn = std::sqrt(std::max(0.0, (m * m).trace()));
        if (spec.grid.is_boundary(idx)) {
            rep.grad_sup_boundary = std::max(rep.grad_sup_boundary, gn);
            rep.hess_sup_boundary = std::max(rep.hess_sup_boundary, hn);
        } else {
            rep.grad_sup_interior = std::max(rep.grad_sup_interior, gn);
            rep.hess_sup_interior = std::max(rep.hess_sup_interior, hn);
        }
    }
    rep.grad_ratio = std::max(rep.grad_sup_interior, rep.grad_sup_boundary) / (1.0 + rep.grad_sup_boundary);
    rep.hess_ratio = std::max(rep.hess_sup_interior, rep.hess_sup_boundary) / (1.0 + rep.hess_sup_boundary);
    return rep;
}

/// min over boundary points of the sum of the p smallest eigenvalues of U
/// (one-sided Hessian).
inline double boundary_cone_margin(std::span<const double> u, const ProblemSpec& spec) {
    double worst = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd a;
    for (std::size_t idx = 0; idx < spec.grid.size(); ++idx) {
        if (!spec.grid.is_boundary(idx)) continue;
        auto d = covariant_derivatives(spec.grid, spec.metric, u, idx);
        if (!spec.A.zero()) {
            spec.A.evaluate(spec.env(idx, u[idx], d.grad), a);
            d.hess += a;
        }
        worst = std::min(worst, min_p_sum(eigen_wrt_metric(d.hess, spec.metric.g(idx)), spec.cone));
    }
    return worst;
}

struct BarrierReport {
    double t_bar = 0.0;
    double N_bar = 0.0;
    double delta = 0.0;
    double min_v = std::numeric_limits<double>::infinity();
    double max_Lv_ratio = -std::numeric_limits<double>::infinity(); // max L v / (1 + sum F_i)
    std::size_t collar_points = 0;
    std::size_t inadmissible_points = 0;
    bool certificate = false;
};

/// Evaluates v = u - u_sub + t d - N d^2 on the collar {d <= delta}, d the
/// chart distance to the nearest face. L v = F^ij nabla_ij v - f~_p . grad v
/// uses finite differences for u - u_sub and the exact derivatives of the
/// active face distance for the d terms.
inline BarrierReport barrier_check(std::span<const double> u, const ProblemSpec& spec, double t_bar, double N_bar,
                                   double delta) {
    const auto& grid = spec.grid;
    const int n = spec.n();
    BarrierReport rep;
    rep.t_bar = t_bar;
    rep.N_bar = N_bar;
    rep.delta = delta;
    std::vector<double> w(u.begin(), u.end());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= spec.subsolution[i];

    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        int axis = 0, side = 0;
        const double d = grid.distance_to_boundary(idx, &axis, &side);
        if (d > delta + 1e-12) continue;
        ++rep.collar_points;
        rep.min_v = std::min(rep.min_v, w[idx] + t_bar * d - N_bar * d * d);
        if (grid.is_boundary(idx)) continue;

        const auto lo = local_operator(spec, u, idx);
        if (!(lo.margin > 0.0)) {
            ++rep.inadmissible_points;
            continue;
        }
        const auto ft = ftilde(spec, lo.env);
        const auto dw = covariant_derivatives(grid, spec.metric, w, idx);
        const double Lw = (lo.dF.array() * dw.hess.array()).sum() - ft.dp.dot(dw.grad);

        const double sgn = side == 0 ? 1.0 : -1.0; // d_axis d
        double hess_d = 0.0; // F^ij nabla_ij d = -F^ij Gamma^axis_ij d_axis d
        if (!spec.metric.flat())
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) hess_d -= lo.dF(i, j) * spec.metric.gamma(idx, axis, i, j) * sgn;
        const double Ld = hess_d - ft.dp[axis] * sgn;
        const double Lv = Lw + (t_bar - 2.0 * N_bar * d) * Ld - 2.0 * N_bar * lo.dF(axis, axis);

        const double sum_fi = (lo.dF * spec.metric.g(idx)).trace();
        rep.max_Lv_ratio = std::max(rep.max_Lv_ratio, Lv / (1.0 + sum_fi));
    }
    // Needs at least one interior collar point; an empty collar certifies nothing.
    rep.certificate = rep.min_v >= -1e-12 && std::isfinite(rep.max_Lv_ratio) && rep.max_Lv_ratio < 0.0 &&
                      rep.inadmissible_points == 0;
    return rep;
}

struct BarrierSearch {
    bool found = false;
    BarrierReport best;
    std::vector<BarrierReport> tried;
};

/// Sweeps t in {0.5, 0.2, 0.1, 0.05, 0.01} and N in {1, 10, 100, 1000} at
/// collar width delta and keeps the certificate with the most negative
/// L v ratio (or the least bad candidate when none certifies).
inline BarrierSearch barrier_search(std::span<const double> u, const ProblemSpec& spec, double delta) {
    BarrierSearch out;
    for (double t : {0.5, 0.2, 0.1, 0.05, 0.01})
        for (double N : {1.0, 10.0, 100.0, 1000.0}) {
            auto r = barrier_check(u, spec, t, N, delta);
            const bool better = out.tried.empty() || (r.certificate && !out.best.certificate) ||
                                (r.certificate == out.best.certificate && r.max_Lv_ratio < out.best.max_Lv_ratio);
            if (better) out.best = r;
            out.tried.push_back(r);
        }
    out.found = out.best.certificate;
    return out;
}

/// Default collar width: four grid spacings.
inline double default_collar(const Grid& grid) {
    double h = 0.0;
    for (int a = 0; a < grid.dim(); ++a) h = std::max(h, grid.spacing(a));
    return 4.0 * h;
}

struct DiagnosticsReport {
    C0Report c0;
    DerivativeReport derivatives;
    double supersolution_residual = 0.0;
    double boundary_cone_margin = 0.0;
    bool barrier_evaluated = false;
    BarrierSearch barrier;
};

} // namespace pma
