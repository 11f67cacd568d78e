#pragma once

// Damped Newton continuity solver for
//
//   F(lambda_g(nabla^2 u + A(x, u, grad u))) = (1 - t) F(U[u_sub]) + t f~(x, u, grad u)
//
// marching t from 0 (solved by the subsolution) to 1. Iterates never leave
// the admissible cone: the line search rejects any step with a non-positive
// cone margin at some interior point.

#include "pma/error.hpp"
#include "pma/geometry.hpp"
#include "pma/problem.hpp"
#include "pma/spectral_operator.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pma {

enum class LinearSolverKind { automatic, direct, krylov };

struct SolverSettings {
    int continuity_steps = 10;
    double tol_newton = 1e-10;
    int max_newton = 50;
    int max_bisections = 12;
    LinearSolverKind linear_solver = LinearSolverKind::automatic;
    double krylov_tol = 1e-12;
    int krylov_max_iter = 10000;
    /// FD check of the Jacobian at every accepted iterate.
    bool check_jacobian = false;
    std::uint64_t seed = 0;
};

/// Emits the second-order central stencil of
///   sum_ij C2_ij d_ij w + sum_k c1_k d_k w + c0 w
/// at interior point idx as (grid index, weight) pairs.
template <class Emit>
void emit_stencil(const Grid& grid, std::size_t idx, const Eigen::Ref<const Eigen::MatrixXd>& c2,
                  const Eigen::Ref<const Eigen::VectorXd>& c1, double c0, Emit&& emit) {
    const int n = grid.dim();
    double center = c0;
    for (int a = 0; a < n; ++a) {
        const std::size_t sa = grid.stride(a);
        const double ha = grid.spacing(a);
        const double w2 = c2(a, a) / (ha * ha);
        const double w1 = c1[a] / (2.0 * ha);
        center -= 2.0 * w2;
        emit(idx + sa, w2 + w1);
        emit(idx - sa, w2 - w1);
        for (int b = a + 1; b < n; ++b) {
            const std::size_t sb = grid.stride(b);
            const double wm = (c2(a, b) + c2(b, a)) / (4.0 * ha * grid.spacing(b));
            emit(idx + sa + sb, wm);
            emit(idx - sa - sb, wm);
            emit(idx + sa - sb, -wm);
            emit(idx - sa + sb, -wm);
        }
    }
    emit(idx, center);
}

/// Pointwise linearization data at an interior point.
struct LocalOperator {
    Eigen::VectorXd grad;
    Eigen::MatrixXd U;  // coordinate augmented Hessian
    Eigen::MatrixXd dF; // dF/dU_ij in coordinates
    double F = 0.0;
    double margin = 0.0;
    std::vector<double> spectrum; // ascending, relative to g
    std::vector<double> env;
};

/// Evaluates U, its spectrum and margin; F and dF only when admissible.
inline LocalOperator local_operator(const ProblemSpec& spec, std::span<const double> u, std::size_t idx) {
    const int n = spec.n();
    LocalOperator lo;
    auto d = covariant_derivatives(spec.grid, spec.metric, u, idx);
    lo.grad = std::move(d.grad);
    lo.env = spec.env(idx, u[idx], lo.grad);
    lo.U = std::move(d.hess);
    if (!spec.A.zero()) {
        Eigen::MatrixXd a;
        spec.A.evaluate(lo.env, a);
        lo.U += a;
    }
    const auto linv = spec.metric.chol_inv(idx);
    Eigen::MatrixXd red = linv * lo.U * linv.transpose();
    red = (0.5 * (red + red.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(red);
    if (es.info() != Eigen::Success)
        throw Error(ErrorCode::eigen_failure, "eigendecomposition failed at grid point " + std::to_string(idx), {idx});
    const Eigen::VectorXd& ev = es.eigenvalues();
    lo.spectrum.assign(ev.data(), ev.data() + n);
    double m = 0.0;
    for (int i = 0; i < spec.cone.p(); ++i) m += ev[i];
    lo.margin = m;
    if (!(m > 0.0)) return lo;
    const auto fe = eval_F(lo.spectrum, spec.cone);
    lo.F = fe.F_value;
    const Eigen::Map<const Eigen::VectorXd> fi(fe.grad.data(), n);
    const Eigen::MatrixXd dred = es.eigenvectors() * fi.asDiagonal() * es.eigenvectors().transpose();
    lo.dF = linv.transpose() * dred * linv;
    return lo;
}

struct LinearizedSystem {
    Eigen::SparseMatrix<double, Eigen::RowMajor> matrix; // interior unknowns
    Eigen::VectorXd rhs;
    std::vector<std::size_t> row_point; // grid index of each row
};

struct ResidualEval {
    std::vector<double> residual; // grid field, 0 on the boundary
    double sup = 0.0;
    double l2 = 0.0;
    double min_margin = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> violations;
    bool admissible() const { return violations.empty(); }
};

/// Discrete operator for one problem; freezes the anchor F(U[u_sub]).
class DiscreteOperator {
public:
    explicit DiscreteOperator(const ProblemSpec& spec) : spec_(spec) {
        start_ = spec.subsolution;
        if (start_.size() != spec.grid.size()) throw Error(ErrorCode::dimension_mismatch, "subsolution size mismatch");
        const auto phi = spec.boundary_field();
        for (std::size_t idx = 0; idx < spec.grid.size(); ++idx)
            if (spec.grid.is_boundary(idx)) start_[idx] = phi[idx];
        anchor_.assign(spec.grid.size(), 0.0);
        std::vector<std::size_t> bad;
        for (std::size_t idx : spec.grid.interior()) {
            const auto lo = local_operator(spec, start_, idx);
            if (!(lo.margin > 0.0)) bad.push_back(idx);
            else anchor_[idx] = lo.F;
        }
        if (!bad.empty())
            throw Error(ErrorCode::cone_violation,
                        "subsolution leaves the cone at " + std::to_string(bad.size()) + " interior point(s)", bad);
    }

    const ProblemSpec& spec() const { return spec_; }
    /// Subsolution with boundary values replaced by phi.
    const std::vector<double>& start() const { return start_; }
    const std::vector<double>& anchor() const { return anchor_; }

    double target(double t, double anchor, double ft) const { return (1.0 - t) * anchor + t * ft; }

    ResidualEval residual(std::span<const double> u, double t) const {
        ResidualEval out;
        out.residual.assign(spec_.grid.size(), 0.0);
        double ss = 0.0;
        for (std::size_t idx : spec_.grid.interior()) {
            const auto lo = local_operator(spec_, u, idx);
            out.min_margin = std::min(out.min_margin, lo.margin);
            if (!(lo.margin > 0.0)) {
                out.violations.push_back(idx);
                continue;
            }
            const double ft = t > 0.0 ? ftilde(spec_, lo.env).value : 0.0;
            const double r = lo.F - target(t, anchor_[idx], ft);
            out.residual[idx] = r;
            out.sup = std::max(out.sup, std::abs(r));
            ss += r * r;
        }
        out.l2 = std::sqrt(ss);
        if (!out.admissible()) {
            out.sup = std::numeric_limits<double>::infinity();
            out.l2 = std::numeric_limits<double>::infinity();
        }
        return out;
    }

    /// Exact linearization of residual() at an admissible u.
    LinearizedSystem jacobian(std::span<const double> u, double t) const {
        const auto& grid = spec_.grid;
        const int n = spec_.n();
        const bool a_z = !spec_.A.zero() && spec_.A.uses_z();
        const bool a_p = !spec_.A.zero() && spec_.A.uses_p();
        LinearizedSystem sys;
        const auto& interior = grid.interior();
        sys.rhs.resize(static_cast<Eigen::Index>(interior.size()));
        sys.row_point = interior;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(interior.size() * static_cast<std::size_t>(1 + 2 * n + 2 * n * (n - 1)));
        std::vector<std::size_t> bad;
        Eigen::MatrixXd da;
        Eigen::VectorXd c1(n);
        for (std::size_t row = 0; row < interior.size(); ++row) {
            const std::size_t idx = interior[row];
            const auto lo = local_operator(spec_, u, idx);
            if (!(lo.margin > 0.0)) {
                bad.push_back(idx);
                continue;
            }
            const bool need_f = t > 0.0;
            FTilde ft;
            if (need_f) ft = ftilde(spec_, lo.env);
            sys.rhs[static_cast<Eigen::Index>(row)] = -(lo.F - target(t, anchor_[idx], need_f ? ft.value : 0.0));

            double c0 = 0.0;
            c1.setZero();
            if (!spec_.metric.flat())
                for (int k = 0; k < n; ++k) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) s += lo.dF(i, j) * spec_.metric.gamma(idx, k, i, j);
                    c1[k] -= s;
                }
            if (a_z) {
                spec_.A.partial(expr::z_var(n), lo.env, da);
                c0 += (lo.dF.array() * da.array()).sum();
            }
            if (a_p)
                for (int k = 0; k < n; ++k) {
                    spec_.A.partial(expr::p_var(n, k), lo.env, da);
                    c1[k] += (lo.dF.array() * da.array()).sum();
                }
            if (need_f) {
                c0 -= t * ft.dz;
                c1 -= t * ft.dp;
            }
            emit_stencil(grid, idx, lo.dF, c1, c0, [&](std::size_t col, double w) {
                const long k = grid.unknown(col);
                if (k >= 0 && w != 0.0) trip.emplace_back(static_cast<int>(row), static_cast<int>(k), w);
            });
        }
        if (!bad.empty())
            throw Error(ErrorCode::cone_violation,
                        "iterate leaves the cone at " + std::to_string(bad.size()) + " interior point(s)", bad);
        const auto m = static_cast<Eigen::Index>(interior.size());
        sys.matrix.resize(m, m);
        sys.matrix.setFromTriplets(trip.begin(), trip.end());
        return sys;
    }

private:
    const ProblemSpec& spec_;
    std::vector<double> start_;
    std::vector<double> anchor_;
};

/// Solves A x = b by sparse LU (n = 2, up to 129 points per axis, or when
/// forced) or unpreconditioned BiCGSTAB.
inline Eigen::VectorXd solve_linear(const Eigen::SparseMatrix<double, Eigen::RowMajor>& a, const Eigen::VectorXd& b,
                                    const Grid& grid, const SolverSettings& settings) {
    bool direct = settings.linear_solver == LinearSolverKind::direct;
    if (settings.linear_solver == LinearSolverKind::automatic)
        direct = grid.dim() == 2 && *std::max_element(grid.shape().begin(), grid.shape().end()) <= 129;
    if (direct) {
        Eigen::SparseMatrix<double> col(a);
        col.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(col);
        if (lu.info() != Eigen::Success)
            throw Error(ErrorCode::linear_solve_failure, "sparse LU factorization failed: " + lu.lastErrorMessage());
        Eigen::VectorXd x = lu.solve(b);
        if (lu.info() != Eigen::Success || !x.allFinite())
            throw Error(ErrorCode::linear_solve_failure, "sparse LU solve failed");
        return x;
    }
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double, Eigen::RowMajor>, Eigen::IdentityPreconditioner> it;
    it.setTolerance(settings.krylov_tol);
    it.setMaxIterations(settings.krylov_max_iter);
    it.compute(a);
    Eigen::VectorXd x = it.solve(b);
    if (it.info() != Eigen::Success || !x.allFinite())
        throw Error(ErrorCode::linear_solve_failure,
                    "BiCGSTAB did not converge (iterations " + std::to_string(it.iterations()) + ", error " +
                        std::to_string(it.error()) + ")");
    return x;
}

struct NewtonRecord {
    int iteration = 0;
    double residual_sup = 0.0;
    double residual_l2 = 0.0;
    double step = 0.0;
    double cone_margin = 0.0;
    int line_search_trials = 0;
    double jacobian_check = std::numeric_limits<double>::quiet_NaN();
};

struct SolverState {
    std::vector<double> u;
    double t = 0.0;
    double residual_sup = 0.0;
    double residual_l2 = 0.0;
    double cone_margin = 0.0;
    int newton_iter = 0;
    std::vector<double> damping;
    std::vector<NewtonRecord> trace;
};

/// ||J v - (r(u + eps v) - r(u - eps v)) / (2 eps)|| / ||v|| at u (interior norms).
inline double jacobian_consistency(const DiscreteOperator& op, std::span<const double> u, double t,
                                   const Eigen::VectorXd& v, double eps = 1e-8) {
    const auto& grid = op.spec().grid;
    const auto sys = op.jacobian(u, t);
    const Eigen::VectorXd jv = sys.matrix * v;
    std::vector<double> up(u.begin(), u.end()), um(u.begin(), u.end());
    const auto& interior = grid.interior();
    for (std::size_t k = 0; k < interior.size(); ++k) {
        up[interior[k]] += eps * v[static_cast<Eigen::Index>(k)];
        um[interior[k]] -= eps * v[static_cast<Eigen::Index>(k)];
    }
    const auto rp = op.residual(up, t);
    const auto rm = op.residual(um, t);
    if (!rp.admissible() || !rm.admissible())
        throw Error(ErrorCode::cone_violation, "finite-difference probe left the cone");
    double err = 0.0;
    for (std::size_t k = 0; k < interior.size(); ++k) {
        const double fd = (rp.residual[interior[k]] - rm.residual[interior[k]]) / (2.0 * eps);
        const double d = jv[static_cast<Eigen::Index>(k)] - fd;
        err += d * d;
    }
    return std::sqrt(err) / v.norm();
}

/// Newton iteration at fixed t with admissibility-preserving Armijo
/// backtracking s = 1, 1/2, ..., 2^-20.
inline SolverState newton_solve_at_t(const DiscreteOperator& op, SolverState state, double t,
                                     const SolverSettings& settings) {
    const auto& grid = op.spec().grid;
    const auto& interior = grid.interior();
    state.t = t;
    state.newton_iter = 0;
    state.damping.clear();
    state.trace.clear();
    auto eval = op.residual(state.u, t);
    if (!eval.admissible())
        throw Error(ErrorCode::cone_violation,
                    "start iterate leaves the cone at " + std::to_string(eval.violations.size()) + " point(s)",
                    eval.violations);
    std::mt19937_64 rng(settings.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    auto record = [&](int it, double step, int trials) {
        NewtonRecord r;
        r.iteration = it;
        r.residual_sup = eval.sup;
        r.residual_l2 = eval.l2;
        r.step = step;
        r.cone_margin = eval.min_margin;
        r.line_search_trials = trials;
        if (settings.check_jacobian) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(interior.size()));
            for (auto& x : v) x = unit(rng);
            r.jacobian_check = jacobian_consistency(op, state.u, t, v);
        }
        state.trace.push_back(r);
    };
    record(0, 0.0, 0);

    for (int it = 0;; ++it) {
        if (eval.sup <= settings.tol_newton) break;
        if (it >= settings.max_newton)
            throw Error(ErrorCode::max_iter, "Newton reached " + std::to_string(settings.max_newton) +
                                                 " iterations at t=" + std::to_string(t) +
                                                 " (sup residual " + std::to_string(eval.sup) + ")");
        const auto sys = op.jacobian(state.u, t);
        const Eigen::VectorXd delta = solve_linear(sys.matrix, sys.rhs, grid, settings);

        double s = 1.0;
        bool accepted = false;
        int trials = 0;
        std::vector<double> trial(state.u);
        for (int k = 0; k <= 20; ++k, s *= 0.5) {
            ++trials;
            for (std::size_t j = 0; j < interior.size(); ++j)
                trial[interior[j]] = state.u[interior[j]] + s * delta[static_cast<Eigen::Index>(j)];
            auto te = op.residual(trial, t);
            if (te.admissible() && te.l2 <= (1.0 - 1e-4 * s) * eval.l2) {
                state.u.swap(trial);
                eval = std::move(te);
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw Error(ErrorCode::line_search_stall,
                        "no admissible decreasing step at t=" + std::to_string(t) + " (sup residual " +
                            std::to_string(eval.sup) + ")");
        state.damping.push_back(s);
        state.newton_iter = it + 1;
        record(it + 1, s, trials);
    }
    state.residual_sup = eval.sup;
    state.residual_l2 = eval.l2;
    state.cone_margin = eval.min_margin;
    return state;
}

/// Convenience wrappers over a freshly built operator.
inline std::vector<double> residual(const SolverState& state, const ProblemSpec& spec) {
    const DiscreteOperator op(spec);
    auto e = op.residual(state.u, state.t);
    if (!e.admissible())
        throw Error(ErrorCode::cone_violation,
                    "state leaves the cone at " + std::to_string(e.violations.size()) + " point(s)", e.violations);
    return e.residual;
}

inline LinearizedSystem jacobian(const SolverState& state, const ProblemSpec& spec) {
    const DiscreteOperator op(spec);
    return op.jacobian(state.u, state.t);
}

struct HomotopyRecord {
    double t_from = 0.0;
    double t_to = 0.0;
    bool accepted = false;
    int newton_iterations = 0;
    std::vector<double> damping;
    double residual_sup = 0.0;
    double cone_margin = 0.0;
    std::string failure;
    std::vector<NewtonRecord> trace;
};

struct ContinuityResult {
    SolverState state;
    std::vector<HomotopyRecord> log;
    double anchor_residual = 0.0; // sup residual at t = 0, u = u_sub
    int bisections = 0;
};

/// Raised when the homotopy cannot advance; carries the partial result.
class HomotopyStall : public Error {
public:
    HomotopyStall(const std::string& message, ContinuityResult partial)
        : Error(ErrorCode::homotopy_stall, message), partial_(std::move(partial)) {
        value = partial_.state.t;
    }
    const ContinuityResult& partial() const { return partial_; }
    double last_good_t() const { return partial_.state.t; }

private:
    ContinuityResult partial_;
};

/// Marches t over uniform steps, warm-starting each Newton solve; a failed
/// step is halved, at most max_bisections times in total. Throws
/// CONE_VIOLATION when the subsolution is not admissible.
inline ContinuityResult continuity_solve(const ProblemSpec& spec, const SolverSettings& settings) {
    const DiscreteOperator op(spec);
    ContinuityResult res;
    res.state.u = op.start();
    res.state.t = 0.0;
    const auto e0 = op.residual(res.state.u, 0.0);
    res.anchor_residual = e0.sup;
    res.state.residual_sup = e0.sup;
    res.state.residual_l2 = e0.l2;
    res.state.cone_margin = e0.min_margin;

    const int steps = std::max(1, settings.continuity_steps);
    for (int k = 1; k <= steps; ++k) {
        const double t_goal = static_cast<double>(k) / steps;
        double dt = t_goal - res.state.t;
        while (res.state.t < t_goal) {
            const double t_next = (res.state.t + dt >= t_goal - 1e-15) ? t_goal : res.state.t + dt;
            HomotopyRecord rec;
            rec.t_from = res.state.t;
            rec.t_to = t_next;
            try {
                auto next = newton_solve_at_t(op, res.state, t_next, settings);
                rec.accepted = true;
                rec.newton_iterations = next.newton_iter;
                rec.damping = next.damping;
                rec.residual_sup = next.residual_sup;
                rec.cone_margin = next.cone_margin;
                rec.trace = next.trace;
                res.log.push_back(std::move(rec));
                res.state = std::move(next);
            } catch (const Error& e) {
                rec.failure = e.what();
                res.log.push_back(std::move(rec));
                if (res.bisections >= settings.max_bisections)
                    throw HomotopyStall("homotopy stalled after " + std::to_string(res.bisections) +
                                            " bisections; last good t=" + std::to_string(res.state.t) + ": " +
                                            e.what(),
                                        res);
                ++res.bisections;
                dt *= 0.5;
            }
        }
    }
    return res;
}

} // namespace pma
