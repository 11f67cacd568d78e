#pragma once

// Single-chart discretization of the unit box [0,1]^n: uniform grid, metric
// field with Christoffel symbols, finite-difference covariant Hessians and
// eigenvalues relative to the metric.

#include "pma/error.hpp"
#include "pma/spectral_operator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pma {

/// Uniform tensor-product grid on [0,1]^n, row-major (last axis fastest).
class Grid {
public:
    Grid(int n, std::vector<int> shape) : n_(n), shape_(std::move(shape)) {
        if (n < 2) throw Error(ErrorCode::invalid_argument, "grid dimension must be >= 2");
        if (static_cast<int>(shape_.size()) != n) throw Error(ErrorCode::dimension_mismatch, "grid shape rank != n");
        stride_.assign(static_cast<std::size_t>(n), 1);
        for (int a = n - 1; a >= 0; --a) {
            if (shape_[a] < 9)
                throw Error(ErrorCode::invalid_argument, "grid needs at least 9 points per axis");
            if (a < n - 1) stride_[a] = stride_[a + 1] * static_cast<std::size_t>(shape_[a + 1]);
        }
        size_ = stride_[0] * static_cast<std::size_t>(shape_[0]);
        for (int s : shape_) h_.push_back(1.0 / (s - 1));

        unknown_.assign(size_, -1);
        std::vector<int> m(static_cast<std::size_t>(n));
        for (std::size_t idx = 0; idx < size_; ++idx) {
            multi_index(idx, m);
            bool boundary = false;
            for (int a = 0; a < n; ++a) boundary = boundary || m[a] == 0 || m[a] == shape_[a] - 1;
            if (!boundary) {
                unknown_[idx] = static_cast<long>(interior_.size());
                interior_.push_back(idx);
            }
        }
    }

    /// n^d points with the same count per axis.
    static Grid uniform(int n, int points) { return Grid(n, std::vector<int>(static_cast<std::size_t>(n), points)); }

    int dim() const { return n_; }
    const std::vector<int>& shape() const { return shape_; }
    double spacing(int axis) const { return h_[axis]; }
    std::size_t size() const { return size_; }
    std::size_t stride(int axis) const { return stride_[axis]; }

    void multi_index(std::size_t idx, std::vector<int>& m) const {
        for (int a = 0; a < n_; ++a) {
            m[a] = static_cast<int>(idx / stride_[a]);
            idx %= stride_[a];
        }
    }
    int index_along(std::size_t idx, int axis) const {
        return static_cast<int>((idx / stride_[axis]) % static_cast<std::size_t>(shape_[axis]));
    }
    double coord(std::size_t idx, int axis) const { return index_along(idx, axis) * h_[axis]; }
    std::vector<double> point(std::size_t idx) const {
        std::vector<double> x(static_cast<std::size_t>(n_));
        for (int a = 0; a < n_; ++a) x[a] = coord(idx, a);
        return x;
    }

    bool is_boundary(std::size_t idx) const { return unknown_[idx] < 0; }
    /// Interior unknown number, -1 on the boundary.
    long unknown(std::size_t idx) const { return unknown_[idx]; }
    const std::vector<std::size_t>& interior() const { return interior_; }

    /// Euclidean distance to the nearest box face and that face (axis, side).
    double distance_to_boundary(std::size_t idx, int* axis = nullptr, int* side = nullptr) const {
        double best = 2.0;
        for (int a = 0; a < n_; ++a) {
            const double x = coord(idx, a);
            if (x < best) {
                best = x;
                if (axis) *axis = a;
                if (side) *side = 0;
            }
            if (1.0 - x < best) {
                best = 1.0 - x;
                if (axis) *axis = a;
                if (side) *side = 1;
            }
        }
        return best;
    }

    /// Samples fn(x) at every grid point.
    template <class Fn>
    std::vector<double> sample(Fn&& fn) const {
        std::vector<double> out(size_);
        for (std::size_t idx = 0; idx < size_; ++idx) out[idx] = fn(point(idx));
        return out;
    }

private:
    int n_;
    std::vector<int> shape_;
    std::vector<std::size_t> stride_;
    std::vector<double> h_;
    std::size_t size_ = 0;
    std::vector<long> unknown_;
    std::vector<std::size_t> interior_;
};

/// First derivative of a grid field along an axis: central where both
/// neighbours exist, second-order one-sided on the face.
inline double grid_d1(const Grid& grid, std::span<const double> f, std::size_t idx, int axis) {
    const int i = grid.index_along(idx, axis);
    const int last = grid.shape()[axis] - 1;
    const std::size_t s = grid.stride(axis);
    const double h = grid.spacing(axis);
    if (i > 0 && i < last) return (f[idx + s] - f[idx - s]) / (2.0 * h);
    if (i == 0) return (-3.0 * f[idx] + 4.0 * f[idx + s] - f[idx + 2 * s]) / (2.0 * h);
    return (3.0 * f[idx] - 4.0 * f[idx - s] + f[idx - 2 * s]) / (2.0 * h);
}

/// Second derivative along one axis: central inside, second-order one-sided
/// (four points) on the face.
inline double grid_d2(const Grid& grid, std::span<const double> f, std::size_t idx, int axis) {
    const int i = grid.index_along(idx, axis);
    const int last = grid.shape()[axis] - 1;
    const std::size_t s = grid.stride(axis);
    const double h2 = grid.spacing(axis) * grid.spacing(axis);
    if (i > 0 && i < last) return (f[idx + s] - 2.0 * f[idx] + f[idx - s]) / h2;
    if (i == 0) return (2.0 * f[idx] - 5.0 * f[idx + s] + 4.0 * f[idx + 2 * s] - f[idx + 3 * s]) / h2;
    return (2.0 * f[idx] - 5.0 * f[idx - s] + 4.0 * f[idx - 2 * s] - f[idx - 3 * s]) / h2;
}

/// Mixed derivative: successive centrals inside; on a face the offending
/// axis falls back to a first-order one-sided difference.
inline double grid_dmixed(const Grid& grid, std::span<const double> f, std::size_t idx, int a, int b) {
    auto offsets = [&](int axis, long& plus, long& minus, double& width) {
        const int i = grid.index_along(idx, axis);
        const int last = grid.shape()[axis] - 1;
        const long s = static_cast<long>(grid.stride(axis));
        const double h = grid.spacing(axis);
        if (i > 0 && i < last) {
            plus = s, minus = -s, width = 2.0 * h;
        } else if (i == 0) {
            plus = s, minus = 0, width = h;
        } else {
            plus = 0, minus = -s, width = h;
        }
    };
    long pa, ma, pb, mb;
    double wa, wb;
    offsets(a, pa, ma, wa);
    offsets(b, pb, mb, wb);
    const long base = static_cast<long>(idx);
    return (f[base + pa + pb] - f[base + pa + mb] - f[base + ma + pb] + f[base + ma + mb]) / (wa * wb);
}

/// Per-point metric, inverse, inverse Cholesky factor and Christoffel
/// symbols Gamma^k_ij stored flat.
class MetricField {
public:
    using MetricFn = std::function<Eigen::MatrixXd(std::span<const double>)>;

    MetricField() = default;

    /// Evaluates g at every point, validates positive definiteness and
    /// computes the Christoffel symbols on the grid.
    static MetricField from_function(const Grid& grid, const MetricFn& fn, bool flat = false) {
        MetricField m;
        m.n_ = grid.dim();
        m.flat_ = flat;
        const std::size_t nn = static_cast<std::size_t>(m.n_ * m.n_);
        m.g_.resize(grid.size() * nn);
        m.ginv_.resize(grid.size() * nn);
        m.linv_.resize(grid.size() * nn);
        std::vector<std::size_t> bad;
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const auto x = grid.point(idx);
            Eigen::MatrixXd g = fn(x);
            if (g.rows() != m.n_ || g.cols() != m.n_)
                throw Error(ErrorCode::dimension_mismatch, "metric function returned wrong size");
            g = 0.5 * (g + g.transpose()).eval();
            Eigen::LLT<Eigen::MatrixXd> llt(g);
            if (llt.info() != Eigen::Success || !g.allFinite()) {
                bad.push_back(idx);
                continue;
            }
            const Eigen::MatrixXd linv =
                llt.matrixL().solve(Eigen::MatrixXd::Identity(m.n_, m.n_));
            Eigen::Map<Eigen::MatrixXd>(m.g_.data() + idx * nn, m.n_, m.n_) = g;
            Eigen::Map<Eigen::MatrixXd>(m.ginv_.data() + idx * nn, m.n_, m.n_) = linv.transpose() * linv;
            Eigen::Map<Eigen::MatrixXd>(m.linv_.data() + idx * nn, m.n_, m.n_) = linv;
        }
        if (!bad.empty())
            throw Error(ErrorCode::metric_not_spd,
                        "metric not positive definite at " + std::to_string(bad.size()) + " point(s)", bad);
        christoffel(grid, m);
        return m;
    }

    static MetricField identity(const Grid& grid) {
        const int n = grid.dim();
        return from_function(grid, [n](std::span<const double>) { return Eigen::MatrixXd::Identity(n, n); }, true);
    }

    /// Fills Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij) from the
    /// stored metric values.
    friend void christoffel(const Grid& grid, MetricField& m) {
        const int n = m.n_;
        const std::size_t nn = static_cast<std::size_t>(n * n);
        m.gamma_.assign(grid.size() * nn * static_cast<std::size_t>(n), 0.0);
        if (m.flat_) return;
        // dg[c][i*n+j] = d_c g_ij
        std::vector<double> comp(grid.size());
        std::vector<std::vector<double>> dg(static_cast<std::size_t>(n), std::vector<double>(grid.size() * nn));
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                for (std::size_t idx = 0; idx < grid.size(); ++idx) comp[idx] = m.g_[idx * nn + i * n + j];
                for (int c = 0; c < n; ++c)
                    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
                        const double d = grid_d1(grid, comp, idx, c);
                        dg[c][idx * nn + i * n + j] = d;
                        dg[c][idx * nn + j * n + i] = d;
                    }
            }
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const double* gi = m.ginv_.data() + idx * nn;
            double* gam = m.gamma_.data() + idx * nn * n;
            for (int k = 0; k < n; ++k)
                for (int i = 0; i < n; ++i)
                    for (int j = i; j < n; ++j) {
                        double s = 0.0;
                        for (int l = 0; l < n; ++l) {
                            const double t = dg[i][idx * nn + j * n + l] + dg[j][idx * nn + i * n + l] -
                                             dg[l][idx * nn + i * n + j];
                            s += gi[k * n + l] * t;
                        }
                        gam[k * nn + i * n + j] = 0.5 * s;
                        gam[k * nn + j * n + i] = 0.5 * s;
                    }
        }
    }

    int dim() const { return n_; }
    bool flat() const { return flat_; }

    Eigen::Map<const Eigen::MatrixXd> g(std::size_t idx) const { return map(g_, idx); }
    Eigen::Map<const Eigen::MatrixXd> ginv(std::size_t idx) const { return map(ginv_, idx); }
    /// L^{-1} with g = L L^T.
    Eigen::Map<const Eigen::MatrixXd> chol_inv(std::size_t idx) const { return map(linv_, idx); }
    /// Gamma^k_ij.
    double gamma(std::size_t idx, int k, int i, int j) const {
        return gamma_[(idx * n_ + k) * n_ * n_ + i * n_ + j];
    }

private:
    Eigen::Map<const Eigen::MatrixXd> map(const std::vector<double>& v, std::size_t idx) const {
        return Eigen::Map<const Eigen::MatrixXd>(v.data() + idx * n_ * n_, n_, n_);
    }

    int n_ = 0;
    bool flat_ = false;
    std::vector<double> g_, ginv_, linv_, gamma_;
};

void christoffel(const Grid& grid, MetricField& m);

/// Eigenvalues of U relative to g via the reduction L^{-1} U L^{-T}.
inline Spectrum eigen_wrt_metric(const Eigen::Ref<const Eigen::MatrixXd>& U,
                                 const Eigen::Ref<const Eigen::MatrixXd>& g) {
    if (U.rows() != g.rows() || U.cols() != g.cols() || U.rows() != U.cols())
        throw Error(ErrorCode::dimension_mismatch, "U and g must be square of equal size");
    const Eigen::MatrixXd gs = 0.5 * (g + g.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(gs);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::metric_not_spd, "metric is not positive definite");
    const Eigen::MatrixXd linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(g.rows(), g.cols()));
    const Eigen::MatrixXd red = linv * (0.5 * (U + U.transpose())) * linv.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (red + red.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::eigen_failure, "eigendecomposition did not converge");
    const Eigen::VectorXd& ev = es.eigenvalues();
    return Spectrum(std::vector<double>(ev.data(), ev.data() + ev.size()), true);
}

/// Coordinate gradient and covariant Hessian at an interior point.
struct LocalDerivatives {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess; // covariant: d_ij u - Gamma^k_ij d_k u
};

inline LocalDerivatives covariant_derivatives(const Grid& grid, const MetricField& metric,
                                              std::span<const double> u, std::size_t idx) {
    const int n = grid.dim();
    LocalDerivatives out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
    for (int a = 0; a < n; ++a) out.grad[a] = grid_d1(grid, u, idx, a);
    for (int a = 0; a < n; ++a) {
        out.hess(a, a) = grid_d2(grid, u, idx, a);
        for (int b = a + 1; b < n; ++b) {
            const double m = grid_dmixed(grid, u, idx, a, b);
            out.hess(a, b) = m;
            out.hess(b, a) = m;
        }
    }
    if (!metric.flat())
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) s += metric.gamma(idx, k, i, j) * out.grad[k];
                out.hess(i, j) -= s;
                if (j != i) out.hess(j, i) -= s;
            }
    return out;
}

/// Augmented tensor A(x, u, grad u) at a grid point; writes into out.
using AugmentFn = std::function<void(std::size_t idx, double z, const Eigen::VectorXd& grad, Eigen::MatrixXd& out)>;

/// U = covariant Hessian + A at interior points, with spectra relative to g
/// and cone margins.
struct AugmentedHessianField {
    std::vector<std::size_t> points; // flat grid indices (interior)
    std::vector<Eigen::MatrixXd> U;
    std::vector<Spectrum> spectrum;
    std::vector<double> margin;

    double min_margin() const {
        double m = std::numeric_limits<double>::infinity();
        for (double v : margin) m = std::min(m, v);
        return m;
    }
};

inline AugmentedHessianField covariant_hessian(const Grid& grid, std::span<const double> u, const MetricField& metric,
                                               const ConeParams& cp, const AugmentFn& augment = {}) {
    if (u.size() != grid.size()) throw Error(ErrorCode::dimension_mismatch, "field size does not match grid");
    AugmentedHessianField out;
    const auto& interior = grid.interior();
    out.points = interior;
    out.U.reserve(interior.size());
    out.spectrum.reserve(interior.size());
    out.margin.reserve(interior.size());
    Eigen::MatrixXd a(grid.dim(), grid.dim());
    for (std::size_t idx : interior) {
        auto d = covariant_derivatives(grid, metric, u, idx);
        if (augment) {
            a.setZero();
            augment(idx, u[idx], d.grad, a);
            d.hess += 0.5 * (a + a.transpose());
        }
        auto spec = eigen_wrt_metric(d.hess, metric.g(idx));
        out.margin.push_back(min_p_sum(spec, cp));
        out.spectrum.push_back(std::move(spec));
        out.U.push_back(std::move(d.hess));
    }
    return out;
}

/// Largest violation of lambda_k <= mu_k <= lambda_{k+1} between a symmetric
/// matrix and its leading (n-1)x(n-1) block; <= 0 means the eigenvalues
/// interlace.
inline double interlacing_violation(const Eigen::Ref<const Eigen::MatrixXd>& U) {
    const Eigen::Index n = U.rows();
    const Eigen::MatrixXd sym = 0.5 * (U + U.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(sym, Eigen::EigenvaluesOnly);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> lead(sym.topLeftCorner(n - 1, n - 1), Eigen::EigenvaluesOnly);
    const auto& lam = full.eigenvalues();
    const auto& mu = lead.eigenvalues();
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n - 1; ++k) {
        worst = std::max(worst, lam[k] - mu[k]);
        worst = std::max(worst, mu[k] - lam[k + 1]);
    }
    return worst;
}

} // namespace pma
