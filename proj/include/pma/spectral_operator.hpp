#pragma once

// Operator F(lambda) = (prod over p-subsets of subset sums)^(1/C(n,p)) on the
// cone of vectors whose every p-subset sum is positive, together with its
// gradient, its derivative with respect to a symmetric matrix argument and
// a checker for the structure conditions the operator satisfies.

#include "pma/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pma {

/// Binomial coefficient; exact for the small n this library deals with.
inline std::int64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    std::int64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Calls visit(std::span<const int>) for every k-subset of {0..n-1} in
/// lexicographic order.
template <class Visitor>
void for_each_combination(int n, int k, Visitor&& visit) {
    if (k < 0 || k > n) return;
    std::vector<int> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        visit(std::span<const int>(idx));
        int i = k - 1;
        while (i >= 0 && idx[i] == n - k + i) --i;
        if (i < 0) return;
        ++idx[i];
        for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

/// Eigenvalue vector of an augmented Hessian.
struct Spectrum {
    std::vector<double> values;
    bool sorted_ascending = false;

    Spectrum() = default;
    explicit Spectrum(std::vector<double> v, bool sorted = false)
        : values(std::move(v)), sorted_ascending(sorted) {
        if (values.size() < 2)
            throw Error(ErrorCode::invalid_argument, "spectrum needs at least two entries");
        for (double x : values)
            if (!std::isfinite(x)) throw Error(ErrorCode::invalid_argument, "spectrum entry not finite");
        if (sorted_ascending && !std::is_sorted(values.begin(), values.end()))
            throw Error(ErrorCode::invalid_argument, "spectrum flagged sorted but is not");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    operator std::span<const double>() const { return values; }
};

/// Dimension, tuple size and the enumerated p-subsets.
class ConeParams {
public:
    ConeParams(int n, int p) : n_(n), p_(p) {
        if (n < 2) throw Error(ErrorCode::invalid_argument, "dimension n must be >= 2");
        if (p < 1 || p > n)
            throw Error(ErrorCode::invalid_argument,
                        "tuple size p must satisfy 1 <= p <= n (got p=" + std::to_string(p) + ")");
        tuple_count_ = binomial(n, p);
        tuples_.reserve(static_cast<std::size_t>(tuple_count_ * p));
        for_each_combination(n, p, [&](std::span<const int> t) { tuples_.insert(tuples_.end(), t.begin(), t.end()); });
    }

    int n() const { return n_; }
    int p() const { return p_; }
    std::int64_t tuple_count() const { return tuple_count_; }
    /// p >= n/2, the range covered by the existence theory.
    bool in_existence_range() const { return 2 * p_ >= n_; }

    std::span<const int> tuple(std::int64_t k) const {
        return {tuples_.data() + k * p_, static_cast<std::size_t>(p_)};
    }

private:
    int n_;
    int p_;
    std::int64_t tuple_count_;
    std::vector<int> tuples_;
};

struct OperatorEval {
    double F_value = 0.0;
    std::vector<double> grad;
    double log_M = 0.0;
};

namespace detail {
inline void check_dim(std::span<const double> lambda, const ConeParams& cp) {
    if (static_cast<int>(lambda.size()) != cp.n())
        throw Error(ErrorCode::dimension_mismatch,
                    "spectrum has " + std::to_string(lambda.size()) + " entries, cone expects " +
                        std::to_string(cp.n()));
}
} // namespace detail

/// Minimum over all p-subsets of the subset sum, i.e. the sum of the p
/// smallest entries.
inline double min_p_sum(std::span<const double> lambda, const ConeParams& cp) {
    detail::check_dim(lambda, cp);
    std::vector<double> v(lambda.begin(), lambda.end());
    std::partial_sort(v.begin(), v.begin() + cp.p(), v.end());
    double s = 0.0;
    for (int i = 0; i < cp.p(); ++i) s += v[i];
    return s;
}

inline double min_p_sum(const Spectrum& lambda, const ConeParams& cp) {
    if (!lambda.sorted_ascending) return min_p_sum(std::span<const double>(lambda.values), cp);
    detail::check_dim(lambda, cp);
    double s = 0.0;
    for (int i = 0; i < cp.p(); ++i) s += lambda.values[i];
    return s;
}

/// Strict cone membership; a zero margin is outside.
inline bool in_cone(std::span<const double> lambda, const ConeParams& cp) {
    return min_p_sum(lambda, cp) > 0.0;
}

/// F, its gradient and log of the product, accumulated in the log domain.
inline OperatorEval eval_F(std::span<const double> lambda, const ConeParams& cp) {
    detail::check_dim(lambda, cp);
    const int n = cp.n();
    OperatorEval out;
    std::vector<double> inv_sum(static_cast<std::size_t>(n), 0.0);
    double log_m = 0.0;
    for (std::int64_t k = 0; k < cp.tuple_count(); ++k) {
        auto t = cp.tuple(k);
        double s = 0.0;
        for (int i : t) s += lambda[i];
        if (!(s > 0.0))
            throw Error(ErrorCode::cone_violation,
                        "tuple sum " + std::to_string(s) + " is not positive");
        log_m += std::log(s);
        const double inv = 1.0 / s;
        for (int i : t) inv_sum[i] += inv;
    }
    const double count = static_cast<double>(cp.tuple_count());
    out.log_M = log_m;
    out.F_value = std::exp(log_m / count);
    out.grad.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.grad[i] = out.F_value / count * inv_sum[i];
    return out;
}

/// Result of differentiating F(lambda(U)) with respect to the entries of a
/// symmetric matrix U.
struct MatrixDerivative {
    double F = 0.0;
    Eigen::MatrixXd dF;
    Eigen::VectorXd eigenvalues;  // ascending
    Eigen::MatrixXd eigenvectors; // columns
    std::vector<double> grad;     // F_i at the ascending eigenvalues
};

/// dF = Q diag(F_i) Q^T for U = Q diag(lambda) Q^T. The input is symmetrized.
inline MatrixDerivative matrix_derivative(const Eigen::Ref<const Eigen::MatrixXd>& U, const ConeParams& cp) {
    if (U.rows() != cp.n() || U.cols() != cp.n())
        throw Error(ErrorCode::dimension_mismatch, "matrix size does not match cone dimension");
    const Eigen::MatrixXd sym = 0.5 * (U + U.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::eigen_failure, "symmetric eigendecomposition did not converge");
    MatrixDerivative out;
    out.eigenvalues = es.eigenvalues();
    out.eigenvectors = es.eigenvectors();
    const auto ev = eval_F(std::span<const double>(out.eigenvalues.data(), cp.n()), cp);
    out.F = ev.F_value;
    out.grad = ev.grad;
    const Eigen::Map<const Eigen::VectorXd> g(ev.grad.data(), cp.n());
    out.dF = out.eigenvectors * g.asDiagonal() * out.eigenvectors.transpose();
    return out;
}

/// min over negative entries of F_j / (1 + sum F_i). Diagnostic only; empty
/// when lambda has no negative entry.
inline std::optional<double> nu0_ratio(std::span<const double> lambda, const ConeParams& cp) {
    const auto ev = eval_F(lambda, cp);
    const double denom = 1.0 + std::accumulate(ev.grad.begin(), ev.grad.end(), 0.0);
    std::optional<double> best;
    for (int j = 0; j < cp.n(); ++j)
        if (lambda[j] < 0.0) {
            const double r = ev.grad[j] / denom;
            if (!best || r < *best) best = r;
        }
    return best;
}

struct ConditionResult {
    bool passed = true;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::size_t failures = 0;

    void record(double margin, bool ok) {
        worst_margin = std::min(worst_margin, margin);
        if (!ok) {
            passed = false;
            ++failures;
        }
    }
};

struct StructureReport {
    ConditionResult homogeneity;   // |F(t l) - t F(l)| / max(1, tF), negated
    ConditionResult euler;         // |sum F_i l_i - F| / max(1, F), negated
    ConditionResult sum_grad;      // sum F_i - F(1,...,1)
    ConditionResult concavity;     // F(mid) - mean(F)
    ConditionResult positivity;    // min F_i
    std::size_t samples = 0;
    std::size_t pairs = 0;

    bool passed() const {
        return homogeneity.passed && euler.passed && sum_grad.passed && concavity.passed && positivity.passed;
    }
};

/// Verifies homogeneity (t = 0.5, 2), the Euler identity, sum F_i >= p,
/// midpoint concavity and F_i > 0 on the samples. Concavity is checked on
/// all pairs when there are at most max_all_pairs pairs, otherwise each
/// sample is paired with partners at strides 1, 2, 4, ... (16 partners).
inline StructureReport check_structure(std::span<const Spectrum> samples, const ConeParams& cp, double tol,
                                       std::size_t max_all_pairs = 200000) {
    StructureReport rep;
    rep.samples = samples.size();
    std::vector<double> f_val(samples.size());
    const double f_ones = static_cast<double>(cp.p());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        std::span<const double> lam = samples[s];
        const auto ev = eval_F(lam, cp);
        f_val[s] = ev.F_value;
        for (double t : {0.5, 2.0}) {
            std::vector<double> scaled(lam.begin(), lam.end());
            for (double& x : scaled) x *= t;
            const double err = std::abs(eval_F(scaled, cp).F_value - t * ev.F_value) / std::max(1.0, t * ev.F_value);
            rep.homogeneity.record(-err, err <= tol);
        }
        double euler = 0.0, gsum = 0.0, gmin = std::numeric_limits<double>::infinity();
        for (int i = 0; i < cp.n(); ++i) {
            euler += ev.grad[i] * lam[i];
            gsum += ev.grad[i];
            gmin = std::min(gmin, ev.grad[i]);
        }
        const double eerr = std::abs(euler - ev.F_value) / std::max(1.0, ev.F_value);
        rep.euler.record(-eerr, eerr <= tol && euler > 0.0);
        rep.sum_grad.record(gsum - f_ones, gsum - f_ones >= -tol);
        rep.positivity.record(gmin, gmin > 0.0);
    }

    auto check_pair = [&](std::size_t a, std::size_t b) {
        std::span<const double> la = samples[a];
        std::span<const double> lb = samples[b];
        std::vector<double> mid(la.size());
        for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (la[i] + lb[i]);
        const double gap = eval_F(mid, cp).F_value - 0.5 * (f_val[a] + f_val[b]);
        rep.concavity.record(gap, gap >= -tol);
        ++rep.pairs;
    };
    const std::size_t m = samples.size();
    if (m * (m + 1) / 2 <= max_all_pairs) {
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = a; b < m; ++b) check_pair(a, b);
    } else {
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t stride = 1, k = 0; k < 16; ++k, stride *= 2) check_pair(a, (a + stride) % m);
    }
    return rep;
}

} // namespace pma
