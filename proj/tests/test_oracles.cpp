#include "pma/oracles.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace pma;
using namespace pma::oracles;

namespace {

ProblemSpec skeleton(int n, int p, int pts) {
    ProblemSpec spec(ConeParams(n, p), Grid::uniform(n, pts));
    return spec;
}

double half_sq(std::span<const double> x, double a) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return 0.5 * a * s;
}

} // namespace

TEST(BruteForceM, Examples) {
    const std::vector<double> a{1, 2, 3};
    EXPECT_EQ(brute_force_M(a, 2), 60.0);
    const std::vector<double> ones(4, 1.0);
    EXPECT_EQ(brute_force_M(ones, 2), 64.0); // six pairs, each summing to 2
    const std::vector<double> b{0.5, 1.5, 4.0};
    EXPECT_EQ(brute_force_M(b, 3), 6.0);
    EXPECT_EQ(brute_force_M(b, 1), 3.0);
}

TEST(BruteForceM, OverflowAndSizeLimit) {
    const std::vector<double> big(12, 1e30);
    try {
        brute_force_M(big, 6);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::overflow);
    }
    EXPECT_THROW(brute_force_M(std::vector<double>(13, 1.0), 2), Error);
}

TEST(BruteForceM, AgreesWithLogDomainOperator) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 5, p = 1 + trial % n;
        const auto v = support::random_cone_point(rng, n, p);
        const double ref = brute_force_M(v, p);
        const auto r = eval_F(Spectrum(v), ConeParams(n, p));
        EXPECT_LE(std::abs(std::exp(r.log_M) - ref), 1e-12 * std::abs(ref));
    }
}

TEST(FdGradient, Quadratic) {
    const std::vector<double> x{1.0, -2.0, 0.5};
    const auto g = fd_gradient([](std::span<const double> v) { return v[0] * v[0] + 3 * v[1] + v[0] * v[2]; }, x);
    EXPECT_NEAR(g[0], 2.5, 1e-8);
    EXPECT_NEAR(g[1], 3.0, 1e-8);
    EXPECT_NEAR(g[2], 1.0, 1e-8);
}

TEST(FdGradient, MinPSumSubgradientAwayFromTies) {
    const std::vector<double> x{0.3, 2.0, 1.0, 5.0};
    const auto g = fd_gradient([](std::span<const double> v) { return min_p_sum(v, ConeParams(4, 2)); }, x);
    EXPECT_NEAR(g[0], 1.0, 1e-8);
    EXPECT_NEAR(g[1], 0.0, 1e-8);
    EXPECT_NEAR(g[2], 1.0, 1e-8);
    EXPECT_NEAR(g[3], 0.0, 1e-8);
}

TEST(FdGradient, ShrinksStepNearConeBoundary) {
    const ConeParams cp(2, 1);
    auto F = [&](std::span<const double> v) { return eval_F(Spectrum(std::vector<double>(v.begin(), v.end())), cp).F_value; };
    // Distance 5e-7 to the boundary: the default step leaves the cone, a step of 1e-7 does not.
    // The remaining truncation error is about 1.5%.
    const std::vector<double> x{5e-7, 1.0};
    const auto g = fd_gradient(F, x);
    EXPECT_NEAR(g[0], 0.5 * std::sqrt(1.0 / 5e-7), 3e-2 * 0.5 * std::sqrt(1.0 / 5e-7));
    const std::vector<double> y{1e-12, 1.0};
    try {
        fd_gradient(F, y);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::cone_violation);
    }
}

TEST(ContinuumDerivatives, CubicIsExactUpToRounding) {
    const auto spec = skeleton(2, 1, 9);
    PointFn u = [](std::span<const double> x) { return x[0] * x[0] * x[0] + 2 * x[0] * x[1] * x[1] - x[1]; };
    const std::vector<double> x{0.4, 0.7};
    const auto d = continuum_derivatives(u, spec, x);
    EXPECT_NEAR(d.grad[0], 3 * 0.16 + 2 * 0.49, 1e-9);
    EXPECT_NEAR(d.grad[1], 4 * 0.4 * 0.7 - 1, 1e-9);
    EXPECT_NEAR(d.hess(0, 0), 6 * 0.4, 1e-7);
    EXPECT_NEAR(d.hess(1, 1), 4 * 0.4, 1e-7);
    EXPECT_NEAR(d.hess(0, 1), 4 * 0.7, 1e-7);
    EXPECT_NEAR(d.hess(1, 0), 4 * 0.7, 1e-7);
}

TEST(Manufactured, QuadraticGivesConstantRhs) {
    // u* = a |x|^2 / 2 has U = a I, so f = (p a)^C(n,p).
    for (auto [n, p] : {std::pair{2, 1}, {2, 2}, {3, 2}}) {
        const ConeParams cp(n, p);
        const double a = 1.5;
        const auto mp = manufactured_problem([a](std::span<const double> x) { return half_sq(x, a); },
                                             skeleton(n, p, 9), {});
        const double expect = std::pow(p * a, static_cast<double>(cp.tuple_count()));
        for (std::size_t idx = 0; idx < mp.spec.grid.size(); idx += 7) {
            const auto e = mp.spec.env(idx, 0.0, Eigen::VectorXd::Zero(n));
            EXPECT_NEAR(mp.spec.f(e), expect, 1e-7 * expect);
        }
        EXPECT_EQ(mp.beta, 0.0);
    }
}

TEST(Manufactured, DiscreteRhsMakesUStarExactDiscreteSolution) {
    const auto u = [](std::span<const double> x) {
        return 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.1 * std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]);
    };
    auto sk = skeleton(2, 1, 17);
    const auto mp = manufactured_problem(u, sk, {0.0, RhsSource::discrete});
    const auto rep = validate_subsolution(mp.spec);
    EXPECT_TRUE(rep.passed);
    EXPECT_LE(std::abs(rep.min_equation_margin), 1e-8);
    EXPECT_EQ(rep.max_boundary_mismatch, 0.0);
}

TEST(Manufactured, SubsolutionOffsetIsAdmissible) {
    const auto u = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
    const auto mp = manufactured_problem(u, skeleton(2, 1, 17), {0.5, RhsSource::continuum});
    EXPECT_GT(mp.beta, 0.0);
    const auto rep = validate_subsolution(mp.spec);
    EXPECT_TRUE(rep.passed);
    EXPECT_GT(rep.min_equation_margin, 0.0);
    const std::size_t centre = 8 * 17 + 8;
    EXPECT_NEAR(mp.u_star[centre] - mp.spec.subsolution[centre], mp.beta / 16.0, 1e-15);
}

TEST(Manufactured, SaddleIsRejected) {
    const auto u = [](std::span<const double> x) { return x[0] * x[0] - x[1] * x[1]; };
    try {
        manufactured_problem(u, skeleton(2, 1, 9), {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::inadmissible_ustar);
        EXPECT_EQ(e.points().size(), 49u);
    }
    // p = n only needs a positive trace; the saddle has trace zero.
    EXPECT_THROW(manufactured_problem(u, skeleton(2, 2, 9), {}), Error);
}
