#include "pma/oracles.hpp"
#include "pma/spectral_operator.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace pma;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

} // namespace

TEST(ConeParams, TupleCountAndRange) {
    EXPECT_EQ(ConeParams(3, 2).tuple_count(), 3);
    EXPECT_EQ(ConeParams(6, 3).tuple_count(), 20);
    EXPECT_EQ(ConeParams(12, 6).tuple_count(), 924);
    EXPECT_TRUE(ConeParams(4, 2).in_existence_range());
    EXPECT_FALSE(ConeParams(5, 2).in_existence_range());
    EXPECT_THROW(ConeParams(1, 1), Error);
    EXPECT_THROW(ConeParams(3, 4), Error);
    EXPECT_THROW(ConeParams(3, 0), Error);
}

TEST(ConeParams, TuplesAreLexicographic) {
    const ConeParams cp(4, 2);
    const std::vector<std::vector<int>> expect{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (std::int64_t k = 0; k < cp.tuple_count(); ++k) {
        auto t = cp.tuple(k);
        EXPECT_EQ(std::vector<int>(t.begin(), t.end()), expect[static_cast<std::size_t>(k)]);
    }
}

TEST(Spectrum, Invariants) {
    EXPECT_THROW(Spectrum({1.0}), Error);
    EXPECT_THROW(Spectrum({1.0, NAN}), Error);
    EXPECT_THROW(Spectrum({2.0, 1.0}, true), Error);
    EXPECT_NO_THROW(Spectrum({1.0, 2.0}, true));
}

TEST(MinPSum, Examples) {
    EXPECT_DOUBLE_EQ(min_p_sum(std::vector<double>{1, 2, 3}, ConeParams(3, 2)), 3.0);
    EXPECT_DOUBLE_EQ(min_p_sum(std::vector<double>{1, 1, 1}, ConeParams(3, 3)), 3.0);
    EXPECT_DOUBLE_EQ(min_p_sum(std::vector<double>{-0.5, 1, 1}, ConeParams(3, 2)), 0.5);
    EXPECT_DOUBLE_EQ(min_p_sum(Spectrum({-0.5, 1, 1}, true), ConeParams(3, 2)), 0.5);
    EXPECT_THROW(min_p_sum(std::vector<double>{1, 2}, ConeParams(3, 2)), Error);
}

TEST(InCone, Examples) {
    EXPECT_TRUE(in_cone(std::vector<double>{-0.5, 1, 1}, ConeParams(3, 2)));
    EXPECT_FALSE(in_cone(std::vector<double>{-1, 1, 1}, ConeParams(3, 2)));
    EXPECT_FALSE(in_cone(std::vector<double>{0, 0, 5}, ConeParams(3, 2)));
}

TEST(InCone, AgreesWithEnumeration) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int n = 2; n <= 6; ++n)
        for (int p = 1; p <= n; ++p) {
            const ConeParams cp(n, p);
            for (int s = 0; s < 400; ++s) {
                std::vector<double> v(static_cast<std::size_t>(n));
                for (double& x : v) x = u(rng);
                EXPECT_EQ(in_cone(v, cp), support::enumerated_in_cone(v, p));
            }
        }
}

TEST(EvalF, OnesGiveP) {
    for (int n = 2; n <= 7; ++n)
        for (int p = 1; p <= n; ++p) {
            const auto ev = eval_F(std::vector<double>(static_cast<std::size_t>(n), 1.0), ConeParams(n, p));
            EXPECT_NEAR(ev.F_value, p, 1e-13 * p);
            for (double g : ev.grad) EXPECT_NEAR(g, static_cast<double>(p) / n, 1e-13);
        }
}

TEST(EvalF, FrozenHighPrecisionValues) {
    // Reference values from 40-digit evaluation of the defining product.
    struct Case {
        std::vector<double> lambda;
        int p;
        double F, logM;
        std::vector<double> grad;
    };
    const std::vector<Case> cases{
        {{1, 2, 3}, 2, 3.9148676411688635954, 4.0943445622221006848,
         {0.76122426356061236578, 0.69597646954113130585, 0.58723014617532953931}},
        {{-0.3, 0.7, 1.1, 2.5}, 2, 1.5633262031439742505, 2.6808943973457695374,
         {1.0955126802334668043, 0.87756158394077258276, 0.5428215983138799481, 0.2722332561240822164}},
        {{0.5, -0.2, 1.5, 0.9, 2.0}, 3, 2.6472024462479857338, 9.7350340171368158988,
         {0.71808456456400252105, 0.78135293986934581112, 0.56523903852705379814, 0.66827755323271539377,
          0.49756119811991454195}},
        {{2, 3}, 1, 2.4494897427831780982, 1.7917594692280550008, {0.61237243569579452455, 0.40824829046386301637}},
    };
    for (const auto& c : cases) {
        const auto ev = eval_F(c.lambda, ConeParams(static_cast<int>(c.lambda.size()), c.p));
        EXPECT_LE(rel(ev.F_value, c.F), 1e-14);
        EXPECT_LE(rel(ev.log_M, c.logM), 1e-14);
        for (std::size_t i = 0; i < c.grad.size(); ++i) EXPECT_LE(rel(ev.grad[i], c.grad[i]), 1e-13);
    }
}

TEST(EvalF, OneTwoThreeIsCubeRootOfSixty) {
    const auto ev = eval_F(std::vector<double>{1, 2, 3}, ConeParams(3, 2));
    EXPECT_LE(rel(ev.F_value, std::cbrt(60.0)), 1e-15);
    const auto fd = oracles::fd_gradient(
        [](std::span<const double> l) { return eval_F(l, ConeParams(3, 2)).F_value; }, std::vector<double>{1, 2, 3});
    for (int i = 0; i < 3; ++i) EXPECT_LE(rel(ev.grad[i], fd[i]), 1e-6);
}

TEST(EvalF, FullTupleIsTrace) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 2.0);
    for (int n = 2; n <= 6; ++n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (double& x : v) x = u(rng);
        double s = 0.0;
        for (double x : v) s += x;
        if (s <= 0) {
            v[0] += 1.0 - s;
            s = 1.0;
        }
        const auto ev = eval_F(v, ConeParams(n, n));
        EXPECT_LE(rel(ev.F_value, s), 1e-14);
        for (double g : ev.grad) EXPECT_NEAR(g, 1.0, 1e-14);
    }
}

TEST(EvalF, ConeViolation) {
    try {
        eval_F(std::vector<double>{-1, 1, 1}, ConeParams(3, 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::cone_violation);
    }
}

TEST(EvalF, LogDomainSurvivesLargeN) {
    // 924 tuple sums near 1e30 overflow a direct product; the log domain does not.
    std::vector<double> v(12, 1e30);
    const auto ev = eval_F(v, ConeParams(12, 6));
    EXPECT_LE(rel(ev.F_value, 6e30), 1e-12);
    EXPECT_THROW(oracles::brute_force_M(v, 6), Error);
}

TEST(EvalF, AgreesWithBruteForce) {
    std::mt19937_64 rng(5);
    for (int n = 2; n <= 6; ++n)
        for (int p = 1; p <= n; ++p) {
            const ConeParams cp(n, p);
            for (int s = 0; s < 200; ++s) {
                const auto v = support::random_cone_point(rng, n, p);
                const double m = oracles::brute_force_M(v, p);
                const double f = eval_F(v, cp).F_value;
                EXPECT_LE(rel(std::pow(f, static_cast<double>(cp.tuple_count())), m), 1e-12);
            }
        }
}

TEST(EvalF, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    for (int n = 2; n <= 6; ++n)
        for (int p = 1; p <= n; ++p) {
            const ConeParams cp(n, p);
            for (int s = 0; s < 20; ++s) {
                const auto v = support::random_cone_point(rng, n, p);
                const auto ev = eval_F(v, cp);
                const auto fd = oracles::fd_gradient(
                    [&](std::span<const double> l) { return eval_F(l, cp).F_value; }, v);
                for (int i = 0; i < n; ++i) EXPECT_LE(rel(ev.grad[i], fd[i]), 1e-6) << n << ' ' << p;
            }
        }
}

TEST(MatrixDerivative, IdentityCase) {
    const auto md = matrix_derivative(Eigen::MatrixXd::Identity(3, 3), ConeParams(3, 2));
    EXPECT_NEAR(md.F, 2.0, 1e-14);
    EXPECT_LE((md.dF - (2.0 / 3.0) * Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-14);
}

TEST(MatrixDerivative, DiagonalInputGivesDiagonalDerivative) {
    Eigen::MatrixXd u = Eigen::Vector3d(1, 2, 3).asDiagonal();
    const auto md = matrix_derivative(u, ConeParams(3, 2));
    const auto ev = eval_F(std::vector<double>{1, 2, 3}, ConeParams(3, 2));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            EXPECT_NEAR(md.dF(i, j), i == j ? ev.grad[i] : 0.0, 1e-14);
}

TEST(MatrixDerivative, EulerTraceIdentityAndPositivity) {
    std::mt19937_64 rng(21);
    for (int n = 2; n <= 6; ++n)
        for (int p = 1; p <= n; ++p) {
            const ConeParams cp(n, p);
            for (int s = 0; s < 10; ++s) {
                const Eigen::MatrixXd u = support::random_cone_matrix(rng, n, p);
                const auto md = matrix_derivative(u, cp);
                EXPECT_NEAR((md.dF * u).trace(), md.F, 1e-10 * std::max(1.0, md.F));
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(md.dF);
                EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
            }
        }
}

TEST(MatrixDerivative, MatchesEntrywiseFiniteDifferences) {
    std::mt19937_64 rng(23);
    const ConeParams cp(4, 2);
    const Eigen::MatrixXd u = support::random_cone_matrix(rng, 4, 2);
    const auto md = matrix_derivative(u, cp);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) {
            Eigen::MatrixXd e = Eigen::MatrixXd::Zero(4, 4);
            e(i, j) = e(j, i) = 1.0;
            const double d = (matrix_derivative(u + h * e, cp).F - matrix_derivative(u - h * e, cp).F) / (2 * h);
            const double expect = i == j ? md.dF(i, i) : 2.0 * md.dF(i, j);
            EXPECT_NEAR(d, expect, 1e-7);
        }
}

TEST(MatrixDerivative, RotationEquivariance) {
    std::mt19937_64 rng(29);
    for (int s = 0; s < 50; ++s) {
        const int n = 2 + s % 5;
        const int p = 1 + s % n;
        const ConeParams cp(n, p);
        const Eigen::MatrixXd u = support::random_cone_matrix(rng, n, p);
        const Eigen::MatrixXd r = support::random_rotation(rng, n);
        const auto a = matrix_derivative(r.transpose() * u * r, cp);
        const auto b = matrix_derivative(u, cp);
        EXPECT_LE((a.dF - r.transpose() * b.dF * r).norm(), 1e-9);
    }
}

TEST(MatrixDerivative, ConeViolation) {
    Eigen::MatrixXd u = Eigen::Vector3d(-1, 1, 1).asDiagonal();
    EXPECT_THROW(matrix_derivative(u, ConeParams(3, 2)), Error);
    EXPECT_THROW(matrix_derivative(Eigen::MatrixXd::Identity(2, 2), ConeParams(3, 2)), Error);
}

TEST(CheckStructure, OnesPassWithExactGradientSum) {
    const ConeParams cp(5, 3);
    std::vector<Spectrum> s{Spectrum(std::vector<double>(5, 1.0), true)};
    const auto rep = check_structure(s, cp, 1e-9);
    EXPECT_TRUE(rep.passed());
    EXPECT_NEAR(rep.sum_grad.worst_margin, 0.0, 1e-14);
    EXPECT_EQ(rep.pairs, 1u);
    EXPECT_NEAR(rep.concavity.worst_margin, 0.0, 1e-14);
}

TEST(CheckStructure, RandomSamplesPass) {
    std::mt19937_64 rng(31);
    const ConeParams cp(4, 2);
    std::vector<Spectrum> s;
    for (int i = 0; i < 100; ++i) s.emplace_back(support::random_cone_point(rng, 4, 2));
    const auto rep = check_structure(s, cp, 1e-9);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.pairs, 100u * 101u / 2u);
    EXPECT_GE(rep.concavity.worst_margin, -1e-9);
    EXPECT_GT(rep.positivity.worst_margin, 0.0);
}

TEST(CheckStructure, StridedPairsForLargeSampleSets) {
    std::mt19937_64 rng(37);
    const ConeParams cp(3, 2);
    std::vector<Spectrum> s;
    for (int i = 0; i < 300; ++i) s.emplace_back(support::random_cone_point(rng, 3, 2));
    const auto rep = check_structure(s, cp, 1e-9, 1000);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.pairs, 300u * 16u);
}

TEST(Nu0Ratio, OnlyForNegativeEntries) {
    const ConeParams cp(3, 2);
    EXPECT_FALSE(nu0_ratio(std::vector<double>{1, 2, 3}, cp).has_value());
    const auto r = nu0_ratio(std::vector<double>{-0.5, 1, 2}, cp);
    ASSERT_TRUE(r.has_value());
    const auto ev = eval_F(std::vector<double>{-0.5, 1, 2}, cp);
    EXPECT_NEAR(*r, ev.grad[0] / (1.0 + ev.grad[0] + ev.grad[1] + ev.grad[2]), 1e-15);
    EXPECT_GT(*r, 0.0);
}
