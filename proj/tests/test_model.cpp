#include "apsk/errors.hpp"
#include "apsk/model.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace apsk;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) {
        v[i++] = x;
    }
    return v;
}

Vector random_vector(std::mt19937_64& gen, int d, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector v(d);
    for (int j = 0; j < d; ++j) {
        v[j] = u(gen);
    }
    return v;
}

}  // namespace

TEST(Model, LinearDrift) {
    const auto m = make_builtin_model("linear", 1);
    EXPECT_EQ(eval_drift(m, vec({2.0}))[0], -2.0);
    EXPECT_EQ(eval_drift(m, vec({0.0}))[0], 0.0);
}

TEST(Model, SinDriftMatchesFormula) {
    const auto m = make_builtin_model("sin-drift", 1);
    const double q = std::numbers::pi / 2;
    EXPECT_NEAR(eval_drift(m, vec({q}))[0], -q + 1.0, 1e-15);
}

TEST(Model, ScaledIdentityDiffusion) {
    const auto m = make_builtin_model("linear", 3);
    EXPECT_TRUE(eval_diffusion(m, vec({0.3, -2.0, 7.0})).isIdentity(0.0));
    const auto scaled = make_builtin_model("sin-drift", 2, {{"s", 0.5}});
    EXPECT_TRUE(eval_diffusion(scaled, vec({1.0, 2.0})).isApprox(0.5 * Matrix::Identity(2, 2)));
}

TEST(Model, TanhDiffusionRange) {
    const auto m = make_builtin_model("tanh-diffusion", 2);
    EXPECT_TRUE(eval_diffusion(m, vec({0.0, 0.0})).isIdentity(0.0));
    const Matrix big = eval_diffusion(m, vec({50.0, -50.0}));
    EXPECT_DOUBLE_EQ(big(0, 0), 1.5);
    EXPECT_DOUBLE_EQ(big(1, 1), 0.5);
    EXPECT_EQ(big(0, 1), 0.0);
    std::mt19937_64 gen(1);
    for (int k = 0; k < 1000; ++k) {
        const Matrix s = eval_diffusion(m, random_vector(gen, 2, 10.0));
        for (int j = 0; j < 2; ++j) {
            EXPECT_GE(s(j, j), 0.5);
            EXPECT_LE(s(j, j), 1.5);
        }
    }
}

TEST(Model, DiffusionMatrixProduct) {
    EXPECT_TRUE(eval_a(make_builtin_model("linear", 2), vec({1.0, 1.0})).isIdentity(0.0));
    EXPECT_TRUE(eval_a(make_builtin_model("tanh-diffusion", 2), vec({0.0, 0.0})).isIdentity(0.0));
    Matrix s(2, 2);
    s << 1.0, 1.0, 0.0, 1.0;
    const auto m = make_constant_model("test", vec({0.0, 0.0}), s);
    const Matrix a = eval_a(m, vec({0.0, 0.0}));
    EXPECT_EQ(a(0, 0), 2.0);
    EXPECT_EQ(a(0, 1), 1.0);
    EXPECT_EQ(a(1, 0), 1.0);
    EXPECT_EQ(a(1, 1), 1.0);
}

TEST(Model, DimensionMismatchIsUsageError) {
    const auto m = make_builtin_model("linear", 2);
    EXPECT_THROW(eval_drift(m, vec({1.0})), UsageError);
    EXPECT_THROW(eval_diffusion(m, vec({1.0, 2.0, 3.0})), UsageError);
}

TEST(Model, UnknownNamesAndParameters) {
    try {
        make_builtin_model("double-well", 1);
        FAIL() << "expected UsageError";
    } catch (const UsageError& e) {
        const std::string what = e.what();
        for (const auto& name : builtin_model_names()) {
            EXPECT_NE(what.find(name), std::string::npos) << what;
        }
    }
    EXPECT_THROW(make_builtin_model("linear", 1, {{"gamma", 2.0}}), UsageError);
    EXPECT_THROW(make_builtin_model("linear", 0), UsageError);
    EXPECT_THROW(make_builtin_model("linear", kMaxDim + 1), UsageError);
}

TEST(Model, ConstantModelParameters) {
    const auto m = make_builtin_model("constant", 2, {{"c", -0.5}, {"s", 2.0}});
    EXPECT_TRUE(m.is_constant_drift);
    EXPECT_TRUE(m.is_constant_diffusion);
    EXPECT_TRUE(eval_drift(m, vec({3.0, 4.0})).isApprox(vec({-0.5, -0.5})));
    EXPECT_TRUE(eval_diffusion(m, vec({3.0, 4.0})).isApprox(2.0 * Matrix::Identity(2, 2)));
}

TEST(Model, InitialCondition) {
    const auto ic = InitialCondition::make(vec({1.0, 2.0}), vec({0.0, -1.0}));
    EXPECT_EQ(ic.q0_limit, ic.q0);
    EXPECT_THROW(InitialCondition::make(vec({1.0}), vec({0.0, 1.0})), UsageError);
    EXPECT_THROW(InitialCondition::make(vec({NAN}), vec({0.0})), UsageError);
    const auto z = InitialCondition::zero(3);
    EXPECT_TRUE(z.q0.isZero() && z.p0.isZero() && z.q0_limit.isZero());
}

TEST(Model, QPRoundTrip) {
    const PhaseState s{vec({1.0, -2.0}), vec({0.25, 3.0})};
    const double eps = 0.125;
    const auto qp = to_qp(s, eps);
    EXPECT_TRUE(qp.Q.isApprox(s.q + eps * s.p));
    EXPECT_TRUE(qp.P.isApprox(eps * s.p));
    const auto back = from_qp(qp, eps);
    EXPECT_TRUE(back.q.isApprox(s.q, 1e-15));
    EXPECT_TRUE(back.p.isApprox(s.p, 1e-15));
}

// Properties over all built-ins, probed at random points.

class BuiltinModel : public ::testing::TestWithParam<std::string> {};

TEST_P(BuiltinModel, DiffusionMatrixSymmetricPsd) {
    const auto m = make_builtin_model(GetParam(), 3);
    std::mt19937_64 gen(7);
    for (int k = 0; k < 1000; ++k) {
        const Matrix a = eval_a(m, random_vector(gen, 3, 20.0));
        EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-14);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es{Eigen::Matrix3d(a)};
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST_P(BuiltinModel, LipschitzProbe) {
    const auto m = make_builtin_model(GetParam(), 3);
    const double L = m.lipschitz_bound;
    std::mt19937_64 gen(11);
    for (int k = 0; k < 1000; ++k) {
        const Vector q1 = random_vector(gen, 3, 10.0);
        const Vector q2 = k % 2 == 0 ? random_vector(gen, 3, 10.0) : Vector(q1 + random_vector(gen, 3, 1e-3));
        const double dq = (q2 - q1).norm();
        EXPECT_LE((eval_drift(m, q2) - eval_drift(m, q1)).norm(), L * dq * (1 + 1e-12) + 1e-15);
        EXPECT_LE((eval_diffusion(m, q2) - eval_diffusion(m, q1)).norm(), L * dq * (1 + 1e-12) + 1e-15);
    }
}

TEST_P(BuiltinModel, BoundedDerivativesByFiniteDifferences) {
    const auto m = make_builtin_model(GetParam(), 2);
    std::mt19937_64 gen(13);
    const double h = 1e-5;
    for (int k = 0; k < 200; ++k) {
        const Vector q = random_vector(gen, 2, 10.0);
        for (int j = 0; j < 2; ++j) {
            Vector e = Vector::Zero(2);
            e[j] = h;
            const Vector df = (eval_drift(m, q + e) - eval_drift(m, q - e)) / (2 * h);
            const Vector d2f = (eval_drift(m, q + e) - 2 * eval_drift(m, q) + eval_drift(m, q - e)) / (h * h);
            EXPECT_LE(df.norm(), m.lipschitz_bound + 1e-6);
            EXPECT_LE(d2f.norm(), 2.0);
        }
        EXPECT_LE(eval_diffusion(m, q).cwiseAbs().maxCoeff(), m.diffusion_bound);
    }
}

TEST_P(BuiltinModel, ConstantFlagsAreHonest) {
    const auto m = make_builtin_model(GetParam(), 2);
    std::mt19937_64 gen(17);
    const Vector q0 = random_vector(gen, 2, 5.0);
    for (int k = 0; k < 200; ++k) {
        const Vector q = random_vector(gen, 2, 50.0);
        if (m.is_constant_diffusion) {
            EXPECT_EQ(eval_diffusion(m, q), eval_diffusion(m, q0));
        }
        if (m.is_constant_drift) {
            EXPECT_EQ(eval_drift(m, q), eval_drift(m, q0));
        }
    }
}

TEST_P(BuiltinModel, DiagonalShortcutMatchesMatrix) {
    const auto m = make_builtin_model(GetParam(), 3);
    if (!m.diffusion_diagonal) {
        GTEST_SKIP() << "no diagonal shortcut";
    }
    std::mt19937_64 gen(19);
    for (int k = 0; k < 200; ++k) {
        const Vector q = random_vector(gen, 3, 5.0);
        const Matrix s = eval_diffusion(m, q);
        EXPECT_EQ(Matrix(s.diagonal().asDiagonal()), s);
        EXPECT_EQ(m.diffusion_diagonal(q), Vector(s.diagonal()));
    }
}

INSTANTIATE_TEST_SUITE_P(All, BuiltinModel, ::testing::ValuesIn(builtin_model_names()),
                         [](const auto& info) {
                             std::string n = info.param;
                             std::replace(n.begin(), n.end(), '-', '_');
                             return n;
                         });
