#include "apsk/errors.hpp"
#include "apsk/model.hpp"
#include "apsk/noise.hpp"
#include "apsk/schemes.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace apsk;

namespace {

Vector scalar(double x) {
    Vector v(1);
    v << x;
    return v;
}

ModelSpec zero_model(int d) {
    return make_constant_model("zero", Vector::Zero(d), Matrix::Zero(d, d));
}

ModelSpec sine_model() {
    ModelSpec m;
    m.name = "sine";
    m.dimension = 1;
    m.drift = [](const Vector& q) -> Vector { return q.array().sin().matrix(); };
    m.diffusion = [](const Vector&) -> Matrix { return Matrix::Identity(1, 1); };
    return m;
}

double sup_q_distance(const Trajectory& a, const Trajectory& b) {
    double d = 0;
    for (std::size_t n = 0; n < a.states.size(); ++n) {
        d = std::max(d, (a.states[n].q - b.states[n].q).cwiseAbs().maxCoeff());
    }
    return d;
}

double sup_q(const Trajectory& a) {
    double m = 0;
    for (const auto& s : a.states) {
        m = std::max(m, s.q.cwiseAbs().maxCoeff());
    }
    return m;
}

SimConfig sim(double eps, double T, std::size_t N, const InitialCondition& ic) {
    SimConfig c;
    c.eps = eps;
    c.horizon = T;
    c.steps = N;
    c.initial = ic;
    return c;
}

}  // namespace

TEST(SchemeNames, RoundTrip) {
    for (const auto& n : scheme_names()) {
        const auto s = parse_scheme(n);
        ASSERT_TRUE(s);
        EXPECT_EQ(scheme_name(*s), n);
    }
    EXPECT_FALSE(parse_scheme("milstein"));
    EXPECT_TRUE(uses_integral(Scheme::Exponential));
    EXPECT_FALSE(uses_integral(Scheme::SemiImplicit));
}

TEST(SemiImplicit, Equilibrium) {
    const PhaseState s{scalar(1.5), scalar(0.0)};
    const auto out = step_semi_implicit(s, zero_model(1), 0.3, 0.1, scalar(0.7));
    EXPECT_EQ(out.q[0], 1.5);
    EXPECT_EQ(out.p[0], 0.0);
}

TEST(SemiImplicit, HandEvaluated) {
    const auto m = make_builtin_model("linear", 1);
    const auto out = step_semi_implicit({scalar(0.0), scalar(0.0)}, m, 1.0, 1.0, scalar(1.0));
    EXPECT_DOUBLE_EQ(out.p[0], 0.5);
    EXPECT_DOUBLE_EQ(out.q[0], 0.5);
}

TEST(SemiImplicit, SmallEpsReducesToEulerMaruyama) {
    const auto m = make_builtin_model("tanh-diffusion", 2);
    Vector q(2), db(2);
    q << 0.4, -1.2;
    db << 0.13, -0.07;
    const auto out = step_semi_implicit({q, Vector::Zero(2)}, m, 1e-8, 0.1, db);
    const auto em = step_euler_maruyama(q, m, 0.1, db);
    EXPECT_LE((out.q - em).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(1e-8 * out.p.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Exponential, PureMomentumRelaxation) {
    const double eps = 0.5, dt = 0.3, E = std::exp(-dt / (eps * eps));
    IncrementPair pair{scalar(0.9), scalar(-0.4)};
    const auto out = step_exponential({scalar(1.0), scalar(2.0)}, zero_model(1), eps, dt, pair);
    EXPECT_NEAR(out.q[0], 1.0 + eps * (1 - E) * 2.0, 1e-15);
    EXPECT_NEAR(out.p[0], E * 2.0, 1e-15);
}

TEST(Exponential, HandEvaluated) {
    // eps = dt = 1, q = p = 0, f(0) = 0, sigma = 1, pair (1, c12).
    const double c12 = 1 - std::exp(-1.0);
    const auto out =
        step_exponential({scalar(0.0), scalar(0.0)}, make_builtin_model("linear", 1), 1.0, 1.0, {scalar(1.0), scalar(c12)});
    EXPECT_NEAR(out.q[0], std::exp(-1.0), 1e-15);
    EXPECT_NEAR(out.p[0], c12, 1e-15);
}

TEST(Exponential, SmallEpsReducesToEulerMaruyama) {
    const auto m = make_builtin_model("sin-drift", 1);
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        const auto pair = sample_pair(rng, 1e-8, 0.01, 1);
        const auto out = step_exponential({scalar(0.8), scalar(0.0)}, m, 1e-8, 0.01, pair);
        const auto em = step_euler_maruyama(scalar(0.8), m, 0.01, pair.dbeta);
        EXPECT_LE(std::abs(out.q[0] - em[0]), 1e-6);
    }
}

TEST(EulerMaruyama, HandEvaluated) {
    const auto noise_only = make_constant_model("w", Vector::Zero(1), Matrix::Identity(1, 1));
    EXPECT_DOUBLE_EQ(step_euler_maruyama(scalar(0.25), noise_only, 0.1, scalar(0.5))[0], 0.75);
    const auto damped = make_builtin_model("linear", 1, {{"s", 0.0}});
    EXPECT_DOUBLE_EQ(step_euler_maruyama(scalar(2.0), damped, 0.5, scalar(3.0))[0], 1.0);
    const double h = std::numbers::pi / 2;
    EXPECT_NEAR(step_euler_maruyama(scalar(h), sine_model(), 0.1, scalar(0.2))[0], h + 0.1 + 0.2, 1e-15);
}

TEST(QP, SemiImplicitHandEvaluated) {
    const auto m = make_builtin_model("linear", 1);
    const auto out = step_semi_implicit_qp({scalar(0.0), scalar(0.0)}, m, 1.0, 1.0, scalar(1.0));
    EXPECT_DOUBLE_EQ(out.Q[0], 1.0);
    EXPECT_DOUBLE_EQ(out.P[0], 0.5);
    EXPECT_DOUBLE_EQ(out.Q[0] - out.P[0], 0.5);
}

TEST(QP, ExponentialHandEvaluated) {
    const double c12 = 1 - std::exp(-1.0);
    const auto out = step_exponential_qp({scalar(0.0), scalar(0.0)}, make_builtin_model("linear", 1), 1.0, 1.0,
                                         {scalar(1.0), scalar(c12)});
    EXPECT_DOUBLE_EQ(out.Q[0], 1.0);
    EXPECT_NEAR(out.P[0], c12, 1e-15);
    EXPECT_NEAR(out.Q[0] - out.P[0], std::exp(-1.0), 1e-15);
}

TEST(QP, PositionUpdateIsEulerMaruyamaWhenMomentumVanishes) {
    const auto m = make_builtin_model("tanh-diffusion", 2);
    Vector Q(2), db(2);
    Q << 0.3, -0.9;
    db << 0.2, 0.05;
    const auto em = step_euler_maruyama(Q, m, 0.05, db);
    const auto si = step_semi_implicit_qp({Q, Vector::Zero(2)}, m, 1e-8, 0.05, db);
    EXPECT_EQ(si.Q, em);
    EXPECT_LE(si.P.cwiseAbs().maxCoeff(), 1e-6);
    const auto ex = step_exponential_qp({Q, Vector::Zero(2)}, m, 1e-8, 0.05, {db, Vector::Zero(2)});
    EXPECT_EQ(ex.Q, em);
    EXPECT_LE(ex.P.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QP, SingleStepConsistency) {
    const auto m = make_builtin_model("tanh-diffusion", 3);
    Rng rng(21);
    for (double eps : {1.0, 0.1, 1e-3}) {
        for (int k = 0; k < 50; ++k) {
            Vector q(3), p(3);
            for (int j = 0; j < 3; ++j) {
                q[j] = 4 * rng.uniform() - 2;
                p[j] = 4 * rng.uniform() - 2;
            }
            const auto pair = sample_pair(rng, eps, 0.02, 3);
            const PhaseState s{q, p};
            const auto a = step_semi_implicit(s, m, eps, 0.02, pair.dbeta);
            const auto b = step_semi_implicit_qp(to_qp(s, eps), m, eps, 0.02, pair.dbeta);
            EXPECT_LE((a.q - (b.Q - b.P)).cwiseAbs().maxCoeff(), 1e-12 * (1 + a.q.cwiseAbs().maxCoeff()));
            const auto c = step_exponential(s, m, eps, 0.02, pair);
            const auto d = step_exponential_qp(to_qp(s, eps), m, eps, 0.02, pair);
            EXPECT_LE((c.q - (d.Q - d.P)).cwiseAbs().maxCoeff(), 1e-12 * (1 + c.q.cwiseAbs().maxCoeff()));
        }
    }
}

TEST(Integrate, ZeroStepsReturnsInitialState) {
    const auto m = make_builtin_model("linear", 2);
    Vector q0(2), p0(2);
    q0 << 1, 2;
    p0 << 3, 4;
    const auto ic = InitialCondition::make(q0, p0);
    NoisePath empty = generate_path(1, 0, 0.5, 0.1, 0, 2);
    auto cfg = sim(0.5, 1.0, 1, ic);
    cfg.steps = 0;
    for (const auto& name : scheme_names()) {
        const auto t = integrate(*parse_scheme(name), m, cfg, empty);
        ASSERT_EQ(t.states.size(), 1u);
        EXPECT_EQ(t.states[0].q, q0);
    }
}

TEST(Integrate, MismatchesAreUsageErrors) {
    const auto m = make_builtin_model("linear", 1);
    const auto ic = InitialCondition::zero(1);
    const auto path = generate_path(1, 0, 0.5, 0.1, 10, 1);
    EXPECT_THROW(integrate(Scheme::SemiImplicit, m, sim(0.5, 1.0, 20, ic), path), UsageError);
    EXPECT_THROW(integrate(Scheme::SemiImplicit, m, sim(0.5, 2.0, 10, ic), path), UsageError);
    EXPECT_THROW(integrate(Scheme::Exponential, m, sim(0.25, 1.0, 10, ic), path), UsageError);
    EXPECT_THROW(integrate(Scheme::ExponentialQP, m, sim(0.25, 1.0, 10, ic), path), UsageError);
    EXPECT_NO_THROW(integrate(Scheme::SemiImplicit, m, sim(0.25, 1.0, 10, ic), path));
    EXPECT_THROW(integrate(Scheme::SemiImplicit, make_builtin_model("linear", 2), sim(0.5, 1.0, 10, InitialCondition::zero(2)), path),
                 UsageError);
}

TEST(Integrate, BlowUpReportsStep) {
    ModelSpec m;
    m.name = "explosive";
    m.dimension = 1;
    m.drift = [](const Vector& q) -> Vector { return q * 1e200; };
    m.diffusion = [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
    const auto ic = InitialCondition::make(scalar(1.0), scalar(0.0));
    const auto path = generate_path(1, 0, 1.0, 0.1, 10, 1);
    try {
        integrate(Scheme::SemiImplicit, m, sim(1.0, 1.0, 10, ic), path);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LE(e.step(), 10u);
    }
}

TEST(Integrate, Deterministic) {
    const auto m = make_builtin_model("tanh-diffusion", 2);
    const auto ic = InitialCondition::make(Vector::Constant(2, 0.5), Vector::Constant(2, 1.0));
    const auto path = generate_path(4, 4, 0.1, 0.01, 100, 2);
    for (const auto& name : scheme_names()) {
        const auto a = integrate(*parse_scheme(name), m, sim(0.1, 1.0, 100, ic), path);
        const auto b = integrate(*parse_scheme(name), m, sim(0.1, 1.0, 100, ic), path);
        for (std::size_t n = 0; n < a.states.size(); ++n) {
            ASSERT_EQ(a.states[n].q, b.states[n].q);
            ASSERT_EQ(a.states[n].p, b.states[n].p);
        }
    }
}

TEST(Integrate, EulerMaruyamaStartsFromLimitInitialData) {
    const auto m = make_builtin_model("linear", 1);
    auto ic = InitialCondition::make(scalar(1.0), scalar(5.0));
    ic.q0_limit = scalar(-1.0);
    const auto path = generate_path(4, 4, 0.1, 0.1, 10, 1);
    const auto t = integrate(Scheme::EulerMaruyama, m, sim(0.1, 1.0, 10, ic), path);
    EXPECT_EQ(t.states[0].q[0], -1.0);
    EXPECT_EQ(t.states[3].p[0], 0.0);
}

TEST(Integrate, QPTrajectoriesMatch) {
    const auto ic = InitialCondition::make(Vector::Constant(2, 2.0), Vector::Constant(2, 1.0));
    for (const auto& name : builtin_model_names()) {
        const auto m = make_builtin_model(name, 2);
        for (double eps : {1.0, 1e-2, 1e-5}) {
            for (std::uint64_t k = 0; k < 20; ++k) {
                const auto path = generate_path(77, k, eps, 0.01, 100, 2);
                const auto cfg = sim(eps, 1.0, 100, ic);
                for (auto [plain, qp] : {std::pair{Scheme::SemiImplicit, Scheme::SemiImplicitQP},
                                         std::pair{Scheme::Exponential, Scheme::ExponentialQP}}) {
                    const auto a = integrate(plain, m, cfg, path);
                    const auto b = integrate(qp, m, cfg, path);
                    for (std::size_t n = 0; n <= 100; ++n) {
                        const double scale = 1 + a.states[n].q.cwiseAbs().maxCoeff();
                        ASSERT_LE((a.states[n].q - b.states[n].q).cwiseAbs().maxCoeff(), 1e-12 * scale)
                            << name << " eps=" << eps << " n=" << n;
                    }
                }
            }
        }
    }
}

TEST(Integrate, AsymptoticPreservingLimit) {
    const auto ic = InitialCondition::make(Vector::Constant(2, 0.5), Vector::Zero(2));
    for (const auto& name : builtin_model_names()) {
        const auto m = make_builtin_model(name, 2);
        for (std::uint64_t k = 0; k < 20; ++k) {
            const auto path = generate_path(5, k, 1e-8, 0.01, 100, 2);
            const auto cfg = sim(1e-8, 1.0, 100, ic);
            const auto em = integrate(Scheme::EulerMaruyama, m, cfg, path);
            for (const auto& scheme : scheme_names()) {
                const auto t = integrate(*parse_scheme(scheme), m, cfg, path);
                EXPECT_LE(sup_q_distance(t, em), 1e-6 * (1 + sup_q(em))) << name << ' ' << scheme;
            }
        }
    }
}

TEST(Integrate, UniformlyStableAcrossEps) {
    for (const auto& name : builtin_model_names()) {
        const auto m = make_builtin_model(name, 1);
        const auto ic = InitialCondition::make(scalar(2.0), scalar(1.0));
        for (double eps : {1.0, 1e-2, 1e-4, 1e-6}) {
            double max_q = 0, max_ep = 0;
            for (std::uint64_t k = 0; k < 1000; ++k) {
                const auto path = generate_path(6, k, eps, 0.01, 100, 1);
                for (Scheme s : {Scheme::SemiImplicit, Scheme::Exponential}) {
                    const auto t = integrate(s, m, sim(eps, 1.0, 100, ic), path);
                    for (const auto& st : t.states) {
                        max_q = std::max(max_q, std::abs(st.q[0]));
                        max_ep = std::max(max_ep, eps * std::abs(st.p[0]));
                    }
                }
            }
            EXPECT_LT(max_q, 20.0) << name << " eps=" << eps;
            EXPECT_LT(max_ep, 10.0) << name << " eps=" << eps;
        }
    }
}

TEST(ExactConstant, HandEvaluated) {
    const auto path = generate_path(1, 1, 1.0, 1.0, 1, 1);
    const auto t = exact_constant_solution(scalar(1.0), Matrix::Zero(1, 1), 1.0, InitialCondition::zero(1), path);
    EXPECT_NEAR(t.states[1].q[0], std::exp(-1.0), 1e-15);
}

TEST(ExactConstant, PureRelaxation) {
    const double eps = 0.3, dt = 0.05;
    const auto path = generate_path(1, 1, eps, dt, 20, 1);
    const auto ic = InitialCondition::make(scalar(1.0), scalar(2.0));
    const auto t = exact_constant_solution(scalar(0.0), Matrix::Zero(1, 1), eps, ic, path);
    for (std::size_t n = 0; n <= 20; ++n) {
        const double En = std::exp(-static_cast<double>(n) * dt / (eps * eps));
        EXPECT_NEAR(t.states[n].p[0], 2.0 * En, 1e-14);
        EXPECT_NEAR(t.states[n].q[0], 1.0 + eps * (1 - En) * 2.0, 1e-14);
    }
}

TEST(ExactConstant, ExponentialSchemeIsExact) {
    Vector f0(2), q0(2), p0(2);
    f0 << 1.0, -0.5;
    q0 << 0.2, 0.1;
    p0 << 1.0, -1.0;
    const auto m = make_constant_model("c", f0, 0.7 * Matrix::Identity(2, 2));
    for (double eps : {1.0, 1e-3}) {
        for (std::uint64_t k = 0; k < 10; ++k) {
            const auto path = generate_path(2, k, eps, 0.01, 100, 2);
            const auto ic = InitialCondition::make(q0, p0);
            const auto a = integrate(Scheme::Exponential, m, sim(eps, 1.0, 100, ic), path);
            const auto b = exact_constant_solution(m, eps, ic, path);
            for (std::size_t n = 0; n <= 100; ++n) {
                const double scale = a.states[n].q.cwiseAbs().maxCoeff();
                EXPECT_LE((a.states[n].q - b.states[n].q).cwiseAbs().maxCoeff(), 1e-12 * scale);
            }
        }
    }
    EXPECT_THROW(exact_constant_solution(make_builtin_model("linear", 2), 1.0, InitialCondition::zero(2),
                                         generate_path(2, 0, 1.0, 0.1, 10, 2)),
                 UsageError);
}

TEST(Reference, ConstantModelIndependentOfRefinement) {
    const auto m = make_builtin_model("constant", 1, {{"c", 0.5}});
    const auto ic = InitialCondition::make(scalar(0.0), scalar(1.0));
    const double eps = 0.2;
    const std::size_t coarse = 8;
    for (std::size_t r : {1u, 4u, 32u}) {
        const auto fine = generate_path(3, 0, eps, 1.0 / (coarse * 32), coarse * 32, 1);
        const auto level = coarsen_path(fine, 32 / r, eps);
        const auto ref = reference_solution(m, eps, 1.0, coarse, r, ic, level);
        const auto exact = exact_constant_solution(m, eps, ic, coarsen_path(fine, 32, eps));
        for (std::size_t n = 0; n <= coarse; ++n) {
            EXPECT_NEAR(ref.states[n].q[0], exact.states[n].q[0], 1e-12 * (1 + std::abs(exact.states[n].q[0])));
        }
    }
}

TEST(Reference, SelfConvergence) {
    // L2 change of the terminal reference when refine_ratio doubles.
    const auto m = make_builtin_model("tanh-diffusion", 1);
    const auto ic = InitialCondition::make(scalar(2.0), scalar(1.0));
    const double eps = 0.1;
    const std::size_t coarse = 4, top = 64;
    auto change = [&](std::size_t r) {
        double s = 0;
        for (std::uint64_t k = 0; k < 300; ++k) {
            const auto fine = generate_path(10, k, eps, 1.0 / (coarse * top), coarse * top, 1);
            const auto a = reference_solution(m, eps, 1.0, coarse, r, ic, coarsen_path(fine, top / r, eps));
            const auto b = reference_solution(m, eps, 1.0, coarse, 2 * r, ic, coarsen_path(fine, top / (2 * r), eps));
            const double d = a.states[coarse].q[0] - b.states[coarse].q[0];
            s += d * d;
        }
        return std::sqrt(s / 300);
    };
    const double d2 = change(2), d8 = change(8), d32 = change(32);
    EXPECT_LT(d8, d2);
    EXPECT_LT(d32, d8);
    EXPECT_LT(d32, d2 / 4);
}

TEST(Reference, DeterministicOscillatorClosedForm) {
    // eps = 1, f = -q, sigma = 0: q'' + q' + q = 0 with q(0) = 1, q'(0) = 0.
    const auto m = make_builtin_model("linear", 1, {{"s", 0.0}});
    const auto ic = InitialCondition::make(scalar(1.0), scalar(0.0));
    const double w = std::sqrt(3.0) / 2;
    const double exact = std::exp(-0.5) * (std::cos(w) + std::sin(w) / (2 * w));
    double prev = INFINITY;
    for (std::size_t r : {16u, 64u, 256u, 1024u}) {
        const auto fine = generate_path(1, 0, 1.0, 0.25 / r, 4 * r, 1);
        const auto ref = reference_solution(m, 1.0, 1.0, 4, r, ic, fine);
        const double err = std::abs(ref.states[4].q[0] - exact);
        EXPECT_LT(err, prev);
        prev = err;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(Reference, OrnsteinUhlenbeckMean) {
    // With noise the mean still follows the deterministic oscillator.
    const auto m = make_builtin_model("linear", 1);
    const auto ic = InitialCondition::make(scalar(1.0), scalar(0.0));
    const double w = std::sqrt(3.0) / 2;
    const double exact = std::exp(-0.5) * (std::cos(w) + std::sin(w) / (2 * w));
    const std::size_t M = 4000;
    double s = 0, ss = 0;
    for (std::uint64_t k = 0; k < M; ++k) {
        const auto fine = generate_path(12, k, 1.0, 1.0 / 256, 256, 1);
        const double q = reference_solution(m, 1.0, 1.0, 4, 64, ic, fine).states[4].q[0];
        s += q, ss += q * q;
    }
    const double mean = s / M, se = std::sqrt((ss / M - mean * mean) / M);
    EXPECT_LE(std::abs(mean - exact), 4 * se + 1e-3);
}
