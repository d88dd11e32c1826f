#include "apsk/schemes.hpp"

#include "apsk/errors.hpp"
#include "apsk/stepper.hpp"

#include <array>
#include <cmath>

namespace apsk {

namespace {

using ConstMap = Eigen::Map<const Vector>;

constexpr std::array<std::pair<Scheme, std::string_view>, 5> kSchemeTable{{
    {Scheme::SemiImplicit, "semi-implicit"},
    {Scheme::Exponential, "exponential"},
    {Scheme::EulerMaruyama, "euler-maruyama"},
    {Scheme::SemiImplicitQP, "semi-implicit-qp"},
    {Scheme::ExponentialQP, "exponential-qp"},
}};

void check_finite(const Vector& a, const Vector& b, std::size_t step_index) {
    if (!a.allFinite() || !b.allFinite()) {
        throw IntegrationError("non-finite state", step_index + 1);
    }
}

void check_step_args(double eps, double dt) {
    if (!(eps > 0.0) || !(dt > 0.0)) {
        throw UsageError("step: eps and dt must be positive");
    }
}

void check_vector(const ModelSpec& model, const Vector& v, const char* what) {
    if (v.size() != model.dimension) {
        throw UsageError(std::string("step: ") + what + " has wrong dimension");
    }
}

}  // namespace

std::string_view scheme_name(Scheme scheme) {
    for (const auto& [s, name] : kSchemeTable) {
        if (s == scheme) {
            return name;
        }
    }
    return "unknown";
}

std::optional<Scheme> parse_scheme(std::string_view name) {
    for (const auto& [s, n] : kSchemeTable) {
        if (n == name) {
            return s;
        }
    }
    return std::nullopt;
}

const std::vector<std::string>& scheme_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& entry : kSchemeTable) {
            out.emplace_back(entry.second);
        }
        return out;
    }();
    return names;
}

double x_minus_one_minus_exp_neg(double x) {
    if (x < 0.1) {
        // x^2/2 - x^3/6 + x^4/24 - ...
        double term = x * x / 2.0;
        double acc = 0.0;
        for (int k = 3; k < 20; ++k) {
            acc += term;
            term *= -x / k;
        }
        return acc;
    }
    return x - one_minus_exp_neg(x);
}

StepCoefficients::StepCoefficients(double eps_, double dt_) : eps(eps_), dt(dt_) {
    check_step_args(eps, dt);
    const double e2 = eps * eps;
    const double x = dt / e2;
    const double one_minus = one_minus_exp_neg(x);
    inv_eps = 1.0 / eps;
    decay = std::exp(-x);
    eps_one_minus = eps * one_minus;
    eps2_one_minus = e2 * one_minus;
    drift_weight = e2 * x_minus_one_minus_exp_neg(x);
    damping = 1.0 / (1.0 + x);
}

Stepper::Stepper(Scheme scheme, const ModelSpec& model, double eps, double dt)
    : scheme_(scheme), model_(model), c_(eps, dt) {}

void Stepper::load(const InitialCondition& ic, Vector& a, Vector& b) const {
    if (ic.q0.size() != model_.dimension || ic.p0.size() != model_.dimension) {
        throw UsageError("initial condition dimension does not match model '" + model_.name + "'");
    }
    switch (scheme_) {
        case Scheme::SemiImplicit:
        case Scheme::Exponential:
            a = ic.q0;
            b = ic.p0;
            break;
        case Scheme::SemiImplicitQP:
        case Scheme::ExponentialQP:
            a = ic.q0 + c_.eps * ic.p0;
            b = c_.eps * ic.p0;
            break;
        case Scheme::EulerMaruyama:
            a = ic.q0_limit;
            b = Vector::Zero(model_.dimension);
            break;
    }
}

PhaseState Stepper::unload(const Vector& a, const Vector& b) const {
    switch (scheme_) {
        case Scheme::SemiImplicitQP:
        case Scheme::ExponentialQP:
            return {a - b, b * c_.inv_eps};
        default:
            return {a, b};
    }
}

Vector Stepper::position(const Vector& a, const Vector& b) const {
    if (scheme_ == Scheme::SemiImplicitQP || scheme_ == Scheme::ExponentialQP) {
        return a - b;
    }
    return a;
}

namespace {

// sigma(q) applied to one or two vectors, through the diagonal shortcut when
// the model provides one.
class SigmaAt {
public:
    SigmaAt(const ModelSpec& model, const Vector& q) : diagonal_(static_cast<bool>(model.diffusion_diagonal)) {
        if (diagonal_) {
            diag_ = model.diffusion_diagonal(q);
        } else {
            full_ = model.diffusion(q);
        }
    }

    template <class V>
    Vector operator*(const V& v) const {
        if (diagonal_) {
            return diag_.cwiseProduct(v);
        }
        return full_ * v;
    }

private:
    bool diagonal_;
    Vector diag_;
    Matrix full_;
};

}  // namespace

void Stepper::advance(Vector& a, Vector& b, const double* dbeta_ptr, const double* integral_ptr,
                      std::size_t n) const {
    const int d = model_.dimension;
    const ConstMap dbeta(dbeta_ptr, d);
    switch (scheme_) {
        case Scheme::SemiImplicit: {
            const Vector f = model_.drift(a);
            const SigmaAt sigma(model_, a);
            b = c_.damping * (b + c_.dt * c_.inv_eps * f + c_.inv_eps * (sigma * dbeta));
            a += c_.dt * c_.inv_eps * b;
            break;
        }
        case Scheme::Exponential: {
            const ConstMap integral(integral_ptr, d);
            const Vector f = model_.drift(a);
            const SigmaAt sigma(model_, a);
            const Vector noise_q = sigma * (dbeta - integral);
            const Vector noise_p = sigma * integral;
            a += c_.eps_one_minus * b + c_.drift_weight * f + noise_q;
            b = c_.decay * b + c_.eps_one_minus * f + c_.inv_eps * noise_p;
            break;
        }
        case Scheme::EulerMaruyama: {
            const Vector f = model_.drift(a);
            const SigmaAt sigma(model_, a);
            a += c_.dt * f + sigma * dbeta;
            break;
        }
        case Scheme::SemiImplicitQP: {
            const Vector q = a - b;
            const SigmaAt sigma(model_, q);
            const Vector forcing = c_.dt * model_.drift(q) + sigma * dbeta;
            a += forcing;
            b = c_.damping * (b + forcing);
            break;
        }
        case Scheme::ExponentialQP: {
            const ConstMap integral(integral_ptr, d);
            const Vector q = a - b;
            const Vector f = model_.drift(q);
            const SigmaAt sigma(model_, q);
            a += c_.dt * f + sigma * dbeta;
            b = c_.decay * b + c_.eps2_one_minus * f + sigma * integral;
            break;
        }
    }
    check_finite(a, b, n);
}

PhaseState step_semi_implicit(const PhaseState& s, const ModelSpec& model, double eps, double dt,
                              const Vector& dbeta, std::size_t step_index) {
    check_vector(model, s.q, "q");
    check_vector(model, dbeta, "dbeta");
    const Stepper stepper(Scheme::SemiImplicit, model, eps, dt);
    PhaseState out = s;
    stepper.advance(out.q, out.p, dbeta.data(), nullptr, step_index);
    return out;
}

PhaseState step_exponential(const PhaseState& s, const ModelSpec& model, double eps, double dt,
                            const IncrementPair& pair, std::size_t step_index) {
    check_vector(model, s.q, "q");
    check_vector(model, pair.dbeta, "dbeta");
    check_vector(model, pair.integral, "integral");
    const Stepper stepper(Scheme::Exponential, model, eps, dt);
    PhaseState out = s;
    stepper.advance(out.q, out.p, pair.dbeta.data(), pair.integral.data(), step_index);
    return out;
}

Vector step_euler_maruyama(const Vector& q, const ModelSpec& model, double dt, const Vector& dbeta,
                           std::size_t step_index) {
    check_vector(model, q, "q");
    check_vector(model, dbeta, "dbeta");
    const Stepper stepper(Scheme::EulerMaruyama, model, 1.0, dt);
    Vector a = q;
    Vector unused = Vector::Zero(model.dimension);
    stepper.advance(a, unused, dbeta.data(), nullptr, step_index);
    return a;
}

QPState step_semi_implicit_qp(const QPState& s, const ModelSpec& model, double eps, double dt,
                              const Vector& dbeta, std::size_t step_index) {
    check_vector(model, s.Q, "Q");
    check_vector(model, dbeta, "dbeta");
    const Stepper stepper(Scheme::SemiImplicitQP, model, eps, dt);
    QPState out = s;
    stepper.advance(out.Q, out.P, dbeta.data(), nullptr, step_index);
    return out;
}

QPState step_exponential_qp(const QPState& s, const ModelSpec& model, double eps, double dt,
                            const IncrementPair& pair, std::size_t step_index) {
    check_vector(model, s.Q, "Q");
    check_vector(model, pair.dbeta, "dbeta");
    check_vector(model, pair.integral, "integral");
    const Stepper stepper(Scheme::ExponentialQP, model, eps, dt);
    QPState out = s;
    stepper.advance(out.Q, out.P, pair.dbeta.data(), pair.integral.data(), step_index);
    return out;
}

namespace {

void check_noise(Scheme scheme, const ModelSpec& model, double eps, const NoisePath& noise) {
    if (noise.dimension != model.dimension) {
        throw UsageError("noise path dimension does not match model '" + model.name + "'");
    }
    if (uses_integral(scheme) && noise.eps != eps) {
        throw UsageError("scheme '" + std::string(scheme_name(scheme)) + "' needs a path sampled at eps=" +
                         std::to_string(eps) + ", got eps=" + std::to_string(noise.eps));
    }
}

}  // namespace

Trajectory integrate(Scheme scheme, const ModelSpec& model, const SimConfig& config, const NoisePath& noise) {
    if (config.horizon <= 0.0) {
        throw UsageError("integrate: horizon must be positive");
    }
    Trajectory traj;
    if (config.steps == 0) {
        traj.dt = 0.0;
        traj.states.push_back({config.initial.q0, config.initial.p0});
        if (scheme == Scheme::EulerMaruyama) {
            traj.states.back() = {config.initial.q0_limit, Vector::Zero(config.initial.q0.size())};
        }
        return traj;
    }
    if (noise.steps != config.steps) {
        throw UsageError("integrate: noise has " + std::to_string(noise.steps) + " steps, config expects " +
                         std::to_string(config.steps));
    }
    const double dt = config.dt();
    if (std::abs(noise.dt - dt) > 1e-12 * dt) {
        throw UsageError("integrate: noise step size does not match T/N");
    }
    check_noise(scheme, model, config.eps, noise);

    const Stepper stepper(scheme, model, config.eps, dt);
    traj.dt = dt;
    traj.states.reserve(config.steps + 1);
    stepper.run(config.initial, noise, [&](std::size_t, const Vector& a, const Vector& b) {
        traj.states.push_back(stepper.unload(a, b));
    });
    return traj;
}

Trajectory reference_solution(const ModelSpec& model, double eps, double horizon, std::size_t coarse_steps,
                              std::size_t refine_ratio, const InitialCondition& initial,
                              const NoisePath& fine_noise) {
    if (coarse_steps == 0 || refine_ratio == 0) {
        throw UsageError("reference_solution: coarse_steps and refine_ratio must be positive");
    }
    if (fine_noise.steps != coarse_steps * refine_ratio) {
        throw UsageError("reference_solution: fine path has " + std::to_string(fine_noise.steps) +
                         " steps, expected coarse_steps * refine_ratio = " +
                         std::to_string(coarse_steps * refine_ratio));
    }
    const double fine_dt = horizon / static_cast<double>(fine_noise.steps);
    if (std::abs(fine_noise.dt - fine_dt) > 1e-12 * fine_dt) {
        throw UsageError("reference_solution: fine path step size does not match the grid");
    }
    check_noise(Scheme::Exponential, model, eps, fine_noise);

    const Stepper stepper(Scheme::Exponential, model, eps, fine_dt);
    Trajectory traj;
    traj.dt = horizon / static_cast<double>(coarse_steps);
    traj.states.reserve(coarse_steps + 1);
    stepper.run(initial, fine_noise, [&](std::size_t n, const Vector& a, const Vector& b) {
        if (n % refine_ratio == 0) {
            traj.states.push_back({a, b});
        }
    });
    return traj;
}

Trajectory exact_constant_solution(const Vector& f0, const Matrix& sigma0, double eps,
                                   const InitialCondition& initial, const NoisePath& noise) {
    if (noise.eps != eps) {
        throw UsageError("exact_constant_solution: path sampled at a different eps");
    }
    const int d = noise.dimension;
    if (f0.size() != d || sigma0.rows() != d || sigma0.cols() != d || initial.q0.size() != d) {
        throw UsageError("exact_constant_solution: inconsistent dimensions");
    }
    const double dt = noise.dt;
    const double e2 = eps * eps;
    const double E = std::exp(-dt / e2);
    const double one_minus = one_minus_exp_neg(dt / e2);
    const double q_drift = e2 * x_minus_one_minus_exp_neg(dt / e2);

    Trajectory traj;
    traj.dt = dt;
    traj.states.reserve(noise.steps + 1);
    Vector q = initial.q0;
    Vector p = initial.p0;
    traj.states.push_back({q, p});
    for (std::size_t n = 0; n < noise.steps; ++n) {
        const ConstMap db(noise.dbeta.data() + n * d, d);
        const ConstMap in(noise.integral.data() + n * d, d);
        const Vector q_next = q + eps * one_minus * p + q_drift * f0 + sigma0 * (db - in);
        p = E * p + eps * one_minus * f0 + sigma0 * in / eps;
        q = q_next;
        traj.states.push_back({q, p});
    }
    return traj;
}

Trajectory exact_constant_solution(const ModelSpec& model, double eps, const InitialCondition& initial,
                                   const NoisePath& noise) {
    if (!model.is_constant_drift || !model.is_constant_diffusion) {
        throw UsageError("exact_constant_solution: model '" + model.name + "' does not have constant coefficients");
    }
    const Vector origin = Vector::Zero(model.dimension);
    return exact_constant_solution(model.drift(origin), model.diffusion(origin), eps, initial, noise);
}

}  // namespace apsk
