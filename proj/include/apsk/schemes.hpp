#pragma once

#include "apsk/model.hpp"
#include "apsk/noise.hpp"
#include "apsk/types.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace apsk {

enum class Scheme {
    SemiImplicit,
    Exponential,
    EulerMaruyama,
    SemiImplicitQP,
    ExponentialQP,
};

std::string_view scheme_name(Scheme scheme);
std::optional<Scheme> parse_scheme(std::string_view name);
const std::vector<std::string>& scheme_names();

/// True for schemes that consume the exponentially weighted integral and
/// therefore need a path sampled at the run's eps.
constexpr bool uses_integral(Scheme s) {
    return s == Scheme::Exponential || s == Scheme::ExponentialQP;
}

/// x - (1 - exp(-x)), accurate for small x.
double x_minus_one_minus_exp_neg(double x);

struct SimConfig {
    double eps = 1.0;
    double horizon = 1.0;  // T
    std::size_t steps = 1;  // N
    InitialCondition initial;
    std::uint64_t seed = 0;
    std::size_t samples = 1;

    double dt() const { return horizon / static_cast<double>(steps); }
};

struct Trajectory {
    double dt = 0.0;
    std::vector<PhaseState> states;  // N + 1 grid values

    double time(std::size_t n) const { return static_cast<double>(n) * dt; }
};

// Single steps. `step_index` only labels the IntegrationError raised when the
// new state is not finite.

/// p' = (p + dt f(q)/eps + sigma(q) dbeta/eps) / (1 + dt/eps^2), then q' = q + dt p'/eps.
PhaseState step_semi_implicit(const PhaseState& s, const ModelSpec& model, double eps, double dt,
                              const Vector& dbeta, std::size_t step_index = 0);

/// Exact solution over one step of the SDE with f, sigma frozen at q.
PhaseState step_exponential(const PhaseState& s, const ModelSpec& model, double eps, double dt,
                            const IncrementPair& pair, std::size_t step_index = 0);

Vector step_euler_maruyama(const Vector& q, const ModelSpec& model, double dt, const Vector& dbeta,
                           std::size_t step_index = 0);

QPState step_semi_implicit_qp(const QPState& s, const ModelSpec& model, double eps, double dt,
                              const Vector& dbeta, std::size_t step_index = 0);

QPState step_exponential_qp(const QPState& s, const ModelSpec& model, double eps, double dt,
                            const IncrementPair& pair, std::size_t step_index = 0);

/// Runs `scheme` over every step of `noise` from config.initial.
///
/// Euler-Maruyama starts from initial.q0_limit and reports p = 0. The QP
/// variants are reported in (q, p) form.
Trajectory integrate(Scheme scheme, const ModelSpec& model, const SimConfig& config, const NoisePath& noise);

/// Exponential scheme on `fine_noise` (coarse_steps * refine_ratio steps),
/// sampled back onto the coarse grid.
Trajectory reference_solution(const ModelSpec& model, double eps, double horizon, std::size_t coarse_steps,
                              std::size_t refine_ratio, const InitialCondition& initial,
                              const NoisePath& fine_noise);

/// Closed-form grid recursion of the constant-coefficient SDE driven by the
/// sampled increments of `noise`.
Trajectory exact_constant_solution(const Vector& f0, const Matrix& sigma0, double eps,
                                   const InitialCondition& initial, const NoisePath& noise);
/// Same, reading f0 and sigma0 off a model whose constant flags are both set.
Trajectory exact_constant_solution(const ModelSpec& model, double eps, const InitialCondition& initial,
                                   const NoisePath& noise);

}  // namespace apsk
