#pragma once

#include "apsk/errors.hpp"
#include "apsk/model.hpp"
#include "apsk/noise.hpp"
#include "apsk/schemes.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>

namespace apsk {

/// Step coefficients that depend only on (eps, dt).
struct StepCoefficients {
    double eps;
    double dt;
    double inv_eps;
    double decay;          // E = exp(-dt/eps^2)
    double eps_one_minus;  // eps (1 - E)
    double eps2_one_minus; // eps^2 (1 - E)
    double drift_weight;   // dt - eps^2 (1 - E)
    double damping;        // 1 / (1 + dt/eps^2)

    StepCoefficients(double eps_, double dt_);
};

/// Allocation-free driver over a NoisePath. The state pair holds (q, p) for
/// the plain schemes, (Q, P) for the QP variants and (q, unused) for
/// Euler-Maruyama.
class Stepper {
public:
    Stepper(Scheme scheme, const ModelSpec& model, double eps, double dt);

    Scheme scheme() const { return scheme_; }

    /// Loads the (q, p) initial condition into internal coordinates.
    void load(const InitialCondition& ic, Vector& a, Vector& b) const;
    /// Current (q, p) view of internal coordinates.
    PhaseState unload(const Vector& a, const Vector& b) const;
    /// Position component only.
    Vector position(const Vector& a, const Vector& b) const;

    void advance(Vector& a, Vector& b, const double* dbeta, const double* integral, std::size_t n) const;

    /// Applies every step of `noise`; calls visit(n, a, b) at n = 0..N.
    template <class Visitor>
    void run(const InitialCondition& ic, const NoisePath& noise, Visitor&& visit) const {
        Vector a, b;
        load(ic, a, b);
        visit(std::size_t{0}, a, b);
        const int d = noise.dimension;
        for (std::size_t n = 0; n < noise.steps; ++n) {
            advance(a, b, noise.dbeta.data() + n * d, noise.integral.data() + n * d, n);
            visit(n + 1, a, b);
        }
    }

    /// Lock-step run over several paths of equal length. Interleaving
    /// independent trajectories hides the latency of the model evaluations.
    /// calls visit(lane, n, a, b). A non-finite state is rethrown with
    /// context(lane) appended.
    template <class Visitor, class Context>
    void run_lanes(const InitialCondition& ic, std::span<const NoisePath* const> paths, Visitor&& visit,
                   Context&& context) const {
        const std::size_t lanes = paths.size();
        if (lanes == 0) {
            return;
        }
        if (lanes > kMaxLanes) {
            throw UsageError("run_lanes: too many lanes");
        }
        const std::size_t steps = paths[0]->steps;
        const int d = paths[0]->dimension;
        for (const NoisePath* p : paths) {
            if (p->steps != steps || p->dimension != d) {
                throw UsageError("run_lanes: paths differ in length or dimension");
            }
        }
        std::array<Vector, kMaxLanes> a, b;
        for (std::size_t k = 0; k < lanes; ++k) {
            load(ic, a[k], b[k]);
            visit(k, std::size_t{0}, a[k], b[k]);
        }
        std::size_t k = 0;
        try {
            for (std::size_t n = 0; n < steps; ++n) {
                const std::size_t offset = n * static_cast<std::size_t>(d);
                for (k = 0; k < lanes; ++k) {
                    advance(a[k], b[k], paths[k]->dbeta.data() + offset, paths[k]->integral.data() + offset, n);
                    visit(k, n + 1, a[k], b[k]);
                }
            }
        } catch (const IntegrationError& e) {
            throw IntegrationError(e.what(), e.step(), context(k));
        }
    }

    static constexpr std::size_t kMaxLanes = 8;

private:
    Scheme scheme_;
    const ModelSpec& model_;
    StepCoefficients c_;
};

}  // namespace apsk
