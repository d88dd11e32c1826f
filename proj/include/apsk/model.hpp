#pragma once

#include "apsk/types.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace apsk {

using DriftFn = std::function<Vector(const Vector&)>;
using DiffusionFn = std::function<Matrix(const Vector&)>;
using DiagonalDiffusionFn = std::function<Vector(const Vector&)>;

/// An SDE problem: momentum forcing f and diffusion sigma on R^d.
///
/// Instances are immutable once built and may be shared between threads.
/// The bound fields are metadata used by the regularity probes in the tests;
/// no integrator reads them.
struct ModelSpec {
    std::string name;
    int dimension = 1;
    DriftFn drift;
    DiffusionFn diffusion;
    /// Optional: diagonal of sigma when sigma is diagonal everywhere. When
    /// set it must agree with `diffusion`; integrators use it to skip the
    /// dense matrix-vector product.
    DiagonalDiffusionFn diffusion_diagonal;
    bool is_constant_drift = false;
    bool is_constant_diffusion = false;
    double lipschitz_bound = 0.0;  // for both f and sigma
    double diffusion_bound = 0.0;  // sup of |sigma_ij|
};

/// Deterministic initial data (q0, p0) and the eps -> 0 limit q0_limit.
struct InitialCondition {
    Vector q0;
    Vector p0;
    Vector q0_limit;

    /// q0_limit defaults to q0.
    static InitialCondition make(const Vector& q0, const Vector& p0);
    static InitialCondition zero(int dimension);
};

using ModelParams = std::map<std::string, double>;

Vector eval_drift(const ModelSpec& model, const Vector& q);
Matrix eval_diffusion(const ModelSpec& model, const Vector& q);
/// a(q) = sigma(q) sigma(q)^T.
Matrix eval_a(const ModelSpec& model, const Vector& q);

/// Model with f = f0 and sigma = sigma0 everywhere.
ModelSpec make_constant_model(std::string name, const Vector& f0, const Matrix& sigma0);

/// Built-in benchmark models, all globally Lipschitz with bounded sigma:
///   "linear"          f(q) = -q,            sigma = s I
///   "sin-drift"       f(q) = -q + sin(q),   sigma = s I
///   "tanh-diffusion"  f(q) = -q + sin(q),   sigma = diag(1 + tanh(q_i)/2)
///   "constant"        f(q) = c (all entries), sigma = s I
/// Recognized parameters: "s" (default 1) and "c" (default 1).
ModelSpec make_builtin_model(const std::string& name, int dimension, const ModelParams& params = {});

const std::vector<std::string>& builtin_model_names();

}  // namespace apsk
