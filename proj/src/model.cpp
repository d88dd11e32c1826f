#include "apsk/model.hpp"

#include "apsk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace apsk {

QPState to_qp(const PhaseState& s, double eps) {
    return {s.q + eps * s.p, eps * s.p};
}

PhaseState from_qp(const QPState& s, double eps) {
    return {s.Q - s.P, s.P / eps};
}

bool all_finite(const Vector& v) {
    return v.allFinite();
}

InitialCondition InitialCondition::make(const Vector& q0, const Vector& p0) {
    if (q0.size() != p0.size()) {
        throw UsageError("initial condition: q0 and p0 have different lengths");
    }
    if (!q0.allFinite() || !p0.allFinite()) {
        throw UsageError("initial condition: non-finite entries");
    }
    return {q0, p0, q0};
}

InitialCondition InitialCondition::zero(int dimension) {
    const Vector z = Vector::Zero(dimension);
    return {z, z, z};
}

namespace {

void check_dimension(const ModelSpec& model, const Vector& q) {
    if (q.size() != model.dimension) {
        throw UsageError("model '" + model.name + "' has dimension " + std::to_string(model.dimension) +
                         ", got a vector of length " + std::to_string(q.size()));
    }
}

double param_or(const ModelParams& params, const std::string& key, double fallback) {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

ModelSpec scaled_identity_noise(std::string name, int d, double s, DriftFn f, double drift_lipschitz) {
    ModelSpec m;
    m.name = std::move(name);
    m.dimension = d;
    m.drift = std::move(f);
    m.diffusion = [d, s](const Vector&) -> Matrix { return s * Matrix::Identity(d, d); };
    m.diffusion_diagonal = [d, s](const Vector&) -> Vector { return Vector::Constant(d, s); };
    m.is_constant_diffusion = true;
    m.lipschitz_bound = drift_lipschitz;
    m.diffusion_bound = std::abs(s);
    return m;
}

Vector minus_q_plus_sin(const Vector& q) {
    return -q + q.array().sin().matrix();
}

}  // namespace

Vector eval_drift(const ModelSpec& model, const Vector& q) {
    check_dimension(model, q);
    return model.drift(q);
}

Matrix eval_diffusion(const ModelSpec& model, const Vector& q) {
    check_dimension(model, q);
    return model.diffusion(q);
}

Matrix eval_a(const ModelSpec& model, const Vector& q) {
    const Matrix s = eval_diffusion(model, q);
    return s * s.transpose();
}

ModelSpec make_constant_model(std::string name, const Vector& f0, const Matrix& sigma0) {
    const auto d = f0.size();
    if (d < 1 || d > kMaxDim || sigma0.rows() != d || sigma0.cols() != d) {
        throw UsageError("constant model: inconsistent shapes for f0 and sigma0");
    }
    ModelSpec m;
    m.name = std::move(name);
    m.dimension = static_cast<int>(d);
    m.drift = [f0](const Vector&) { return f0; };
    m.diffusion = [sigma0](const Vector&) { return sigma0; };
    m.is_constant_drift = true;
    m.is_constant_diffusion = true;
    m.lipschitz_bound = 0.0;
    m.diffusion_bound = sigma0.cwiseAbs().maxCoeff();
    return m;
}

const std::vector<std::string>& builtin_model_names() {
    static const std::vector<std::string> names{"linear", "sin-drift", "tanh-diffusion", "constant"};
    return names;
}

ModelSpec make_builtin_model(const std::string& name, int dimension, const ModelParams& params) {
    if (dimension < 1 || dimension > kMaxDim) {
        throw UsageError("model dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    }
    static const std::set<std::string> known_params{"s", "c"};
    for (const auto& [key, value] : params) {
        if (!known_params.contains(key)) {
            throw UsageError("model '" + name + "': unknown parameter '" + key + "'");
        }
        if (!std::isfinite(value)) {
            throw UsageError("model '" + name + "': parameter '" + key + "' is not finite");
        }
    }
    const double s = param_or(params, "s", 1.0);
    const int d = dimension;

    if (name == "linear") {
        return scaled_identity_noise(name, d, s, [](const Vector& q) -> Vector { return -q; }, 1.0);
    }
    if (name == "sin-drift") {
        // f' = cos(q) - 1 lies in [-2, 0].
        return scaled_identity_noise(name, d, s, minus_q_plus_sin, 2.0);
    }
    if (name == "tanh-diffusion") {
        ModelSpec m;
        m.name = name;
        m.dimension = d;
        m.drift = minus_q_plus_sin;
        m.diffusion = [](const Vector& q) -> Matrix {
            return (1.0 + 0.5 * q.array().tanh()).matrix().asDiagonal();
        };
        m.diffusion_diagonal = [](const Vector& q) -> Vector { return (1.0 + 0.5 * q.array().tanh()).matrix(); };
        m.lipschitz_bound = 2.0;
        m.diffusion_bound = 1.5;
        return m;
    }
    if (name == "constant") {
        const double c = param_or(params, "c", 1.0);
        auto m = make_constant_model(name, Vector::Constant(d, c), s * Matrix::Identity(d, d));
        return m;
    }

    std::string valid;
    for (const auto& n : builtin_model_names()) {
        valid += (valid.empty() ? "" : ", ") + n;
    }
    throw UsageError("unknown model '" + name + "' (valid: " + valid + ")");
}

}  // namespace apsk
