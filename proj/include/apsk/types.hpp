#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace apsk {

// Phase-space dimension is capped so vectors and matrices live on the stack;
// the integrators run billions of steps and must never allocate per step.
inline constexpr Eigen::Index kMaxDim = 8;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Position/momentum pair (q, p). The momentum is stored unscaled.
struct PhaseState {
    Vector q;
    Vector p;
};

/// Transformed unknowns Q = q + eps p, P = eps p; q = Q - P.
struct QPState {
    Vector Q;
    Vector P;
};

QPState to_qp(const PhaseState& s, double eps);
PhaseState from_qp(const QPState& s, double eps);

bool all_finite(const Vector& v);

}  // namespace apsk
