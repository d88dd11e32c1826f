#pragma once

#include "apsk/rng.hpp"
#include "apsk/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace apsk {

/// 1 - exp(-x), accurate for small x.
inline double one_minus_exp_neg(double x) noexcept {
    return -std::expm1(-x);
}

/// Joint covariance of (beta(t+dt) - beta(t), int_t^{t+dt} exp(-(t+dt-s)/eps^2) dbeta(s))
/// for one Brownian component.
struct IncrementCovariance {
    double c11;
    double c12;
    double c22;

    double determinant() const noexcept { return c11 * c22 - c12 * c12; }
};

IncrementCovariance increment_covariance(double eps, double dt);

/// Lower Cholesky factor [[l11, 0], [l21, l22]] of the increment covariance.
/// l22 is evaluated without forming c22 - c12^2/c11 when dt/eps^2 is small.
struct IncrementCholesky {
    double l11;
    double l21;
    double l22;
};

IncrementCholesky increment_cholesky(double eps, double dt);

struct IncrementPair {
    Vector dbeta;
    Vector integral;
};

/// Maps standard normals (z1_j, z2_j) to the correlated pair, componentwise.
IncrementPair pair_from_normals(const IncrementCholesky& chol, const Vector& z1, const Vector& z2);

/// Draws one pair of d components: per component, one normal_pair() call
/// supplies (z1, z2).
IncrementPair sample_pair(Rng& rng, double eps, double dt, int dimension);
IncrementPair sample_pair(Rng& rng, const IncrementCholesky& chol, int dimension);

/// Correlated increments on a uniform grid. Buffers are step-major:
/// component j of step n lives at index n * dimension + j.
struct NoisePath {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    double eps = 1.0;
    double dt = 1.0;
    int dimension = 1;
    std::size_t steps = 0;
    std::vector<double> dbeta;
    std::vector<double> integral;
    /// Hash of the finest-level increments this path was built from;
    /// preserved by coarsen_path so coupled runs can prove they share noise.
    std::uint64_t origin_checksum = 0;

    double horizon() const noexcept { return static_cast<double>(steps) * dt; }

    std::span<const double> dbeta_at(std::size_t n) const {
        return {dbeta.data() + n * dimension, static_cast<std::size_t>(dimension)};
    }
    std::span<const double> integral_at(std::size_t n) const {
        return {integral.data() + n * dimension, static_cast<std::size_t>(dimension)};
    }
    IncrementPair step(std::size_t n) const;
};

NoisePath generate_path(std::uint64_t master_seed, std::uint64_t stream_id, double eps, double dt,
                        std::size_t steps, int dimension);

/// In-place variant reusing the buffers of `out`.
void generate_path_into(NoisePath& out, std::uint64_t master_seed, std::uint64_t stream_id, double eps,
                        double dt, std::size_t steps, int dimension);

/// Exact aggregation onto a grid `ratio` times coarser: coarse dbeta sums the
/// block, coarse integral is sum_k exp(-(t_{n+1} - tau_{k+1})/eps^2) i_k.
NoisePath coarsen_path(const NoisePath& fine, std::size_t ratio, double eps);
void coarsen_path_into(NoisePath& out, const NoisePath& fine, std::size_t ratio, double eps);

/// Word-wise FNV-1a over the bit patterns of both increment buffers.
std::uint64_t increment_checksum(const NoisePath& path);

/// Binary layout (all little-endian): header of six 64-bit fields
/// seed, stream_id, eps (IEEE bits), dt (IEEE bits), N, d; then for each step
/// d dbeta values followed by d integral values as IEEE doubles.
void write_path_binary(std::ostream& out, const NoisePath& path);
NoisePath read_path_binary(std::istream& in);

}  // namespace apsk
