#include "apsk/noise.hpp"

#include "apsk/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace apsk {

namespace {

void check_positive(double eps, double dt) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
        throw UsageError("eps must be positive and finite, got " + std::to_string(eps));
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw UsageError("dt must be positive and finite, got " + std::to_string(dt));
    }
}

// (c22 - c12^2/c11) / eps^2 as a function of x = dt/eps^2. The direct form
// cancels to x^3/12 for small x, so a Taylor expansion takes over there.
double schur_complement_scaled(double x) {
    if (x < 0.05) {
        constexpr double c[] = {1.0 / 12.0,     -1.0 / 12.0,        17.0 / 360.0,
                                -7.0 / 360.0,   43.0 / 6720.0,      -107.0 / 60480.0,
                                769.0 / 1814400.0, -163.0 / 1814400.0};
        double acc = 0.0;
        for (int k = 7; k >= 0; --k) {
            acc = acc * x + c[k];
        }
        return acc * x * x * x;
    }
    const double a = one_minus_exp_neg(x);
    return 0.5 * one_minus_exp_neg(2.0 * x) - a * a / x;
}

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

// Word-at-a-time FNV-1a.
std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t word) {
    return (h ^ word) * kFnvPrime;
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
    }
    out.write(buf, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) {
        throw UsageError("noise path dump: unexpected end of input");
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | buf[i];
    }
    return v;
}

}  // namespace

IncrementCovariance increment_covariance(double eps, double dt) {
    check_positive(eps, dt);
    const double e2 = eps * eps;
    const double x = dt / e2;
    return {dt, e2 * one_minus_exp_neg(x), 0.5 * e2 * one_minus_exp_neg(2.0 * x)};
}

IncrementCholesky increment_cholesky(double eps, double dt) {
    const auto cov = increment_covariance(eps, dt);
    const double x = dt / (eps * eps);
    const double schur = schur_complement_scaled(x);
    if (schur < -1e-15 * 0.5 * one_minus_exp_neg(2.0 * x) || !std::isfinite(schur)) {
        throw InternalError("increment covariance is not positive semidefinite (eps=" + std::to_string(eps) +
                            ", dt=" + std::to_string(dt) + ")");
    }
    const double l11 = std::sqrt(cov.c11);
    return {l11, cov.c12 / l11, eps * std::sqrt(std::max(schur, 0.0))};
}

IncrementPair pair_from_normals(const IncrementCholesky& chol, const Vector& z1, const Vector& z2) {
    return {chol.l11 * z1, chol.l21 * z1 + chol.l22 * z2};
}

IncrementPair sample_pair(Rng& rng, const IncrementCholesky& chol, int dimension) {
    IncrementPair out{Vector(dimension), Vector(dimension)};
    for (int j = 0; j < dimension; ++j) {
        double z1, z2;
        rng.normal_pair(z1, z2);
        out.dbeta[j] = chol.l11 * z1;
        out.integral[j] = chol.l21 * z1 + chol.l22 * z2;
    }
    return out;
}

IncrementPair sample_pair(Rng& rng, double eps, double dt, int dimension) {
    if (dimension < 1 || dimension > kMaxDim) {
        throw UsageError("sample_pair: dimension out of range");
    }
    return sample_pair(rng, increment_cholesky(eps, dt), dimension);
}

IncrementPair NoisePath::step(std::size_t n) const {
    if (n >= steps) {
        throw UsageError("noise path: step index out of range");
    }
    IncrementPair out{Vector(dimension), Vector(dimension)};
    for (int j = 0; j < dimension; ++j) {
        out.dbeta[j] = dbeta[n * dimension + j];
        out.integral[j] = integral[n * dimension + j];
    }
    return out;
}

void generate_path_into(NoisePath& out, std::uint64_t master_seed, std::uint64_t stream_id, double eps,
                        double dt, std::size_t steps, int dimension) {
    if (dimension < 1 || dimension > kMaxDim) {
        throw UsageError("generate_path: dimension out of range");
    }
    const auto chol = increment_cholesky(eps, dt);
    out.seed = master_seed;
    out.stream_id = stream_id;
    out.eps = eps;
    out.dt = dt;
    out.dimension = dimension;
    out.steps = steps;
    const std::size_t total = steps * static_cast<std::size_t>(dimension);
    out.dbeta.resize(total);
    out.integral.resize(total);

    Rng rng(stream_seed(master_seed, stream_id));
    for (std::size_t k = 0; k < total; ++k) {
        double z1, z2;
        rng.normal_pair(z1, z2);
        out.dbeta[k] = chol.l11 * z1;
        out.integral[k] = chol.l21 * z1 + chol.l22 * z2;
    }
    out.origin_checksum = increment_checksum(out);
}

NoisePath generate_path(std::uint64_t master_seed, std::uint64_t stream_id, double eps, double dt,
                        std::size_t steps, int dimension) {
    NoisePath out;
    generate_path_into(out, master_seed, stream_id, eps, dt, steps, dimension);
    return out;
}

void coarsen_path_into(NoisePath& out, const NoisePath& fine, std::size_t ratio, double eps) {
    if (ratio < 1) {
        throw UsageError("coarsen_path: ratio must be positive");
    }
    if (fine.steps % ratio != 0) {
        throw UsageError("coarsen_path: ratio " + std::to_string(ratio) + " does not divide " +
                         std::to_string(fine.steps) + " steps");
    }
    if (fine.eps != eps) {
        throw UsageError("coarsen_path: path was sampled at a different eps");
    }
    const int d = fine.dimension;
    const std::size_t coarse_steps = fine.steps / ratio;
    const double decay = std::exp(-fine.dt / (eps * eps));

    out.seed = fine.seed;
    out.stream_id = fine.stream_id;
    out.eps = eps;
    out.dt = fine.dt * static_cast<double>(ratio);
    out.dimension = d;
    out.steps = coarse_steps;
    out.origin_checksum = fine.origin_checksum;
    out.dbeta.assign(coarse_steps * d, 0.0);
    out.integral.assign(coarse_steps * d, 0.0);

    for (std::size_t n = 0; n < coarse_steps; ++n) {
        for (int j = 0; j < d; ++j) {
            double sum_db = 0.0;
            double acc = 0.0;
            for (std::size_t k = 0; k < ratio; ++k) {
                const std::size_t idx = (n * ratio + k) * d + j;
                sum_db += fine.dbeta[idx];
                acc = decay * acc + fine.integral[idx];
            }
            out.dbeta[n * d + j] = sum_db;
            out.integral[n * d + j] = acc;
        }
    }
}

NoisePath coarsen_path(const NoisePath& fine, std::size_t ratio, double eps) {
    if (ratio == 1 && fine.eps == eps) {
        return fine;
    }
    NoisePath out;
    coarsen_path_into(out, fine, ratio, eps);
    return out;
}

std::uint64_t increment_checksum(const NoisePath& path) {
    std::uint64_t h = kFnvOffset;
    for (double v : path.dbeta) {
        h = fnv_mix(h, std::bit_cast<std::uint64_t>(v));
    }
    for (double v : path.integral) {
        h = fnv_mix(h, std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

void write_path_binary(std::ostream& out, const NoisePath& path) {
    put_u64(out, path.seed);
    put_u64(out, path.stream_id);
    put_u64(out, std::bit_cast<std::uint64_t>(path.eps));
    put_u64(out, std::bit_cast<std::uint64_t>(path.dt));
    put_u64(out, path.steps);
    put_u64(out, static_cast<std::uint64_t>(path.dimension));
    const auto d = static_cast<std::size_t>(path.dimension);
    for (std::size_t n = 0; n < path.steps; ++n) {
        for (std::size_t j = 0; j < d; ++j) {
            put_u64(out, std::bit_cast<std::uint64_t>(path.dbeta[n * d + j]));
        }
        for (std::size_t j = 0; j < d; ++j) {
            put_u64(out, std::bit_cast<std::uint64_t>(path.integral[n * d + j]));
        }
    }
}

NoisePath read_path_binary(std::istream& in) {
    NoisePath path;
    path.seed = get_u64(in);
    path.stream_id = get_u64(in);
    path.eps = std::bit_cast<double>(get_u64(in));
    path.dt = std::bit_cast<double>(get_u64(in));
    path.steps = get_u64(in);
    const auto d = get_u64(in);
    if (d < 1 || d > static_cast<std::uint64_t>(kMaxDim)) {
        throw UsageError("noise path dump: dimension out of range");
    }
    path.dimension = static_cast<int>(d);
    path.dbeta.resize(path.steps * d);
    path.integral.resize(path.steps * d);
    for (std::size_t n = 0; n < path.steps; ++n) {
        for (std::size_t j = 0; j < d; ++j) {
            path.dbeta[n * d + j] = std::bit_cast<double>(get_u64(in));
        }
        for (std::size_t j = 0; j < d; ++j) {
            path.integral[n * d + j] = std::bit_cast<double>(get_u64(in));
        }
    }
    path.origin_checksum = increment_checksum(path);
    return path;
}

}  // namespace apsk
