#pragma once

#include <cmath>
#include <cstdint>

namespace apsk {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed of stream `stream_id` under `master_seed`. Streams are indexed, so
/// any worker can build any stream without coordination.
constexpr std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t stream_id) noexcept {
    return mix64(master_seed ^ (stream_id * kGoldenGamma));
}

/// xoshiro256** seeded through a SplitMix64 sequence, with Marsaglia polar
/// normal deviates. Output depends only on the seed and on IEEE-754 double
/// arithmetic (log, sqrt), nothing implementation-defined from <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x += kGoldenGamma;
            word = mix64(x);
        }
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Two independent standard normals.
    void normal_pair(double& z1, double& z2) noexcept {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        z1 = u * scale;
        z2 = v * scale;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
};

}  // namespace apsk
