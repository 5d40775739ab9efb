#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fetnet {

/// Deterministic random source. Wraps mt19937_64 but derives all variates
/// from raw 64-bit draws so results are bit-identical across standard
/// library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    int64_t randint(int64_t n) {
        // Modulo bias is negligible for n << 2^64 and keeps the draw count fixed.
        return static_cast<int64_t>(bits() % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derives an independent stream; the parent's state is not advanced.
    Rng fork(uint64_t stream) const {
        const uint64_t s = splitmix(seed_hash_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        Rng r(s);
        r.seed_hash_ = s;
        return r;
    }

    /// Constructs with a recorded seed hash so fork() is reproducible.
    static Rng seeded(uint64_t seed) {
        Rng r(splitmix(seed));
        r.seed_hash_ = seed;
        return r;
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 eng_;
    uint64_t seed_hash_ = 0;
};

} // namespace fetnet
