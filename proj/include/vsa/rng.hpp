#pragma once

#include <cmath>
#include <cstdint>

namespace vsa {

// Counter-free splitmix64 generator. One u64 of state, so checkpoints can
// serialize it exactly and every platform reproduces the same stream.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        return next_u64() % n;
    }

    // Box-Muller, no cached second draw so the state stays a single word.
    double normal(double mean = 0.0, double sigma = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal(0, sigma) clipped to +-2 sigma by rejection.
    double trunc_normal(double sigma) {
        for (;;) {
            const double x = normal(0.0, sigma);
            if (std::fabs(x) <= 2.0 * sigma) return x;
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

    // Independent stream for a named substream (dataset sample i, etc.).
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0x632be59bd9b4e019ULL * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

}  // namespace vsa
