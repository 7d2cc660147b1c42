#pragma once

#include <cmath>
#include <cstdint>

namespace hvsr {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// PCG32 with a self-contained Box-Muller normal. We do not use
// std::normal_distribution because its output is implementation-defined,
// which would make checkpoints non-portable across standard libraries.
class Rng {
  public:
    Rng() : Rng(0x853c49e6748fea9bULL) {}

    explicit Rng(uint64_t seed, uint64_t stream = 0xda3e39cb94b95bdbULL) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // Unbiased integer in [0, bound).
    uint32_t below(uint32_t bound) {
        uint32_t threshold = (-bound) % bound;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1), 32-bit resolution.
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    // Standard normal via Box-Muller. Draws a fresh pair every call so the
    // generator state is exactly two u32 draws per sample (no cached spare
    // to serialize).
    double normal() {
        double u1 = (next_u32() + 1.0) * (1.0 / 4294967296.0);  // (0, 1]
        double u2 = next_u32() * (1.0 / 4294967296.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    uint64_t state() const { return state_; }
    uint64_t inc() const { return inc_; }
    void restore(uint64_t state, uint64_t inc) {
        state_ = state;
        inc_ = inc;
    }

    // Independent stream for a work item (patch index, image index, ...).
    static Rng derive(uint64_t seed, uint64_t index) {
        return Rng(splitmix64(seed ^ splitmix64(index)), splitmix64(index) | 1u);
    }

  private:
    uint64_t state_;
    uint64_t inc_;
};

}  // namespace hvsr
