#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pixart {

// Seedable splitmix64 generator with 64-bit state. Every stochastic choice
// in the library draws from an Rng derived from (seed, stream), so a run is
// reproducible bit-for-bit from its seed; forked streams are independent and
// do not advance the parent.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : state_(mix(seed, stream)) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
    // so the draw sequence depends only on how many values were requested.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Uniform integer in [0, n). n is tiny everywhere we use this, so the
    // modulo bias (~n/2^64) is irrelevant.
    uint64_t uniform_int(uint64_t n) { return n ? next() % n : 0; }

    // Child generator for an independent stream; const, parent unchanged.
    Rng fork(uint64_t stream) const { return Rng(state_, 0xD1B54A32D192ED03ull ^ stream); }

    uint64_t state() const { return state_; }

private:
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

// FNV-1a, used to derive rng streams from names.
inline uint64_t hash64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace pixart
