#pragma once

#include <cstdint>

namespace ws {

// Deterministic PRNG used for all weight initialization and synthetic data.
// splitmix64 (Steele, Lea, Burns 2014): a 64-bit state advanced by the golden
// ratio, mixed through two xor-shift-multiply rounds. Chosen over libstdc++
// distributions so streams are identical across platforms and compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Derive an independent stream, e.g. one per parameter tensor.
    Rng fork() { return Rng(next_u64()); }

private:
    std::uint64_t state_;
};

} // namespace ws
