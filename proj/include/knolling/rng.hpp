#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace knolling {

inline constexpr double kPi = 3.14159265358979323846;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic RNG. The mt19937_64 bit stream is pinned by the standard;
// all value transforms are done by hand so sequences are identical across
// platforms and standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased draw in [0, n) by rejection
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t x;
        do { x = next_u64(); } while (x >= limit);
        return x % n;
    }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
    }

    // Box-Muller without a cached spare, so every call consumes exactly
    // two uniforms and the stream position stays predictable.
    double normal() {
        double u1 = 1.0 - uniform();   // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // child seed for stream `stream` of a master seed
    static uint64_t derive(uint64_t master, uint64_t stream) {
        return splitmix64(master ^ splitmix64(stream + 0x9E3779B97F4A7C15ull));
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace knolling
