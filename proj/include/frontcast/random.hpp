#pragma once

// Seeded RNG wrapper. mt19937_64 output is fully specified by the standard
// and the double conversion below avoids distribution objects, so streams
// are reproducible across compilers for a fixed seed.

#include <cstdint>
#include <random>

namespace frontcast {

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace frontcast
