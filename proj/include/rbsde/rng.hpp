#pragma once

#include <cmath>
#include <cstdint>

namespace rbsde {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so parallel layout cannot change results.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const {
        std::uint64_t x = splitmix64(seed_ ^ 0x51c2b1a96f3d8c05ULL);
        x = splitmix64(x ^ splitmix64(stream));
        x = splitmix64(x ^ splitmix64(counter ^ 0xa24baed4963ee407ULL));
        return x;
    }

    // Uniform in (0, 1).
    double uniform(std::uint64_t stream, std::uint64_t counter) const {
        const std::uint64_t b = bits(stream, counter);
        return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller on two counter draws.
    double normal(std::uint64_t stream, std::uint64_t counter) const {
        const double u1 = uniform(stream, 2 * counter);
        const double u2 = uniform(stream, 2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

// Stream key for (path, step, coord) addressing of Brownian increments.
inline std::uint64_t path_stream(std::uint64_t path) { return path; }
inline std::uint64_t step_coord_counter(std::uint64_t step, std::uint64_t coord,
                                        std::uint64_t d) {
    return step * d + coord;
}

}  // namespace rbsde
