#pragma once

// Portable random numbers.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The std distributions are implementation-defined, so the
// conversions below are written out explicitly; fixtures recorded on one
// platform reproduce on any other.
//
//   uniform01()  : (x >> 11) * 2^-53, in [0, 1)
//   below(n)     : rejection sampling, x % n for x < 2^64 - (2^64 mod n)
//   normal()     : Box-Muller on (1 - uniform01(), uniform01()), both values used
//   mix_seed()   : splitmix64 finalizer over (seed, stream)

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

namespace hardi {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derive an independent seed for sub-stream `stream` (e.g. a voxel index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept
{
    return splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 1));
}

class Rng
{
  public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n)
    {
        std::uint64_t const limit = std::numeric_limits<std::uint64_t>::max()
                                    - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do
        {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    double normal()
    {
        if (has_spare_)
        {
            has_spare_ = false;
            return spare_;
        }
        double const u1 = 1.0 - uniform01();  // (0, 1]
        double const u2 = uniform01();
        double const r = std::sqrt(-2.0 * std::log(u1));
        double const theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // UniformRandomBitGenerator interface
    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return next(); }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0;
    bool has_spare_ = false;
};

}  // namespace hardi
