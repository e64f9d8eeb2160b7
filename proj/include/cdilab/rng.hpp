#pragma once

// Reproducible random number plumbing. Replicate streams are derived from a
// master seed by splitmix-style avalanche mixing over (master, replicate,
// stream label), so parallel and serial runs consume identical randomness.

#include <cstdint>
#include <random>
#include <string_view>

#include "cdilab/numerics.hpp"

namespace cdilab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

namespace stream {
inline const std::uint64_t genealogy = fnv1a64("genealogy");
inline const std::uint64_t motion = fnv1a64("motion");
inline const std::uint64_t initial = fnv1a64("initial");
inline const std::uint64_t bridge = fnv1a64("bridge");
}  // namespace stream

inline std::uint64_t seed_stream(std::uint64_t master_seed,
                                 std::uint64_t replicate_index,
                                 std::uint64_t stream_label) {
    std::uint64_t h = splitmix64(master_seed);
    h = splitmix64(h ^ (replicate_index + 0x632BE59BD9B4E019ULL));
    h = splitmix64(h ^ stream_label);
    return h;
}

// mt19937_64 is bit-exact per the standard; distribution transforms below are
// written out explicitly so draws are reproducible across stdlib versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform on the open interval (0,1)
    double uniform01() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double exponential(double rate) { return -std::log1p(-uniform01()) / rate; }

    double normal01() { return inv_normal_cdf(uniform01()); }

    double normal(double mean, double stddev) {
        return mean + stddev * normal01();
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace cdilab
