#pragma once

// Seeded randomness with named stream splitting. Every run owns one RootRng;
// each consumer (shuffling, noise draws, bootstrap, per-row dataset sampling,
// per-pair evaluation) pulls an independent Rng via stream(name[, index]).
// Stream seeds are splitmix64(root_seed ^ fnv1a(name) ^ mix(index)), so
// enabling/disabling one consumer never shifts another's sequence and
// sharded work stays deterministic under any parallel schedule.

#include <cstdint>
#include <random>
#include <string_view>

namespace ctfgen {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}
}  // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    int rademacher() { return (engine_() & 1ULL) ? 1 : -1; }

    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

class RootRng {
public:
    explicit RootRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t derive(std::string_view name, std::uint64_t index = 0) const {
        return detail::splitmix64(seed_ ^ detail::fnv1a(name) ^ detail::splitmix64(index));
    }

    Rng stream(std::string_view name, std::uint64_t index = 0) const {
        return Rng(derive(name, index));
    }

private:
    std::uint64_t seed_;
};

}  // namespace ctfgen
