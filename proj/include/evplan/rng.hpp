#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace evplan::rng {

// All randomness flows from a master seed through derive(); there is no
// global engine. Streams are identified by (seed, tag, indices), so any
// component can be re-run in isolation and reproduce its draws.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive a child seed from a parent seed and a stream tag.
inline std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a(tag));
}

/// Derive a child seed from a parent seed and an index (stage, sample, ...).
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 0x51ed270b0a7cfdb5ULL));
}

class Engine {
public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() { return std::ldexp(static_cast<double>(gen_() >> 11), -53); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; fixed algorithm, not the
    /// implementation-defined std::normal_distribution.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double lognormal(double log_mean, double log_std) {
        return std::exp(log_mean + log_std * normal());
    }

    /// Standard Gumbel (location 0, scale 1).
    double gumbel() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(-std::log(u));
    }

    /// Index in [0, n) with probability proportional to weights[i].
    template <typename Container>
    int categorical(const Container& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = uniform() * total;
        double acc = 0.0;
        int last = 0;
        int i = 0;
        for (double w : weights) {
            acc += w;
            if (r < acc) return i;
            last = i;
            ++i;
        }
        return last;
    }

private:
    std::mt19937_64 gen_;
};

} // namespace evplan::rng
