#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace xp {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// One named substream of the run seed. Every source of randomness in the
// project draws from a stream like Rng(seed, "init") so runs reproduce.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view stream)
        : eng_(splitmix64(seed ^ fnv1a64(stream))) {}

    std::uint64_t next_u64() { return eng_(); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }

    // Rejection-sampled normal clipped to [lo, hi] standard deviations.
    double trunc_normal(double stddev, double lo_sd = -2.0, double hi_sd = 2.0) {
        for (;;) {
            double z = std::normal_distribution<double>(0.0, 1.0)(eng_);
            if (z >= lo_sd && z <= hi_sd) return z * stddev;
        }
    }

    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), eng_);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

}  // namespace xp
