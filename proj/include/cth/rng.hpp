#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cth {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Labeled substream derivation: every consumer of randomness gets its own
// seed derived from the root seed, a label ("data", "init", "train",
// "sample", ...) and optional indices. Changing one consumer never shifts
// the draws seen by another.
inline uint64_t substream(uint64_t root, std::string_view label,
                          std::initializer_list<uint64_t> indices = {}) {
    uint64_t s = root ^ fnv1a64(label);
    uint64_t out = splitmix64(s);
    for (uint64_t ix : indices) {
        s = out ^ (ix + 0x9e3779b97f4a7c15ULL);
        out = splitmix64(s);
    }
    return out;
}

// mt19937_64 with explicit uniform/normal implementations so that draw
// sequences are fixed by this code, not by the standard library's
// (implementation-defined) distributions.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t u64() { return eng_(); }

    // [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller (trigonometric form): exactly one uniform pair per two
    // normal draws, so draw counts are deterministic.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    template <typename T>
    void fill_normal(T* p, int64_t n, double mean = 0.0, double std = 1.0) {
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(mean + std * normal());
    }

    // Unbiased enough for shuffling; fixed algorithm for reproducibility.
    int64_t below(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

    int bernoulli(double p) { return uniform() < p ? 1 : 0; }

    template <typename V>
    void shuffle(std::vector<V>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cth
