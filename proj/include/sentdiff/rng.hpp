#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace sentdiff::rng {

// splitmix64 finalizer. Used both as a hash for deriving stream seeds and as
// the output function of the counter-based Stream below.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seed derivation: every consumer of randomness gets its own stream derived
// from (seed, tags...). Streams never share state, so adding or removing a
// consumer cannot shift anyone else's sequence.
inline uint64_t derive(uint64_t seed, uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

inline uint64_t derive(uint64_t seed, uint64_t tag_a, uint64_t tag_b) {
    return derive(derive(seed, tag_a), tag_b);
}

inline uint64_t derive(uint64_t seed, uint64_t tag_a, uint64_t tag_b, uint64_t tag_c) {
    return derive(derive(seed, tag_a, tag_b), tag_c);
}

// Counter-mode splitmix64 generator. State is a single counter, so copies are
// cheap and a fixed seed gives a fixed sequence on every platform.
class Stream {
public:
    explicit Stream(uint64_t seed) : counter_(splitmix64(seed)) {}

    uint64_t next_u64() {
        counter_ += 0x9e3779b97f4a7c15ull;
        uint64_t x = counter_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Lemire multiply-shift; slight bias below
    // 2^-53 is irrelevant here and the mapping is deterministic.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller with a cached spare.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double two_pi = 6.283185307179586476925286766559;
        double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    // k distinct values from [0, n), ascending order. Partial Fisher-Yates.
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
        std::vector<int64_t> pool(static_cast<size_t>(n));
        std::iota(pool.begin(), pool.end(), int64_t{0});
        for (int64_t i = 0; i < k; ++i) {
            int64_t j = i + static_cast<int64_t>(next_below(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        }
        std::vector<int64_t> out(pool.begin(), pool.begin() + k);
        std::sort(out.begin(), out.end());
        return out;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t counter_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace sentdiff::rng
