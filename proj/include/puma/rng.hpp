#pragma once

// Deterministic seeded randomness. The generator is xoshiro256** (Blackman &
// Vigna), seeded from splitmix64 on the user seed. Both algorithms are fixed
// here so that a given seed yields the same draw sequence on every platform;
// nothing in the project uses std:: distributions, which are
// implementation-defined.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace puma {

inline uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64_next(sm);
        }
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n) via bitmask rejection.
    uint64_t uniform_below(uint64_t n) {
        if (n == 0) {
            throw std::invalid_argument("Rng::uniform_below: n must be positive");
        }
        if (n == 1) {
            return 0;
        }
        const int bits = std::bit_width(n - 1);
        while (true) {
            const uint64_t r = next_u64() >> (64 - bits);
            if (r < n) {
                return r;
            }
        }
    }

    // Box-Muller with cached spare. Draw order: u1 (radius) then u2 (angle).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double sd) { return mean + sd * gaussian(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Knuth's product-of-uniforms method; fine for the desk-scale means used
    // here (lambda well below ~700 keeps exp(-lambda) representable).
    uint64_t poisson(double lambda) {
        if (!(lambda > 0.0)) {
            throw std::invalid_argument("Rng::poisson: lambda must be positive");
        }
        const double limit = std::exp(-lambda);
        uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform01();
        } while (p > limit);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First m elements of a uniform random permutation of [0, n).
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t m) {
        if (m > n) {
            throw std::invalid_argument("Rng::sample_without_replacement: m > n");
        }
        std::vector<uint32_t> pool(n);
        for (uint32_t i = 0; i < n; ++i) {
            pool[i] = i;
        }
        for (uint32_t i = 0; i < m; ++i) {
            const uint32_t j = i + static_cast<uint32_t>(uniform_below(n - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(m);
        return pool;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t seed_ = 0;
    uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable per-stage seed derivation: mixes the label into the global seed so
// pipeline stages are independently reproducible.
inline uint64_t derive_seed(uint64_t global_seed, const char* label) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* p = label; *p != '\0'; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 0x100000001b3ULL;
    }
    uint64_t mix = global_seed ^ h;
    return splitmix64_next(mix);
}

inline uint64_t derive_seed(uint64_t global_seed, const char* label, uint64_t index) {
    uint64_t base = derive_seed(global_seed, label) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return splitmix64_next(base);
}

}  // namespace puma
