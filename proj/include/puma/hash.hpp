#pragma once

// FNV-1a 64-bit content hashing for frozen-contract checks and artifact
// manifests. Not cryptographic; a fast, stable fingerprint.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace puma {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(std::span<const double> values, uint64_t h = kFnvOffset) {
    return fnv1a64(values.data(), values.size() * sizeof(double), h);
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

class HashAccumulator {
public:
    void add(std::span<const double> values) { h_ = fnv1a64(values, h_); }
    void add_bytes(const void* bytes, size_t n) { h_ = fnv1a64(bytes, n, h_); }
    uint64_t value() const { return h_; }

private:
    uint64_t h_ = kFnvOffset;
};

}  // namespace puma
