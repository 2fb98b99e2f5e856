#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sqe {

// Thrown on violated preconditions and invalid configuration.
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown on malformed files, failed I/O and data-level validation.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string & msg) {
    if (!cond) {
        throw invalid_input(msg);
    }
}

// FNV-1a, 64 bit. Content fingerprint for config echo and frozen-base
// checks; not cryptographic.
inline uint64_t fnv1a64(const void * data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string & s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex64(uint64_t v) {
    static const char * digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

} // namespace sqe
