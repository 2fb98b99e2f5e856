#pragma once

#include "sqe/common.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace sqe {

// Splittable counter-based generator (SplitMix64 core). Identical
// (seed, stream_id) pairs produce identical sequences on every platform;
// the algorithm tag below is pinned inside checkpoints so archived runs
// stay reproducible if the default ever changes.
inline constexpr const char * kRngAlgorithm = "splitmix64-v1";

class RngStream {
  public:
    RngStream(uint64_t seed, uint64_t stream_id = 0) : seed_(seed), stream_id_(stream_id) {
        // Decorrelate the two words before using them as a counter base.
        state_ = mix(seed + 0x9e3779b97f4a7c15ull * (stream_id + 1));
        state_ = mix(state_ ^ mix(stream_id + 0x632be59bd9b4e019ull));
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_id_; }

    // Independent stream for a worker or a keyed sub-task.
    RngStream child(uint64_t sub_id) const {
        return RngStream(mix(state_ ^ mix(sub_id + 0x8e9b4a1cf3d57ull)), sub_id);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n).
    uint64_t below(uint64_t n) {
        require(n > 0, "RngStream::below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

    // Box-Muller, no cached spare so the draw count per call is fixed.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

  private:
    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t stream_id_;
    uint64_t state_;
};

} // namespace sqe
