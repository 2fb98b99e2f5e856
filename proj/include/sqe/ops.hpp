#pragma once

#include "sqe/common.hpp"
#include "sqe/rng.hpp"
#include "sqe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sqe {

// Probabilities below this are clamped inside log-domain metrics only;
// distributions themselves are never altered.
inline constexpr double kLogFloor = 1e-12;

template <typename T>
inline bool all_finite(const std::vector<T> & v) {
    for (const T & x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            return false;
        }
    }
    return true;
}

// Numerically stable softmax with temperature. Max-subtraction keeps the
// exponentials bounded; the result sums to 1 within 1e-6.
template <typename T>
std::vector<T> softmax(const std::vector<T> & logits, double temperature = 1.0) {
    require(!logits.empty(), "softmax: empty logits");
    require(all_finite(logits), "softmax: non-finite logit");
    require(temperature > 0.0, "softmax: temperature must be positive");

    double mx = static_cast<double>(logits[0]);
    for (const T & z : logits) {
        mx = std::max(mx, static_cast<double>(z));
    }
    std::vector<T> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
        out[i] = static_cast<T>(e);
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (T & p : out) {
        p = static_cast<T>(static_cast<double>(p) * inv);
    }
    return out;
}

template <typename T>
inline T sigmoid_scalar(T z) {
    const double x = static_cast<double>(z);
    if (x >= 0.0) {
        return static_cast<T>(1.0 / (1.0 + std::exp(-x)));
    }
    const double e = std::exp(x);
    return static_cast<T>(e / (1.0 + e));
}

// Element-wise sigmoid; no normalization, entries need not sum to 1.
template <typename T>
std::vector<T> sigmoid(const std::vector<T> & logits) {
    require(all_finite(logits), "sigmoid: non-finite logit");
    std::vector<T> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = sigmoid_scalar(logits[i]);
    }
    return out;
}

// Draws an index with probability proportional to dist[i]. The input must
// be a proper distribution (sums to 1 within 1e-6).
template <typename T>
size_t categorical_sample(const std::vector<T> & dist, RngStream & rng) {
    require(!dist.empty(), "categorical_sample: empty distribution");
    double sum = 0.0;
    for (const T & p : dist) {
        require(std::isfinite(static_cast<double>(p)) && p >= T(0),
                "categorical_sample: negative or non-finite probability");
        sum += static_cast<double>(p);
    }
    require(sum > 0.0, "categorical_sample: all-zero distribution");
    require(std::fabs(sum - 1.0) <= 1e-6, "categorical_sample: distribution does not sum to 1");

    const double u = rng.uniform() * sum;
    double acc = 0.0;
    for (size_t i = 0; i < dist.size(); ++i) {
        acc += static_cast<double>(dist[i]);
        if (u < acc) {
            return i;
        }
    }
    // Rounding pushed u past the accumulated total; return the last
    // positive-probability index.
    for (size_t i = dist.size(); i > 0; --i) {
        if (dist[i - 1] > T(0)) {
            return i - 1;
        }
    }
    return dist.size() - 1;
}

// y = W x (+ b). Reductions accumulate in double.
template <typename T>
std::vector<T> affine(const Tensor<T> & w, const std::vector<T> & x, const std::vector<T> * b = nullptr) {
    require(w.dims().size() == 2, "affine: W must be 2-D");
    require(w.cols() == x.size(), "affine: shape mismatch between W and x");
    if (b != nullptr) {
        require(b->size() == w.rows(), "affine: shape mismatch between W and b");
    }
    std::vector<T> y(w.rows());
    for (size_t r = 0; r < w.rows(); ++r) {
        const T * wr = w.row(r);
        double acc = b != nullptr ? static_cast<double>((*b)[r]) : 0.0;
        for (size_t c = 0; c < x.size(); ++c) {
            acc += static_cast<double>(wr[c]) * static_cast<double>(x[c]);
        }
        y[r] = static_cast<T>(acc);
    }
    return y;
}

template <typename T>
inline double dot(const T * a, const T * b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

} // namespace sqe
