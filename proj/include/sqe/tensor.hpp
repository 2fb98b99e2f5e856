#pragma once

#include "sqe/common.hpp"

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace sqe {

// Dense row-major tensor. Parameters and activations are float in
// production; tests instantiate double for finite-difference checks.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> dims, T fill = T(0)) : dims_(std::move(dims)) {
        size_t n = 1;
        for (size_t d : dims_) {
            require(d > 0, "Tensor: dims must be positive");
            n *= d;
        }
        data_.assign(n, fill);
    }

    const std::vector<size_t> & dims() const { return dims_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T * data() { return data_.data(); }
    const T * data() const { return data_.data(); }
    std::vector<T> & vec() { return data_; }
    const std::vector<T> & vec() const { return data_; }

    T & operator[](size_t i) { return data_[i]; }
    const T & operator[](size_t i) const { return data_[i]; }

    // 2-D accessors (row-major).
    size_t rows() const { return dims_.empty() ? 0 : dims_[0]; }
    size_t cols() const { return dims_.size() < 2 ? 1 : dims_[1]; }
    T * row(size_t r) { return data_.data() + r * cols(); }
    const T * row(size_t r) const { return data_.data() + r * cols(); }
    T & at(size_t r, size_t c) { return data_[r * cols() + c]; }
    const T & at(size_t r, size_t c) const { return data_[r * cols() + c]; }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool all_finite() const {
        for (const T & v : data_) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    bool same_shape(const Tensor & o) const { return dims_ == o.dims_; }

  private:
    std::vector<size_t> dims_;
    std::vector<T> data_;
};

} // namespace sqe
