#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "foton/common.hpp"

namespace foton {

// Dense n-dimensional array, contiguous row-major. The universal value
// carrier for activations, batches and convolution kernels.
template <typename S> class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

    Tensor(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape &shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }

    S *data() { return data_.data(); }
    const S *data() const { return data_.data(); }
    S &operator[](std::size_t i) { return data_[i]; }
    const S &operator[](std::size_t i) const { return data_[i]; }

    // Flat index helpers for the layouts used throughout: (n, d) matrices
    // and (n, c, h, w) image batches.
    S &at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const S &at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    S &at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const S &at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool operator==(const Tensor &o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    Shape shape_;
    std::vector<S> data_;
};

template <typename S> Tensor<S> operator+(const Tensor<S> &a, const Tensor<S> &b) {
    if (a.shape() != b.shape())
        throw ShapeError("tensor add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

template <typename S> Tensor<S> operator-(const Tensor<S> &a, const Tensor<S> &b) {
    if (a.shape() != b.shape())
        throw ShapeError("tensor sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

template <typename S> Tensor<S> operator*(S s, const Tensor<S> &a) {
    Tensor<S> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

template <typename S> S dot(const Tensor<S> &a, const Tensor<S> &b) {
    if (a.shape() != b.shape())
        throw ShapeError("tensor dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    S acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <typename S> S norm2(const Tensor<S> &a) {
    S acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
    return std::sqrt(acc);
}

template <typename S> S max_abs(const Tensor<S> &a) {
    S m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

// Cosine similarity in [-1, 1]. If exactly one argument is zero the result
// is 0 and *degenerate is set; both zero is an error.
template <typename S>
double cosine_similarity(const Tensor<S> &u, const Tensor<S> &v, bool *degenerate = nullptr) {
    if (u.shape() != v.shape())
        throw ShapeError("cosine_similarity: " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
    double uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += double(u[i]) * double(u[i]);
        vv += double(v[i]) * double(v[i]);
        uv += double(u[i]) * double(v[i]);
    }
    if (degenerate) *degenerate = false;
    if (uu == 0.0 && vv == 0.0)
        throw DegenerateInputError("cosine_similarity: both inputs are zero");
    if (uu == 0.0 || vv == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    double c = uv / (std::sqrt(uu) * std::sqrt(vv));
    return std::clamp(c, -1.0, 1.0);
}

} // namespace foton
