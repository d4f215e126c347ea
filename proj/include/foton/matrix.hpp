#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "foton/common.hpp"
#include "foton/tensor.hpp"

namespace foton {

namespace detail {
template <typename S>
using EigenMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using EigenCMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
} // namespace detail

// C(m x n) = A(m x k) * B(k x n). All buffers row-major, C preallocated.
template <typename S>
void gemm_nn(const S *a, std::size_t m, std::size_t k, const S *b, std::size_t n, S *c) {
    detail::EigenCMap<S> A(a, m, k);
    detail::EigenCMap<S> B(b, k, n);
    detail::EigenMap<S> C(c, m, n);
    C.noalias() = A * B;
}

// C(m x n) = A(m x k) * B(n x k)^T
template <typename S>
void gemm_nt(const S *a, std::size_t m, std::size_t k, const S *b, std::size_t n, S *c) {
    detail::EigenCMap<S> A(a, m, k);
    detail::EigenCMap<S> B(b, n, k);
    detail::EigenMap<S> C(c, m, n);
    C.noalias() = A * B.transpose();
}

// C(m x n) = A(k x m)^T * B(k x n)
template <typename S>
void gemm_tn(const S *a, std::size_t k, std::size_t m, const S *b, std::size_t n, S *c) {
    detail::EigenCMap<S> A(a, k, m);
    detail::EigenCMap<S> B(b, k, n);
    detail::EigenMap<S> C(c, m, n);
    C.noalias() = A.transpose() * B;
}

// Dense matrix of weights. Row-major; `orthogonalized` marks that the Gram
// matrix on the smaller dimension was within tolerance when last projected.
template <typename S> class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, S(0)) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<S> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("matrix data length does not match " + std::to_string(rows_) +
                             "x" + std::to_string(cols_));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = S(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    S *data() { return data_.data(); }
    const S *data() const { return data_.data(); }

    S &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const S &operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    bool orthogonalized() const { return orthogonalized_; }
    void set_orthogonalized(bool v) { orthogonalized_ = v; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool operator==(const Matrix &o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<S> data_;
    bool orthogonalized_ = false;
};

template <typename S> Matrix<S> matmul(const Matrix<S> &a, const Matrix<S> &b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ, " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    Matrix<S> c(a.rows(), b.cols());
    gemm_nn(a.data(), a.rows(), a.cols(), b.data(), b.cols(), c.data());
    return c;
}

// y = W x
template <typename S> std::vector<S> matvec(const Matrix<S> &w, const std::vector<S> &x) {
    if (x.size() != w.cols())
        throw ShapeError("matvec: vector length " + std::to_string(x.size()) +
                         " vs matrix cols " + std::to_string(w.cols()));
    std::vector<S> y(w.rows(), S(0));
    for (std::size_t i = 0; i < w.rows(); ++i) {
        S acc = 0;
        const S *row = w.data() + i * w.cols();
        for (std::size_t j = 0; j < w.cols(); ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

// y = W^T s
template <typename S> std::vector<S> matvec_t(const Matrix<S> &w, const std::vector<S> &s) {
    if (s.size() != w.rows())
        throw ShapeError("matvec_t: vector length " + std::to_string(s.size()) +
                         " vs matrix rows " + std::to_string(w.rows()));
    std::vector<S> y(w.cols(), S(0));
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const S *row = w.data() + i * w.cols();
        for (std::size_t j = 0; j < w.cols(); ++j) y[j] += row[j] * s[i];
    }
    return y;
}

template <typename S> Matrix<S> operator+(const Matrix<S> &a, const Matrix<S> &b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("matrix add: shape mismatch");
    Matrix<S> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    c.set_orthogonalized(false);
    return c;
}

template <typename S> Matrix<S> operator-(const Matrix<S> &a, const Matrix<S> &b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("matrix sub: shape mismatch");
    Matrix<S> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    c.set_orthogonalized(false);
    return c;
}

template <typename S> Matrix<S> operator*(S s, const Matrix<S> &a) {
    Matrix<S> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    c.set_orthogonalized(false);
    return c;
}

template <typename S> S frobenius_norm(const Matrix<S> &a) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a.data()[i]) * double(a.data()[i]);
    return S(std::sqrt(acc));
}

template <typename S> S max_abs(const Matrix<S> &a) {
    S m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
    return m;
}

template <typename S> Tensor<S> to_tensor(const Matrix<S> &m) {
    return Tensor<S>({m.rows(), m.cols()},
                     std::vector<S>(m.data(), m.data() + m.size()));
}

} // namespace foton
