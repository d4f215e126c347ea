#pragma once

#include <cmath>

#include "foton/common.hpp"
#include "foton/tensor.hpp"

namespace foton {

// Cross-correlation with zero padding, stride 1.
// x: (N, C, H, W), kernel: (O, C, kh, kw) -> (N, O, H', W')
template <typename S>
Tensor<S> conv2d_forward(const Tensor<S> &x, const Tensor<S> &kernel, std::size_t pad) {
    if (x.rank() != 4 || kernel.rank() != 4)
        throw ShapeError("conv2d_forward: expected rank-4 input and kernel");
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t o = kernel.extent(0), kc = kernel.extent(1);
    const std::size_t kh = kernel.extent(2), kw = kernel.extent(3);
    if (kc != c)
        throw ShapeError("conv2d_forward: input channels " + std::to_string(c) +
                         " vs kernel channels " + std::to_string(kc));
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw ShapeError("conv2d_forward: spatial extents too small for kernel");
    const std::size_t ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1;

    Tensor<S> y({n, o, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    S acc = 0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t p = 0; p < kh; ++p) {
                            const std::ptrdiff_t ii = std::ptrdiff_t(i + p) - std::ptrdiff_t(pad);
                            if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                            for (std::size_t q = 0; q < kw; ++q) {
                                const std::ptrdiff_t jj =
                                    std::ptrdiff_t(j + q) - std::ptrdiff_t(pad);
                                if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
                                acc += kernel.at4(oc, ic, p, q) *
                                       x.at4(s, ic, std::size_t(ii), std::size_t(jj));
                            }
                        }
                    y.at4(s, oc, i, j) = acc;
                }
    return y;
}

// Adjoint with respect to the kernel: the gradient of <signal, k * x> in k,
// summed over the batch. signal: (N, O, H', W') -> (O, C, kh, kw)
template <typename S>
Tensor<S> conv2d_kernel_adjoint(const Tensor<S> &x, const Tensor<S> &signal, std::size_t kh,
                                std::size_t kw, std::size_t pad) {
    if (x.rank() != 4 || signal.rank() != 4)
        throw ShapeError("conv2d_kernel_adjoint: expected rank-4 tensors");
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t o = signal.extent(1), ho = signal.extent(2), wo = signal.extent(3);
    if (signal.extent(0) != n)
        throw ShapeError("conv2d_kernel_adjoint: batch sizes differ");
    if (ho != h + 2 * pad - kh + 1 || wo != w + 2 * pad - kw + 1)
        throw ShapeError("conv2d_kernel_adjoint: signal shape " + shape_str(signal.shape()) +
                         " is not the conv output shape for input " + shape_str(x.shape()));

    Tensor<S> g({o, c, kh, kw});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const S sv = signal.at4(s, oc, i, j);
                    if (sv == S(0)) continue;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t p = 0; p < kh; ++p) {
                            const std::ptrdiff_t ii = std::ptrdiff_t(i + p) - std::ptrdiff_t(pad);
                            if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                            for (std::size_t q = 0; q < kw; ++q) {
                                const std::ptrdiff_t jj =
                                    std::ptrdiff_t(j + q) - std::ptrdiff_t(pad);
                                if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
                                g.at4(oc, ic, p, q) +=
                                    sv * x.at4(s, ic, std::size_t(ii), std::size_t(jj));
                            }
                        }
                }
    return g;
}

// Adjoint with respect to the input (the transposed convolution).
// signal: (N, O, H', W') -> (N, C, H, W)
template <typename S>
Tensor<S> conv2d_input_adjoint(const Tensor<S> &signal, const Tensor<S> &kernel,
                               std::size_t pad, std::size_t h, std::size_t w) {
    if (signal.rank() != 4 || kernel.rank() != 4)
        throw ShapeError("conv2d_input_adjoint: expected rank-4 tensors");
    const std::size_t n = signal.extent(0), o = signal.extent(1);
    const std::size_t ho = signal.extent(2), wo = signal.extent(3);
    const std::size_t c = kernel.extent(1), kh = kernel.extent(2), kw = kernel.extent(3);
    if (kernel.extent(0) != o)
        throw ShapeError("conv2d_input_adjoint: signal channels vs kernel output channels");
    if (ho != h + 2 * pad - kh + 1 || wo != w + 2 * pad - kw + 1)
        throw ShapeError("conv2d_input_adjoint: signal/kernel shapes inconsistent with input " +
                         std::to_string(h) + "x" + std::to_string(w));

    Tensor<S> g({n, c, h, w});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const S sv = signal.at4(s, oc, i, j);
                    if (sv == S(0)) continue;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t p = 0; p < kh; ++p) {
                            const std::ptrdiff_t ii = std::ptrdiff_t(i + p) - std::ptrdiff_t(pad);
                            if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                            for (std::size_t q = 0; q < kw; ++q) {
                                const std::ptrdiff_t jj =
                                    std::ptrdiff_t(j + q) - std::ptrdiff_t(pad);
                                if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
                                g.at4(s, ic, std::size_t(ii), std::size_t(jj)) +=
                                    sv * kernel.at4(oc, ic, p, q);
                            }
                        }
                }
    return g;
}

// Average pooling scaled by sqrt(ph*pw), which makes the induced operator
// row-orthogonal: each output row has ph*pw entries of 1/sqrt(ph*pw).
template <typename S>
Tensor<S> avg_pool_forward(const Tensor<S> &x, std::size_t ph, std::size_t pw) {
    if (x.rank() != 4) throw ShapeError("avg_pool_forward: expected rank-4 input");
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (h % ph != 0 || w % pw != 0)
        throw ShapeError("avg_pool_forward: spatial extents " + std::to_string(h) + "x" +
                         std::to_string(w) + " not divisible by window " + std::to_string(ph) +
                         "x" + std::to_string(pw));
    const std::size_t ho = h / ph, wo = w / pw;
    const S coeff = S(1.0 / std::sqrt(double(ph * pw))); // mean * sqrt(k) = sum / sqrt(k)

    Tensor<S> y({n, c, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    S acc = 0;
                    for (std::size_t p = 0; p < ph; ++p)
                        for (std::size_t q = 0; q < pw; ++q)
                            acc += x.at4(s, ch, i * ph + p, j * pw + q);
                    y.at4(s, ch, i, j) = acc * coeff;
                }
    return y;
}

template <typename S>
Tensor<S> avg_pool_adjoint(const Tensor<S> &signal, std::size_t ph, std::size_t pw) {
    if (signal.rank() != 4) throw ShapeError("avg_pool_adjoint: expected rank-4 signal");
    const std::size_t n = signal.extent(0), c = signal.extent(1);
    const std::size_t ho = signal.extent(2), wo = signal.extent(3);
    const S coeff = S(1.0 / std::sqrt(double(ph * pw)));

    Tensor<S> g({n, c, ho * ph, wo * pw});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const S sv = signal.at4(s, ch, i, j) * coeff;
                    for (std::size_t p = 0; p < ph; ++p)
                        for (std::size_t q = 0; q < pw; ++q)
                            g.at4(s, ch, i * ph + p, j * pw + q) = sv;
                }
    return g;
}

} // namespace foton
