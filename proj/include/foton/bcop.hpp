#pragma once

#include <vector>

#include "foton/bjorck.hpp"
#include "foton/common.hpp"
#include "foton/matrix.hpp"
#include "foton/tensor.hpp"

namespace foton {

// Block Convolution Orthogonal Parametrization. A k x k kernel is composed
// from one (c_out x c_in) semi-orthogonal channel matrix and, per spatial
// extent beyond 1, a paraunitary 2-tap factor [P, I-P] built from a
// column-orthogonal half-width matrix Q via the projector P = Q Q^T.
// The induced convolution operator is semi-orthogonal by construction;
// every output position whose receptive field is fully inside the input
// sees an exactly orthogonal row.
template <typename S> struct BcopParams {
    Matrix<S> channel;          // c_out x c_in
    std::vector<Matrix<S>> qs;  // 2*(ksize-1) factors, c_out x max(1, c_out/2)
    std::size_t ksize = 1;

    std::size_t c_out() const { return channel.rows(); }
    std::size_t c_in() const { return channel.cols(); }
};

template <typename S>
BcopParams<S> bcop_init(std::size_t c_out, std::size_t c_in, std::size_t ksize,
                        std::uint64_t seed) {
    if (ksize < 1) throw ShapeError("bcop_init: kernel size must be >= 1");
    BcopParams<S> p;
    p.ksize = ksize;
    p.channel = orthogonal_init<S>(c_out, c_in, derive_seed(seed, 0));
    const std::size_t r = std::max<std::size_t>(1, c_out / 2);
    for (std::size_t i = 0; i < 2 * (ksize - 1); ++i)
        p.qs.push_back(orthogonal_init<S>(c_out, r, derive_seed(seed, i + 1)));
    return p;
}

template <typename S> void bcop_orthogonalize(BcopParams<S> &p, int iters) {
    p.channel = bjorck_orthogonalize(spectral_rescale(p.channel), iters);
    for (auto &q : p.qs) q = bjorck_orthogonalize(spectral_rescale(q), iters);
}

namespace detail {

// P = Q Q^T
template <typename S> Matrix<S> projector(const Matrix<S> &q) {
    Matrix<S> p(q.rows(), q.rows());
    gemm_nt(q.data(), q.rows(), q.cols(), q.data(), q.rows(), p.data());
    return p;
}

// Taps of a spatial stage, laid out on a (th x tw) grid of channel matrices.
template <typename S> struct TapGrid {
    std::size_t th = 1, tw = 1;
    std::vector<Matrix<S>> taps; // row-major over (th, tw)

    Matrix<S> &at(std::size_t i, std::size_t j) { return taps[i * tw + j]; }
    const Matrix<S> &at(std::size_t i, std::size_t j) const { return taps[i * tw + j]; }
};

// Correlating with `grid` and then with the 2-tap factor {f0, f1} along one
// axis yields taps C[t] = sum_{b+a=t} F_b * K[a].
template <typename S>
TapGrid<S> compose_axis(const Matrix<S> &f0, const Matrix<S> &f1, const TapGrid<S> &k,
                        bool vertical) {
    TapGrid<S> out;
    out.th = k.th + (vertical ? 1 : 0);
    out.tw = k.tw + (vertical ? 0 : 1);
    out.taps.assign(out.th * out.tw, Matrix<S>(f0.rows(), k.taps[0].cols()));
    for (std::size_t i = 0; i < k.th; ++i)
        for (std::size_t j = 0; j < k.tw; ++j)
            for (int b = 0; b < 2; ++b) {
                const Matrix<S> &f = b == 0 ? f0 : f1;
                Matrix<S> prod = matmul(f, k.at(i, j));
                std::size_t oi = i + (vertical ? std::size_t(b) : 0);
                std::size_t oj = j + (vertical ? 0 : std::size_t(b));
                Matrix<S> &dst = out.at(oi, oj);
                for (std::size_t t = 0; t < dst.size(); ++t) dst.data()[t] += prod.data()[t];
            }
    return out;
}

template <typename S>
std::vector<TapGrid<S>> bcop_stages(const BcopParams<S> &p) {
    std::vector<TapGrid<S>> stages;
    TapGrid<S> g;
    g.taps = {p.channel};
    stages.push_back(g);
    for (std::size_t m = 0; m < p.qs.size(); ++m) {
        Matrix<S> pr = projector(p.qs[m]);
        Matrix<S> ip = Matrix<S>::identity(pr.rows()) - pr;
        bool vertical = m < p.ksize - 1;
        stages.push_back(compose_axis(pr, ip, stages.back(), vertical));
    }
    return stages;
}

} // namespace detail

// Builds the explicit (c_out, c_in, k, k) kernel from the factors.
template <typename S> Tensor<S> bcop_materialize(const BcopParams<S> &p) {
    const std::size_t r_expected = std::max<std::size_t>(1, p.c_out() / 2);
    if (p.qs.size() != 2 * (p.ksize - 1))
        throw ShapeError("bcop_materialize: expected " + std::to_string(2 * (p.ksize - 1)) +
                         " projector factors, got " + std::to_string(p.qs.size()));
    for (const auto &q : p.qs)
        if (q.rows() != p.c_out() || q.cols() != r_expected)
            throw ShapeError("bcop_materialize: projector factor shape " +
                             std::to_string(q.rows()) + "x" + std::to_string(q.cols()) +
                             " does not match " + std::to_string(p.c_out()) + "x" +
                             std::to_string(r_expected));

    auto stages = detail::bcop_stages(p);
    const auto &grid = stages.back();
    Tensor<S> kernel({p.c_out(), p.c_in(), p.ksize, p.ksize});
    for (std::size_t i = 0; i < p.ksize; ++i)
        for (std::size_t j = 0; j < p.ksize; ++j) {
            const Matrix<S> &tap = grid.at(i, j);
            for (std::size_t o = 0; o < p.c_out(); ++o)
                for (std::size_t c = 0; c < p.c_in(); ++c)
                    kernel.at4(o, c, i, j) = tap(o, c);
        }
    return kernel;
}

template <typename S> struct BcopDeltas {
    Matrix<S> channel;
    std::vector<Matrix<S>> qs;
};

// Pulls a kernel-space delta back to factor space (the transpose of the
// materialization map's Jacobian), so kernel-level update rules can drive
// the factor parameters directly.
template <typename S>
BcopDeltas<S> bcop_pullback(const BcopParams<S> &p, const Tensor<S> &dkernel) {
    if (dkernel.rank() != 4 || dkernel.extent(0) != p.c_out() ||
        dkernel.extent(1) != p.c_in() || dkernel.extent(2) != p.ksize ||
        dkernel.extent(3) != p.ksize)
        throw ShapeError("bcop_pullback: delta shape " + shape_str(dkernel.shape()) +
                         " does not match parametrized kernel");

    auto stages = detail::bcop_stages(p);

    detail::TapGrid<S> grad;
    grad.th = p.ksize;
    grad.tw = p.ksize;
    grad.taps.assign(p.ksize * p.ksize, Matrix<S>(p.c_out(), p.c_in()));
    for (std::size_t i = 0; i < p.ksize; ++i)
        for (std::size_t j = 0; j < p.ksize; ++j) {
            Matrix<S> &tap = grad.at(i, j);
            for (std::size_t o = 0; o < p.c_out(); ++o)
                for (std::size_t c = 0; c < p.c_in(); ++c)
                    tap(o, c) = dkernel.at4(o, c, i, j);
        }

    BcopDeltas<S> out;
    out.qs.resize(p.qs.size());
    for (std::size_t m = p.qs.size(); m-- > 0;) {
        const auto &prev = stages[m]; // stage before factor m was applied
        bool vertical = m < p.ksize - 1;
        Matrix<S> pr = detail::projector(p.qs[m]);

        // dF_b = sum_a dC[a+b] K[a]^T ; dK[a] = sum_b F_b^T dC[a+b]
        Matrix<S> df0(p.c_out(), p.c_out()), df1(p.c_out(), p.c_out());
        detail::TapGrid<S> dprev;
        dprev.th = prev.th;
        dprev.tw = prev.tw;
        dprev.taps.assign(prev.th * prev.tw, Matrix<S>(p.c_out(), p.c_in()));
        for (std::size_t i = 0; i < prev.th; ++i)
            for (std::size_t j = 0; j < prev.tw; ++j)
                for (int b = 0; b < 2; ++b) {
                    std::size_t oi = i + (vertical ? std::size_t(b) : 0);
                    std::size_t oj = j + (vertical ? 0 : std::size_t(b));
                    const Matrix<S> &dc = grad.at(oi, oj);

                    Matrix<S> contrib(p.c_out(), p.c_out());
                    gemm_nt(dc.data(), dc.rows(), dc.cols(), prev.at(i, j).data(), p.c_out(),
                            contrib.data());
                    Matrix<S> &df = b == 0 ? df0 : df1;
                    for (std::size_t t = 0; t < df.size(); ++t)
                        df.data()[t] += contrib.data()[t];

                    Matrix<S> back(p.c_out(), p.c_in());
                    const Matrix<S> f = b == 0 ? pr : Matrix<S>::identity(p.c_out()) - pr;
                    gemm_tn(f.data(), f.rows(), f.cols(), dc.data(), dc.cols(), back.data());
                    Matrix<S> &dst = dprev.at(i, j);
                    for (std::size_t t = 0; t < dst.size(); ++t)
                        dst.data()[t] += back.data()[t];
                }

        // F0 = P, F1 = I - P, P = Q Q^T  =>  dP = dF0 - dF1, dQ = (dP + dP^T) Q
        Matrix<S> dp = df0 - df1;
        Matrix<S> dps = dp + dp.transposed();
        Matrix<S> dq(p.qs[m].rows(), p.qs[m].cols());
        gemm_nn(dps.data(), dps.rows(), dps.cols(), p.qs[m].data(), p.qs[m].cols(), dq.data());
        out.qs[m] = std::move(dq);
        grad = std::move(dprev);
    }
    out.channel = grad.at(0, 0);
    return out;
}

} // namespace foton
