#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/matrix.hpp"
#include "foton/rng.hpp"

namespace foton {

// Gram matrix on the smaller dimension: W W^T if rows <= cols, else W^T W.
// Semi-orthogonality (Gram == I on this side) is the only satisfiable
// orientation for rectangular matrices and is the one the update rules need
// whenever widths are non-increasing.
template <typename S> Matrix<S> gram_matrix(const Matrix<S> &w) {
    if (w.rows() <= w.cols()) {
        Matrix<S> g(w.rows(), w.rows());
        gemm_nt(w.data(), w.rows(), w.cols(), w.data(), w.rows(), g.data());
        return g;
    }
    Matrix<S> g(w.cols(), w.cols());
    gemm_tn(w.data(), w.rows(), w.cols(), w.data(), w.cols(), g.data());
    return g;
}

template <typename S> double gram_residual(const Matrix<S> &w) {
    Matrix<S> g = gram_matrix(w);
    double acc = 0;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            double d = double(g(i, j)) - (i == j ? 1.0 : 0.0);
            acc += d * d;
        }
    return std::sqrt(acc);
}

// Power-iteration estimate of the largest singular value. Deterministic:
// fixed start vector, fixed iteration count.
template <typename S> double spectral_norm_estimate(const Matrix<S> &w, int iters = 30) {
    Matrix<S> g = gram_matrix(w); // symmetric PSD, top eigenvalue = sigma_max^2
    const std::size_t n = g.rows();
    std::vector<double> v(n), gv(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 1e-3 * double(i % 97);
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += double(g(i, j)) * v[j];
            gv[i] = acc;
        }
        double nrm = 0;
        for (double x : gv) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = gv[i] / nrm;
        lambda = nrm;
    }
    return std::sqrt(lambda);
}

// Divides by an upper bound on sigma_max (power-iteration estimate * 1.01,
// floor 1.0) so that the Bjorck iteration's sigma_max < sqrt(3) convergence
// condition holds with ample slack.
template <typename S> Matrix<S> spectral_rescale(const Matrix<S> &w) {
    if (w.size() == 0) throw ShapeError("spectral_rescale: empty matrix");
    bool all_zero = true;
    for (std::size_t i = 0; i < w.size() && all_zero; ++i)
        if (w.data()[i] != S(0)) all_zero = false;
    if (all_zero)
        throw DegenerateInputError("spectral_rescale: all-zero matrix has no spectral scale");
    double s = std::max(1.0, spectral_norm_estimate(w) * 1.01);
    Matrix<S> out = w;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = S(double(out.data()[i]) / s);
    out.set_orthogonalized(false);
    return out;
}

// Bjorck-Bowie iteration W <- W (I + beta (I - W^T W)), applied on the
// orientation whose Gram sits on the smaller dimension. Converges
// quadratically near the orthogonal manifold for sigma_max < sqrt(3).
template <typename S>
Matrix<S> bjorck_orthogonalize(const Matrix<S> &w0, int iters, double beta = 0.5) {
    if (iters < 1) throw ConfigError("bjorck_orthogonalize: iters must be >= 1");
    Matrix<S> w = w0;
    const bool gram_on_rows = w.rows() <= w.cols();
    const std::size_t m = std::min(w.rows(), w.cols());
    const double eps = double(std::numeric_limits<S>::epsilon());
    const double floor = 20.0 * eps * std::sqrt(double(m));
    double prev = -1.0;
    int rises = 0;
    for (int it = 0; it < iters; ++it) {
        Matrix<S> g = gram_matrix(w);
        double res = 0;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) {
                double d = double(g(i, j)) - (i == j ? 1.0 : 0.0);
                res += d * d;
            }
        res = std::sqrt(res);
        if (!std::isfinite(res))
            throw ConvergenceError("bjorck_orthogonalize: non-finite Gram residual at iteration " +
                                   std::to_string(it));
        // genuine divergence grows geometrically; jitter at the rounding
        // floor does not count
        if (prev >= 0.0 && res > prev * 1.1 && res > 50.0 * floor) {
            if (++rises >= 2) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.3e -> %.3e", prev, res);
                throw ConvergenceError(
                    std::string("bjorck_orthogonalize: residual grew for 2 consecutive "
                                "iterations (") + buf + ")");
            }
        } else {
            rises = 0;
        }
        prev = res;
        if (res < floor) break; // at the rounding floor, nothing left to do

        // M = I + beta (I - G)
        Matrix<S> m(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) {
                double v = -beta * double(g(i, j));
                if (i == j) v += 1.0 + beta;
                m(i, j) = S(v);
            }
        Matrix<S> next(w.rows(), w.cols());
        if (gram_on_rows)
            gemm_nn(m.data(), m.rows(), m.cols(), w.data(), w.cols(), next.data());
        else
            gemm_nn(w.data(), w.rows(), w.cols(), m.data(), m.cols(), next.data());
        w = std::move(next);
    }
    w.set_orthogonalized(gram_residual(w) <= Tol<S>::orth);
    return w;
}

template <typename S> Matrix<S> gaussian_matrix(std::size_t rows, std::size_t cols,
                                                std::uint64_t seed, double stddev) {
    Matrix<S> w(rows, cols);
    Rng rng(seed);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = S(rng.gaussian() * stddev);
    return w;
}

// Gaussian sample projected onto the semi-orthogonal manifold. Runs the
// Bjorck iteration past the spec floor of 1e-6 down to near machine
// precision; the equivalence tests lean on that headroom.
template <typename S>
Matrix<S> orthogonal_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    if (rows < 1 || cols < 1) throw ShapeError("orthogonal_init: extents must be >= 1");
    Matrix<S> w = gaussian_matrix<S>(rows, cols, seed, 1.0);
    w = spectral_rescale(w);
    for (int round = 0; round < 8; ++round) {
        w = bjorck_orthogonalize(w, 25);
        if (gram_residual(w) < Tol<S>::orth_init) break;
    }
    w.set_orthogonalized(true);
    return w;
}

} // namespace foton
