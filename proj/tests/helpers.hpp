#pragma once

#include "foton/bjorck.hpp"
#include "foton/layers.hpp"
#include "foton/matrix.hpp"
#include "foton/rng.hpp"
#include "foton/tensor.hpp"

#include <cstdlib>
#include <string>

namespace testutil {

template <typename S>
foton::Matrix<S> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                               double scale = 1.0) {
    foton::Matrix<S> m(rows, cols);
    foton::Rng rng(seed);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = S(rng.gaussian() * scale);
    return m;
}

template <typename S>
foton::Tensor<S> random_tensor(foton::Shape shape, std::uint64_t seed, double scale = 1.0) {
    foton::Tensor<S> t(std::move(shape));
    foton::Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = S(rng.gaussian() * scale);
    return t;
}

// Reference triple-loop product, deliberately independent of the library's
// matmul path.
template <typename S>
foton::Matrix<S> naive_matmul(const foton::Matrix<S> &a, const foton::Matrix<S> &b) {
    foton::Matrix<S> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            S acc = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

template <typename S>
double max_abs_diff(const foton::Matrix<S> &a, const foton::Matrix<S> &b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

template <typename S>
double max_abs_diff(const foton::Tensor<S> &a, const foton::Tensor<S> &b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

// A dense stack with orthogonalized weights, Identity activations unless
// told otherwise. Widths include the input width at position 0.
template <typename S>
foton::Network<S> dense_network(const std::vector<std::size_t> &widths, std::uint64_t seed,
                                foton::ActKind hidden_act = foton::ActKind::Identity,
                                foton::ActKind out_act = foton::ActKind::Identity,
                                bool orthogonal = true) {
    foton::Network<S> net;
    net.input_shape = {widths.front()};
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        foton::DenseLayer<S> d;
        d.weight = orthogonal
                       ? foton::orthogonal_init<S>(widths[l + 1], widths[l],
                                                   foton::derive_seed(seed, l))
                       : foton::gaussian_matrix<S>(widths[l + 1], widths[l],
                                                   foton::derive_seed(seed, l),
                                                   1.0 / std::sqrt(double(widths[l])));
        d.act.kind = (l + 2 == widths.size()) ? out_act : hidden_act;
        net.layers.push_back(d);
    }
    return net;
}

inline std::string data_dir() {
    const char *env = std::getenv("FOTON_DATA_DIR");
    return env && *env ? env : "data";
}

} // namespace testutil
