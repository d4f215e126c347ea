#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "foton/activation.hpp"
#include "foton/bcop.hpp"
#include "foton/bjorck.hpp"
#include "foton/common.hpp"
#include "foton/conv_ops.hpp"
#include "foton/matrix.hpp"
#include "foton/rng.hpp"
#include "foton/tensor.hpp"

namespace foton {

template <typename S> struct DenseLayer {
    Matrix<S> weight; // out x in
    Activation act;
    double dropout_rate = 0.0;
};

template <typename S> struct ConvLayer {
    Tensor<S> kernel; // (out_ch, in_ch, kh, kw)
    std::size_t pad = 1;
    Activation act;
    std::optional<BcopParams<S>> bcop; // present iff orthogonal parametrization enabled
};

struct PoolLayer {
    std::size_t ph = 2, pw = 2; // scale = sqrt(ph * pw), fixed by orthogonality
};

template <typename S> using Layer = std::variant<DenseLayer<S>, ConvLayer<S>, PoolLayer>;

template <typename S> struct Network {
    Shape input_shape; // per-sample, e.g. {784} or {1, 28, 28}
    std::vector<Layer<S>> layers;

    std::size_t depth() const { return layers.size(); }
};

// Per-sample shapes flowing through the network; index 0 is the input shape,
// index l+1 the output shape of layer l.
template <typename S> std::vector<Shape> infer_shapes(const Network<S> &net) {
    std::vector<Shape> shapes{net.input_shape};
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Shape &in = shapes.back();
        const std::size_t numel = shape_numel(in);
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            if (d.weight.cols() != numel)
                throw ShapeError("layer " + std::to_string(l) + ": dense expects " +
                                 std::to_string(d.weight.cols()) + " features, gets " +
                                 shape_str(in));
            shapes.push_back({d.weight.rows()});
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            if (in.size() != 3)
                throw ShapeError("layer " + std::to_string(l) + ": conv expects (c, h, w) input");
            if (in[0] != cl.kernel.extent(1))
                throw ShapeError("layer " + std::to_string(l) + ": conv input channels " +
                                 std::to_string(in[0]) + " vs kernel channels " +
                                 std::to_string(cl.kernel.extent(1)));
            const std::size_t kh = cl.kernel.extent(2), kw = cl.kernel.extent(3);
            if (in[1] + 2 * cl.pad < kh || in[2] + 2 * cl.pad < kw)
                throw ShapeError("layer " + std::to_string(l) + ": input too small for kernel");
            shapes.push_back({cl.kernel.extent(0), in[1] + 2 * cl.pad - kh + 1,
                              in[2] + 2 * cl.pad - kw + 1});
        } else {
            const auto &p = std::get<PoolLayer>(net.layers[l]);
            if (in.size() != 3)
                throw ShapeError("layer " + std::to_string(l) + ": pool expects (c, h, w) input");
            if (in[1] % p.ph != 0 || in[2] % p.pw != 0)
                throw ShapeError("layer " + std::to_string(l) + ": extents " + shape_str(in) +
                                 " not divisible by pool window");
            shapes.push_back({in[0], in[1] / p.ph, in[2] / p.pw});
        }
    }
    return shapes;
}

template <typename S> Shape batch_shape(const Shape &sample, std::size_t n) {
    Shape s{n};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

template <typename S>
Tensor<S> reshape_batch(const Tensor<S> &t, const Shape &sample) {
    return t.reshaped(batch_shape<S>(sample, t.extent(0)));
}

// Clean and modulated activations of one optimization step. Dropout masks
// are drawn once, on the clean pass, and reused verbatim by the modulated
// pass so the two passes differ only through the error projection.
template <typename S> struct ForwardTrace {
    Tensor<S> input, input_err;
    std::vector<Tensor<S>> pre, post;
    std::vector<Tensor<S>> pre_err, post_err;
    std::vector<Tensor<S>> masks; // empty tensor for layers without dropout
    bool has_err = false;
};

// pre = W x (flattened input), post = sigma(pre), mask applied after the
// activation when given.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> dense_forward(const DenseLayer<S> &layer, const Tensor<S> &input,
                                              const Tensor<S> *mask = nullptr) {
    const std::size_t n = input.extent(0);
    const std::size_t d = input.size() / n;
    if (d != layer.weight.cols())
        throw ShapeError("dense_forward: input features " + std::to_string(d) +
                         " vs weight cols " + std::to_string(layer.weight.cols()));
    Tensor<S> pre({n, layer.weight.rows()});
    gemm_nt(input.data(), n, d, layer.weight.data(), layer.weight.rows(), pre.data());
    Tensor<S> post = layer.act.apply(pre);
    if (mask && mask->size()) {
        if (mask->shape() != post.shape())
            throw ShapeError("dense_forward: dropout mask shape mismatch");
        for (std::size_t i = 0; i < post.size(); ++i) post[i] *= (*mask)[i];
    }
    return {std::move(pre), std::move(post)};
}

// W^T s. Composition with the activation derivative is the caller's job.
template <typename S>
Tensor<S> dense_adjoint(const DenseLayer<S> &layer, const Tensor<S> &signal) {
    const std::size_t n = signal.extent(0);
    const std::size_t d = signal.size() / n;
    if (d != layer.weight.rows())
        throw ShapeError("dense_adjoint: signal features " + std::to_string(d) +
                         " vs weight rows " + std::to_string(layer.weight.rows()));
    Tensor<S> out({n, layer.weight.cols()});
    gemm_nn(signal.data(), n, d, layer.weight.data(), layer.weight.cols(), out.data());
    return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> conv_forward(const ConvLayer<S> &layer, const Tensor<S> &input) {
    Tensor<S> pre = conv2d_forward(input, layer.kernel, layer.pad);
    Tensor<S> post = layer.act.apply(pre);
    return {std::move(pre), std::move(post)};
}

// conv*_{input}(signal): gradient of <signal, k * input> with respect to k.
template <typename S>
Tensor<S> conv_adjoint(const Tensor<S> &layer_input, const Tensor<S> &signal, std::size_t kh,
                       std::size_t kw, std::size_t pad) {
    return conv2d_kernel_adjoint(layer_input, signal, kh, kw, pad);
}

template <typename S> Tensor<S> pool_forward(const PoolLayer &layer, const Tensor<S> &input) {
    return avg_pool_forward(input, layer.ph, layer.pw);
}

namespace detail {
template <typename S>
Tensor<S> dropout_mask(const Shape &shape, double rate, Rng &rng) {
    Tensor<S> m(shape);
    const S keep = S(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = rng.uniform() < rate ? S(0) : keep;
    return m;
}
} // namespace detail

// Clean pass. When `dropout_rng` is given, masks are drawn for dense layers
// with a nonzero rate and recorded in the trace; evaluation passes leave it
// null and run maskless.
template <typename S>
ForwardTrace<S> forward_clean(const Network<S> &net, const Tensor<S> &x,
                              Rng *dropout_rng = nullptr) {
    auto shapes = infer_shapes(net);
    const std::size_t n = x.extent(0);
    ForwardTrace<S> tr;
    tr.input = x;
    tr.masks.assign(net.layers.size(), Tensor<S>());
    Tensor<S> cur = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            cur = cur.reshaped({n, cur.size() / n});
            if (dropout_rng && d.dropout_rate > 0.0 && l + 1 < net.layers.size())
                tr.masks[l] = detail::dropout_mask<S>({n, d.weight.rows()}, d.dropout_rate,
                                                      *dropout_rng);
            auto [pre, post] = dense_forward(d, cur, &tr.masks[l]);
            tr.pre.push_back(pre);
            tr.post.push_back(post);
            cur = post;
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            cur = reshape_batch(cur, shapes[l]);
            auto [pre, post] = conv_forward(cl, cur);
            tr.pre.push_back(pre);
            tr.post.push_back(post);
            cur = post;
        } else {
            const auto &p = std::get<PoolLayer>(net.layers[l]);
            cur = reshape_batch(cur, shapes[l]);
            Tensor<S> pooled = pool_forward(p, cur);
            tr.pre.push_back(pooled);
            tr.post.push_back(pooled);
            cur = pooled;
        }
    }
    return tr;
}

// Modulated pass on x_err, reusing the clean pass's dropout masks.
template <typename S>
void forward_modulated(const Network<S> &net, ForwardTrace<S> &tr, const Tensor<S> &x_err) {
    auto shapes = infer_shapes(net);
    const std::size_t n = x_err.extent(0);
    if (x_err.shape() != tr.input.shape())
        throw ShapeError("forward_modulated: modulated input shape " + shape_str(x_err.shape()) +
                         " vs clean input " + shape_str(tr.input.shape()));
    tr.input_err = x_err;
    tr.pre_err.clear();
    tr.post_err.clear();
    Tensor<S> cur = x_err;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            cur = cur.reshaped({n, cur.size() / n});
            auto [pre, post] = dense_forward(d, cur, &tr.masks[l]);
            tr.pre_err.push_back(pre);
            tr.post_err.push_back(post);
            cur = post;
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            cur = reshape_batch(cur, shapes[l]);
            auto [pre, post] = conv_forward(cl, cur);
            tr.pre_err.push_back(pre);
            tr.post_err.push_back(post);
            cur = post;
        } else {
            const auto &p = std::get<PoolLayer>(net.layers[l]);
            cur = reshape_batch(cur, shapes[l]);
            Tensor<S> pooled = pool_forward(p, cur);
            tr.pre_err.push_back(pooled);
            tr.post_err.push_back(pooled);
            cur = pooled;
        }
    }
    tr.has_err = true;
}

// Transports a batch signal from the output space of layer `l` to its input
// space through the linear part's adjoint only (no activation derivative).
template <typename S>
Tensor<S> layer_adjoint(const Network<S> &net, const std::vector<Shape> &shapes, std::size_t l,
                        const Tensor<S> &signal) {
    const std::size_t n = signal.extent(0);
    if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
        const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
        return dense_adjoint(d, signal.reshaped({n, signal.size() / n}));
    }
    if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
        const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
        const Shape &in = shapes[l];
        return conv2d_input_adjoint(reshape_batch(signal, shapes[l + 1]), cl.kernel, cl.pad,
                                    in[1], in[2]);
    }
    const auto &p = std::get<PoolLayer>(net.layers[l]);
    return avg_pool_adjoint(reshape_batch(signal, shapes[l + 1]), p.ph, p.pw);
}

// Full adjoint chain W_1^T W_2^T ... W_L^T applied to an output-shaped batch.
template <typename S>
Tensor<S> adjoint_chain(const Network<S> &net, const Tensor<S> &signal) {
    auto shapes = infer_shapes(net);
    Tensor<S> cur = signal;
    for (std::size_t l = net.layers.size(); l-- > 0;)
        cur = layer_adjoint(net, shapes, l, cur);
    return reshape_batch(cur, net.input_shape);
}

// Spectral rescale + Bjorck projection of every dense weight and every
// BCOP factor set; kernels of parametrized conv layers are rebuilt.
template <typename S> void orthogonalize_network(Network<S> &net, int iters) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        try {
            if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
                auto &d = std::get<DenseLayer<S>>(net.layers[l]);
                d.weight = bjorck_orthogonalize(spectral_rescale(d.weight), iters);
            } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
                auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
                if (cl.bcop) {
                    bcop_orthogonalize(*cl.bcop, iters);
                    cl.kernel = bcop_materialize(*cl.bcop);
                }
            }
        } catch (const ConvergenceError &e) {
            throw ConvergenceError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
}

template <typename S> std::size_t output_dim(const Network<S> &net) {
    auto shapes = infer_shapes(net);
    return shape_numel(shapes.back());
}

} // namespace foton
