#pragma once

#include <optional>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/feedback.hpp"
#include "foton/layers.hpp"
#include "foton/loss.hpp"
#include "foton/tensor.hpp"

namespace foton {

enum class RuleKind { BP, FOTON, PEPITA, FA, DFA };

inline std::string rule_name(RuleKind r) {
    switch (r) {
    case RuleKind::BP: return "bp";
    case RuleKind::FOTON: return "foton";
    case RuleKind::PEPITA: return "pepita";
    case RuleKind::FA: return "fa";
    case RuleKind::DFA: return "dfa";
    }
    return "?";
}

inline RuleKind rule_from_name(const std::string &s) {
    if (s == "bp") return RuleKind::BP;
    if (s == "foton") return RuleKind::FOTON;
    if (s == "pepita") return RuleKind::PEPITA;
    if (s == "fa") return RuleKind::FA;
    if (s == "dfa") return RuleKind::DFA;
    throw ConfigError("unknown learning rule: " + s);
}

enum class PepitaVariant { Original, Modified };

// Which two-pass difference drives the update. The activation-level form
// pairs h_l - h_l^err with the presynaptic activation; the pre-activation
// form uses a_l - a_l^err. They coincide whenever the activation is the
// identity on the traversed piece; the piecewise-exact mode (GroupSort with
// per-sample feedback) needs the pre-activation form, which is also how the
// convolutional derivation is written.
enum class SignalLevel { Activation, PreActivation };

// Per-layer parameter deltas plus the transported signals that produced
// them. Deltas already include -eta and weight decay.
template <typename S> struct LayerDelta {
    std::optional<Matrix<S>> dense;
    std::optional<Tensor<S>> kernel;
};

template <typename S> struct UpdateSet {
    std::vector<LayerDelta<S>> deltas;
    std::vector<Tensor<S>> delta_h; // per-layer transported signal, batch-shaped
    std::string rule;
    double lr = 0.0;
    double weight_decay = 0.0;
};

// Per-layer fixed random feedback for FA (shaped like W_{l+1}^T) and DFA
// (projecting the output error to layer l). Never trained.
template <typename S> struct BaselineFeedback {
    std::vector<Matrix<S>> b;
};

template <typename S>
BaselineFeedback<S> make_fa_feedback(const Network<S> &net, std::uint64_t seed) {
    auto shapes = infer_shapes(net);
    BaselineFeedback<S> fb;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        const std::size_t rows = shape_numel(shapes[l + 1]);
        const std::size_t cols = shape_numel(shapes[l + 2]);
        Matrix<S> m(rows, cols);
        Rng rng(derive_seed(seed, l));
        const double bound = std::sqrt(6.0 / double(rows + cols));
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = S(rng.uniform(-bound, bound));
        fb.b.push_back(std::move(m));
    }
    return fb;
}

template <typename S>
BaselineFeedback<S> make_dfa_feedback(const Network<S> &net, std::uint64_t seed) {
    auto shapes = infer_shapes(net);
    const std::size_t out_d = shape_numel(shapes.back());
    BaselineFeedback<S> fb;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        const std::size_t rows = shape_numel(shapes[l + 1]);
        Matrix<S> m(rows, out_d);
        Rng rng(derive_seed(seed, l));
        const double bound = std::sqrt(6.0 / double(rows + out_d));
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = S(rng.uniform(-bound, bound));
        fb.b.push_back(std::move(m));
    }
    return fb;
}

// Runs the second forward pass on x - F(e), filling the err side of the
// trace. The clean pass for the same step must already be in `tr`.
template <typename S>
void modulated_forward(const Network<S> &net, const Tensor<S> &x, const Tensor<S> &e,
                       const FeedbackOperator<S> &f, ForwardTrace<S> &tr) {
    if (tr.pre.empty()) throw StateError("modulated_forward: clean trace missing");
    Tensor<S> proj = f.apply(net, &tr, e);
    if (proj.shape() != x.shape())
        throw ShapeError("modulated_forward: F output shape " + shape_str(proj.shape()) +
                         " vs input shape " + shape_str(x.shape()));
    forward_modulated(net, tr, x - proj);
}

namespace detail {

template <typename S>
Tensor<S> flat2(const Tensor<S> &t) {
    const std::size_t n = t.extent(0);
    return t.reshaped({n, t.size() / n});
}

// delta = -eta (signal^T presyn / n + decay * W)
template <typename S>
Matrix<S> dense_delta(const Matrix<S> &w, const Tensor<S> &signal, const Tensor<S> &presyn,
                      double lr, double decay) {
    const std::size_t n = signal.extent(0);
    const std::size_t out_d = signal.size() / n, in_d = presyn.size() / n;
    if (out_d != w.rows() || in_d != w.cols())
        throw ShapeError("dense update: delta " + std::to_string(out_d) + "x" +
                         std::to_string(in_d) + " vs weight " + std::to_string(w.rows()) + "x" +
                         std::to_string(w.cols()));
    Matrix<S> d(out_d, in_d);
    gemm_tn(signal.data(), n, out_d, presyn.data(), in_d, d.data());
    const S a = S(-lr / double(n)), b = S(-lr * decay);
    for (std::size_t i = 0; i < d.size(); ++i)
        d.data()[i] = a * d.data()[i] + b * w.data()[i];
    return d;
}

template <typename S>
Tensor<S> kernel_delta(const Tensor<S> &kernel, std::size_t pad, const Tensor<S> &signal,
                       const Tensor<S> &presyn, double lr, double decay) {
    const std::size_t n = signal.extent(0);
    Tensor<S> g = conv2d_kernel_adjoint(presyn, signal, kernel.extent(2), kernel.extent(3), pad);
    const S a = S(-lr / double(n)), b = S(-lr * decay);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = a * g[i] + b * kernel[i];
    return g;
}

} // namespace detail

// FOTON rule: hidden layers pair (h_l - h_l^err) with the clean previous
// activation; the last layer uses e and the clean h_{L-1}; convolution
// kernels get the adjoint-convolution analog of the same pairing.
template <typename S>
UpdateSet<S> foton_update(const Network<S> &net, const ForwardTrace<S> &tr, const Tensor<S> &e,
                          double lr, double weight_decay = 0.0,
                          SignalLevel level = SignalLevel::Activation) {
    if (!tr.has_err) throw StateError("foton_update: modulated trace missing");
    auto shapes = infer_shapes(net);
    const std::size_t L = net.layers.size();
    UpdateSet<S> u;
    u.rule = "foton";
    u.lr = lr;
    u.weight_decay = weight_decay;
    u.deltas.resize(L);
    u.delta_h.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        u.delta_h[l] = level == SignalLevel::Activation ? tr.post[l] - tr.post_err[l]
                                                        : tr.pre[l] - tr.pre_err[l];
        const Tensor<S> &signal = (l + 1 == L) ? e : u.delta_h[l];
        const Tensor<S> &presyn = (l == 0) ? tr.input : tr.post[l - 1];
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            u.deltas[l].dense = detail::dense_delta(d.weight, detail::flat2(signal),
                                                    detail::flat2(presyn), lr, weight_decay);
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            u.deltas[l].kernel =
                detail::kernel_delta(cl.kernel, cl.pad, reshape_batch(signal, shapes[l + 1]),
                                     reshape_batch(presyn, shapes[l]), lr, weight_decay);
        }
    }
    return u;
}

// PEPITA rule: the first layer pairs with the modulated input x - Fe
// (original variant) or the clean input (modified variant); hidden layers
// pair with the MODULATED previous activation; the last layer uses e.
template <typename S>
UpdateSet<S> pepita_update(const Network<S> &net, const ForwardTrace<S> &tr, const Tensor<S> &e,
                           double lr, double weight_decay = 0.0,
                           PepitaVariant variant = PepitaVariant::Modified) {
    if (!tr.has_err) throw StateError("pepita_update: modulated trace missing");
    auto shapes = infer_shapes(net);
    const std::size_t L = net.layers.size();
    UpdateSet<S> u;
    u.rule = "pepita";
    u.lr = lr;
    u.weight_decay = weight_decay;
    u.deltas.resize(L);
    u.delta_h.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        u.delta_h[l] = tr.post[l] - tr.post_err[l];
        const Tensor<S> &signal = (l + 1 == L) ? e : u.delta_h[l];
        const Tensor<S> &presyn =
            (l == 0) ? (variant == PepitaVariant::Original || L == 1 ? tr.input_err : tr.input)
                     : tr.post_err[l - 1];
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            u.deltas[l].dense = detail::dense_delta(d.weight, detail::flat2(signal),
                                                    detail::flat2(presyn), lr, weight_decay);
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            u.deltas[l].kernel =
                detail::kernel_delta(cl.kernel, cl.pad, reshape_batch(signal, shapes[l + 1]),
                                     reshape_batch(presyn, shapes[l]), lr, weight_decay);
        }
    }
    return u;
}

// Exact hand-derived backward pass. Serves as the oracle for every
// equivalence test; delta_h[l] is the true loss gradient in h_l.
template <typename S>
UpdateSet<S> bp_update(const Network<S> &net, const Tensor<S> &x, const Tensor<S> &target,
                       const LossKind &loss, double lr, double weight_decay = 0.0,
                       const ForwardTrace<S> *trace = nullptr) {
    ForwardTrace<S> local;
    const ForwardTrace<S> *tr = trace;
    if (!tr) {
        local = forward_clean(net, x);
        tr = &local;
    }
    auto shapes = infer_shapes(net);
    const std::size_t L = net.layers.size();
    UpdateSet<S> u;
    u.rule = "bp";
    u.lr = lr;
    u.weight_decay = weight_decay;
    u.deltas.resize(L);
    u.delta_h.resize(L);

    Tensor<S> d = compute_error(loss, detail::flat2(tr->post.back()), detail::flat2(target));
    for (std::size_t l = L; l-- > 0;) {
        u.delta_h[l] = d.reshaped(tr->post[l].shape());
        Tensor<S> da;
        if (std::holds_alternative<PoolLayer>(net.layers[l])) {
            da = u.delta_h[l];
        } else {
            // dropout scales post-activation values, so its mask enters here
            Tensor<S> dh = u.delta_h[l];
            if (tr->masks[l].size()) {
                for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= tr->masks[l][i];
            }
            if (std::holds_alternative<DenseLayer<S>>(net.layers[l]))
                da = std::get<DenseLayer<S>>(net.layers[l]).act.vjp(tr->pre[l], dh);
            else
                da = std::get<ConvLayer<S>>(net.layers[l]).act.vjp(tr->pre[l], dh);
        }
        const Tensor<S> &presyn = (l == 0) ? tr->input : tr->post[l - 1];
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            const auto &dl = std::get<DenseLayer<S>>(net.layers[l]);
            u.deltas[l].dense = detail::dense_delta(dl.weight, detail::flat2(da),
                                                    detail::flat2(presyn), lr, weight_decay);
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            const auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            u.deltas[l].kernel =
                detail::kernel_delta(cl.kernel, cl.pad, reshape_batch(da, shapes[l + 1]),
                                     reshape_batch(presyn, shapes[l]), lr, weight_decay);
        }
        if (l > 0) d = layer_adjoint(net, shapes, l, da);
    }
    return u;
}

// Feedback alignment: the BP recursion with W_{l+1}^T replaced by a fixed
// random B_l. Dense networks only.
template <typename S>
UpdateSet<S> fa_update(const Network<S> &net, const ForwardTrace<S> &tr, const Tensor<S> &e,
                       const BaselineFeedback<S> &fb, double lr, double weight_decay = 0.0) {
    const std::size_t L = net.layers.size();
    if (fb.b.size() + 1 != L)
        throw ShapeError("fa_update: expected " + std::to_string(L - 1) + " feedback matrices");
    UpdateSet<S> u;
    u.rule = "fa";
    u.lr = lr;
    u.weight_decay = weight_decay;
    u.deltas.resize(L);
    u.delta_h.resize(L);

    Tensor<S> dh = e;
    Tensor<S> da;
    for (std::size_t l = L; l-- > 0;) {
        if (!std::holds_alternative<DenseLayer<S>>(net.layers[l]))
            throw ShapeError("fa_update: dense layers only");
        const auto &dl = std::get<DenseLayer<S>>(net.layers[l]);
        u.delta_h[l] = dh;
        da = dl.act.vjp(tr.pre[l], dh);
        const Tensor<S> &presyn = (l == 0) ? tr.input : tr.post[l - 1];
        u.deltas[l].dense = detail::dense_delta(dl.weight, detail::flat2(da),
                                                detail::flat2(presyn), lr, weight_decay);
        if (l > 0) {
            const Matrix<S> &b = fb.b[l - 1];
            const std::size_t n = da.extent(0);
            if (b.cols() != da.size() / n)
                throw ShapeError("fa_update: feedback matrix " + std::to_string(l - 1) +
                                 " has cols " + std::to_string(b.cols()) + ", signal width is " +
                                 std::to_string(da.size() / n));
            Tensor<S> next({n, b.rows()});
            gemm_nt(da.data(), n, b.cols(), b.data(), b.rows(), next.data());
            dh = std::move(next);
        }
    }
    return u;
}

// Direct feedback alignment: delta_h_l = B_l e for every hidden layer.
template <typename S>
UpdateSet<S> dfa_update(const Network<S> &net, const ForwardTrace<S> &tr, const Tensor<S> &e,
                        const BaselineFeedback<S> &fb, double lr, double weight_decay = 0.0) {
    const std::size_t L = net.layers.size();
    if (fb.b.size() + 1 != L)
        throw ShapeError("dfa_update: expected " + std::to_string(L - 1) + " feedback matrices");
    const std::size_t n = e.extent(0);
    const std::size_t out_d = e.size() / n;
    UpdateSet<S> u;
    u.rule = "dfa";
    u.lr = lr;
    u.weight_decay = weight_decay;
    u.deltas.resize(L);
    u.delta_h.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        if (!std::holds_alternative<DenseLayer<S>>(net.layers[l]))
            throw ShapeError("dfa_update: dense layers only");
        const auto &dl = std::get<DenseLayer<S>>(net.layers[l]);
        Tensor<S> dh;
        if (l + 1 == L) {
            dh = e;
        } else {
            const Matrix<S> &b = fb.b[l];
            if (b.cols() != out_d)
                throw ShapeError("dfa_update: feedback matrix " + std::to_string(l) +
                                 " has cols " + std::to_string(b.cols()) + ", error width is " +
                                 std::to_string(out_d));
            dh = Tensor<S>({n, b.rows()});
            gemm_nt(e.data(), n, out_d, b.data(), b.rows(), dh.data());
        }
        u.delta_h[l] = dh;
        Tensor<S> da = dl.act.vjp(tr.pre[l], dh);
        const Tensor<S> &presyn = (l == 0) ? tr.input : tr.post[l - 1];
        u.deltas[l].dense = detail::dense_delta(dl.weight, detail::flat2(da),
                                                detail::flat2(presyn), lr, weight_decay);
    }
    return u;
}

// In-place W <- W + delta. Does not orthogonalize; the step scheduler
// decides when to re-project. BCOP-parametrized kernels receive the delta
// through the parametrization's pullback and are re-materialized.
template <typename S> void apply_updates(Network<S> &net, const UpdateSet<S> &u) {
    if (u.deltas.size() != net.layers.size())
        throw ShapeError("apply_updates: " + std::to_string(u.deltas.size()) + " deltas for " +
                         std::to_string(net.layers.size()) + " layers");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (std::holds_alternative<DenseLayer<S>>(net.layers[l])) {
            if (!u.deltas[l].dense) continue;
            auto &d = std::get<DenseLayer<S>>(net.layers[l]);
            const Matrix<S> &dw = *u.deltas[l].dense;
            if (dw.rows() != d.weight.rows() || dw.cols() != d.weight.cols())
                throw ShapeError("apply_updates: layer " + std::to_string(l) + " delta " +
                                 std::to_string(dw.rows()) + "x" + std::to_string(dw.cols()) +
                                 " vs weight " + std::to_string(d.weight.rows()) + "x" +
                                 std::to_string(d.weight.cols()));
            for (std::size_t i = 0; i < dw.size(); ++i) d.weight.data()[i] += dw.data()[i];
            d.weight.set_orthogonalized(false);
        } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l])) {
            if (!u.deltas[l].kernel) continue;
            auto &cl = std::get<ConvLayer<S>>(net.layers[l]);
            const Tensor<S> &dk = *u.deltas[l].kernel;
            if (dk.shape() != cl.kernel.shape())
                throw ShapeError("apply_updates: layer " + std::to_string(l) +
                                 " kernel delta shape " + shape_str(dk.shape()) + " vs kernel " +
                                 shape_str(cl.kernel.shape()));
            if (cl.bcop) {
                BcopDeltas<S> bd = bcop_pullback(*cl.bcop, dk);
                for (std::size_t i = 0; i < cl.bcop->channel.size(); ++i)
                    cl.bcop->channel.data()[i] += bd.channel.data()[i];
                for (std::size_t m = 0; m < cl.bcop->qs.size(); ++m)
                    for (std::size_t i = 0; i < cl.bcop->qs[m].size(); ++i)
                        cl.bcop->qs[m].data()[i] += bd.qs[m].data()[i];
                cl.kernel = bcop_materialize(*cl.bcop);
            } else {
                for (std::size_t i = 0; i < dk.size(); ++i) cl.kernel[i] += dk[i];
            }
        }
    }
}

template <typename S>
void refresh_feedback(FeedbackOperator<S> &f, const Network<S> &net, std::size_t step) {
    f.refresh(net, step);
}

} // namespace foton
