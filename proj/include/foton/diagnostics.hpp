#pragma once

#include <functional>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/layers.hpp"
#include "foton/loss.hpp"
#include "foton/rules.hpp"

namespace foton {

// One point of the per-layer gradient-alignment curves: cosine similarity
// between a rule's transported signal and BP's, averaged over the batch.
struct AlignmentRecord {
    std::size_t step = 0;
    std::size_t layer = 0; // 1-based
    std::string rule;
    double cosine = 0.0;
    std::size_t degenerate_samples = 0;
};

namespace detail {
template <typename S> S *param_ptr(Network<S> &net, std::size_t layer, std::size_t idx) {
    if (std::holds_alternative<DenseLayer<S>>(net.layers[layer])) {
        auto &d = std::get<DenseLayer<S>>(net.layers[layer]);
        if (idx >= d.weight.size()) throw ShapeError("finite_diff: parameter index out of range");
        return d.weight.data() + idx;
    }
    if (std::holds_alternative<ConvLayer<S>>(net.layers[layer])) {
        auto &cl = std::get<ConvLayer<S>>(net.layers[layer]);
        if (idx >= cl.kernel.size()) throw ShapeError("finite_diff: parameter index out of range");
        return cl.kernel.data() + idx;
    }
    throw ShapeError("finite_diff: layer " + std::to_string(layer) + " has no parameters");
}
} // namespace detail

// Central difference (L(theta + h e_i) - L(theta - h e_i)) / 2h on one
// parameter coordinate. 64-bit callers get the stated 1e-5 agreement with
// the analytic backward pass.
template <typename S>
double finite_diff_gradient(Network<S> net, const Tensor<S> &x, const Tensor<S> &target,
                            const LossKind &loss, std::size_t layer, std::size_t param_index,
                            double h = 1e-5) {
    S *p = detail::param_ptr(net, layer, param_index);
    const S orig = *p;
    const std::size_t n = x.extent(0);

    *p = S(double(orig) + h);
    auto tr_p = forward_clean(net, x);
    double lp = loss_value(loss, tr_p.post.back().reshaped({n, tr_p.post.back().size() / n}),
                           target.reshaped({n, target.size() / n}));
    *p = S(double(orig) - h);
    auto tr_m = forward_clean(net, x);
    double lm = loss_value(loss, tr_m.post.back().reshaped({n, tr_m.post.back().size() / n}),
                           target.reshaped({n, target.size() / n}));
    *p = orig;
    return (lp - lm) / (2.0 * h);
}

// Assembles the explicit matrix of a linear map by applying it to every
// standard basis tensor. Desk-scale oracle; refuses beyond 4096 inputs.
template <typename S>
Matrix<S> materialize_operator(const std::function<Tensor<S>(const Tensor<S> &)> &map,
                               const Shape &input_shape) {
    const std::size_t in_d = shape_numel(input_shape);
    if (in_d > 4096)
        throw ShapeError("materialize_operator: input has " + std::to_string(in_d) +
                         " elements, the guard allows at most 4096");
    Shape batched{1};
    batched.insert(batched.end(), input_shape.begin(), input_shape.end());

    Matrix<S> out;
    for (std::size_t j = 0; j < in_d; ++j) {
        Tensor<S> basis(batched);
        basis[j] = S(1);
        Tensor<S> col = map(basis);
        if (j == 0) out = Matrix<S>(col.size(), in_d);
        if (col.size() != out.rows())
            throw ShapeError("materialize_operator: map output size changed between columns");
        for (std::size_t i = 0; i < col.size(); ++i) out(i, j) = col[i];
    }
    return out;
}

// Five evenly spaced layer indices including first and last (1-based),
// matching how the alignment curves are reported.
inline std::vector<std::size_t> default_report_layers(std::size_t depth, std::size_t count = 5) {
    std::vector<std::size_t> out;
    if (depth == 0) return out;
    count = std::min(count, depth);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t l = 1 + (i * (depth - 1)) / (count > 1 ? count - 1 : 1);
        if (out.empty() || out.back() != l) out.push_back(l);
    }
    return out;
}

// Computes the rule's transported per-layer signal and BP's true gradient
// on the same batch and records their cosine similarity. Zero-signal
// samples are flagged, not errored.
template <typename S>
std::vector<AlignmentRecord>
alignment_sweep(const Network<S> &net, RuleKind rule, const FeedbackOperator<S> *f,
                const BaselineFeedback<S> *fb, const Tensor<S> &x, const Tensor<S> &target,
                const LossKind &loss, const std::vector<std::size_t> &layers,
                bool on_weight_deltas = false) {
    UpdateSet<S> bp = bp_update(net, x, target, loss, 1.0);

    UpdateSet<S> other;
    if (rule == RuleKind::BP) {
        other = bp;
    } else if (rule == RuleKind::FOTON || rule == RuleKind::PEPITA) {
        if (!f) throw StateError("alignment_sweep: rule needs a feedback operator");
        auto tr = forward_clean(net, x);
        const std::size_t n = x.extent(0);
        Tensor<S> out2 = tr.post.back().reshaped({n, tr.post.back().size() / n});
        Tensor<S> e = compute_error(loss, out2, target.reshaped(out2.shape()));
        modulated_forward(net, x, e, *f, tr);
        other = rule == RuleKind::FOTON ? foton_update(net, tr, e, 1.0)
                                        : pepita_update(net, tr, e, 1.0);
    } else {
        if (!fb) throw StateError("alignment_sweep: rule needs baseline feedback matrices");
        auto tr = forward_clean(net, x);
        const std::size_t n = x.extent(0);
        Tensor<S> out2 = tr.post.back().reshaped({n, tr.post.back().size() / n});
        Tensor<S> e = compute_error(loss, out2, target.reshaped(out2.shape()));
        other = rule == RuleKind::FA ? fa_update(net, tr, e, *fb, 1.0)
                                     : dfa_update(net, tr, e, *fb, 1.0);
    }

    std::vector<AlignmentRecord> records;
    for (std::size_t layer1 : layers) {
        if (layer1 < 1 || layer1 > net.layers.size())
            throw ShapeError("alignment_sweep: layer index " + std::to_string(layer1) +
                             " out of range");
        const std::size_t l = layer1 - 1;
        AlignmentRecord rec;
        rec.layer = layer1;
        rec.rule = rule_name(rule);
        if (on_weight_deltas) {
            bool deg = false;
            double c = 0.0;
            if (bp.deltas[l].dense && other.deltas[l].dense)
                c = cosine_similarity(to_tensor(*other.deltas[l].dense),
                                      to_tensor(*bp.deltas[l].dense), &deg);
            else if (bp.deltas[l].kernel && other.deltas[l].kernel)
                c = cosine_similarity(*other.deltas[l].kernel, *bp.deltas[l].kernel, &deg);
            rec.cosine = c;
            rec.degenerate_samples = deg ? 1 : 0;
        } else {
            const Tensor<S> &a = other.delta_h[l];
            const Tensor<S> &b = bp.delta_h[l];
            const std::size_t n = a.extent(0), d = a.size() / n;
            double acc = 0;
            std::size_t used = 0, degenerate = 0;
            for (std::size_t i = 0; i < n; ++i) {
                Tensor<S> ra({d}, std::vector<S>(a.data() + i * d, a.data() + (i + 1) * d));
                Tensor<S> rb({d}, std::vector<S>(b.data() + i * d, b.data() + (i + 1) * d));
                if (norm2(ra) == S(0) && norm2(rb) == S(0)) {
                    ++degenerate;
                    continue;
                }
                bool deg = false;
                double c = cosine_similarity(ra, rb, &deg);
                if (deg) {
                    ++degenerate;
                    continue;
                }
                acc += c;
                ++used;
            }
            rec.cosine = used ? acc / double(used) : 0.0;
            rec.degenerate_samples = degenerate;
        }
        records.push_back(rec);
    }
    return records;
}

} // namespace foton
