#pragma once

#include <limits>
#include <optional>
#include <string>

#include "foton/common.hpp"
#include "foton/layers.hpp"
#include "foton/matrix.hpp"
#include "foton/rng.hpp"

namespace foton {

// How the error-projection operator F is represented.
//   AlignedComposition: adjoint chain of the weights captured at last refresh.
//   Materialized:       the same product as an explicit matrix (dense-only).
//   FixedRandom:        a frozen random matrix, never refreshed (PEPITA).
//   ExactPerSample:     current weights with per-sample activation Jacobians
//                       interleaved, evaluated on the clean trace.
enum class FeedbackMode { AlignedComposition, Materialized, FixedRandom, ExactPerSample };

inline constexpr std::size_t kNeverRefresh = std::numeric_limits<std::size_t>::max();

inline std::string feedback_mode_name(FeedbackMode m) {
    switch (m) {
    case FeedbackMode::AlignedComposition: return "aligned";
    case FeedbackMode::Materialized: return "materialized";
    case FeedbackMode::FixedRandom: return "fixed-random";
    case FeedbackMode::ExactPerSample: return "exact-per-sample";
    }
    return "?";
}

template <typename S> struct FeedbackOperator {
    FeedbackMode mode = FeedbackMode::AlignedComposition;
    std::size_t refresh_every = 1; // steps between re-snapshots; kNeverRefresh = frozen
    std::size_t last_refresh_step = 0;

    std::optional<Network<S>> snapshot; // AlignedComposition
    std::optional<Matrix<S>> fmat;      // Materialized / FixedRandom, (in_dim x out_dim)

    // Applies F to an output-shaped batch, returning an input-shaped batch.
    Tensor<S> apply(const Network<S> &net, const ForwardTrace<S> *clean_trace,
                    const Tensor<S> &e) const {
        const std::size_t n = e.extent(0);
        const std::size_t out_d = e.size() / n;
        switch (mode) {
        case FeedbackMode::AlignedComposition:
            return adjoint_chain(*snapshot, e);
        case FeedbackMode::Materialized:
        case FeedbackMode::FixedRandom: {
            if (out_d != fmat->cols())
                throw ShapeError("feedback apply: error width " + std::to_string(out_d) +
                                 " vs operator cols " + std::to_string(fmat->cols()));
            Tensor<S> x({n, fmat->rows()});
            gemm_nt(e.data(), n, out_d, fmat->data(), fmat->rows(), x.data());
            return reshape_batch(x, net.input_shape);
        }
        case FeedbackMode::ExactPerSample: {
            if (!clean_trace)
                throw StateError("exact-per-sample feedback needs the clean trace");
            auto shapes = infer_shapes(net);
            Tensor<S> cur = e;
            for (std::size_t l = net.layers.size(); l-- > 0;) {
                cur = layer_adjoint(net, shapes, l, cur);
                if (l > 0) {
                    // interleave the Jacobian of layer l-1's activation,
                    // evaluated at the clean pre-activation
                    if (std::holds_alternative<DenseLayer<S>>(net.layers[l - 1])) {
                        const auto &d = std::get<DenseLayer<S>>(net.layers[l - 1]);
                        cur = d.act.vjp(clean_trace->pre[l - 1],
                                        cur.reshaped(clean_trace->pre[l - 1].shape()));
                    } else if (std::holds_alternative<ConvLayer<S>>(net.layers[l - 1])) {
                        const auto &cl = std::get<ConvLayer<S>>(net.layers[l - 1]);
                        cur = cl.act.vjp(clean_trace->pre[l - 1],
                                         cur.reshaped(clean_trace->pre[l - 1].shape()));
                    }
                }
            }
            return reshape_batch(cur, net.input_shape);
        }
        }
        throw StateError("feedback apply: unknown mode");
    }

    // Re-snapshots the forward weights when due. FixedRandom and
    // ExactPerSample never refresh (the latter is always current).
    void refresh(const Network<S> &net, std::size_t step, bool force = false) {
        if (mode == FeedbackMode::FixedRandom || mode == FeedbackMode::ExactPerSample) return;
        if (!force) {
            if (refresh_every == kNeverRefresh) return;
            if (step - last_refresh_step < refresh_every) return;
        }
        if (mode == FeedbackMode::AlignedComposition) {
            snapshot = net;
        } else {
            fmat = materialize_feedback(net);
        }
        last_refresh_step = step;
    }

    // Explicit F = W_1^T W_2^T ... W_L^T for dense-only networks.
    static Matrix<S> materialize_feedback(const Network<S> &net) {
        std::optional<Matrix<S>> m;
        for (std::size_t l = net.layers.size(); l-- > 0;) {
            if (!std::holds_alternative<DenseLayer<S>>(net.layers[l]))
                throw ShapeError("materialized feedback requires a dense-only network");
            const Matrix<S> wt = std::get<DenseLayer<S>>(net.layers[l]).weight.transposed();
            m = m ? matmul(wt, *m) : wt;
        }
        if (!m) throw ShapeError("materialized feedback: empty network");
        return *m;
    }
};

template <typename S>
FeedbackOperator<S> make_aligned_feedback(const Network<S> &net, std::size_t refresh_every) {
    FeedbackOperator<S> f;
    f.mode = FeedbackMode::AlignedComposition;
    f.refresh_every = refresh_every;
    f.refresh(net, 0, true);
    return f;
}

template <typename S>
FeedbackOperator<S> make_materialized_feedback(const Network<S> &net,
                                               std::size_t refresh_every) {
    FeedbackOperator<S> f;
    f.mode = FeedbackMode::Materialized;
    f.refresh_every = refresh_every;
    f.refresh(net, 0, true);
    return f;
}

// PEPITA's fixed projection: uniform entries in +-0.05 sqrt(6 / fan_in),
// frozen at initialization.
template <typename S>
FeedbackOperator<S> make_fixed_random_feedback(const Network<S> &net, std::uint64_t seed) {
    FeedbackOperator<S> f;
    f.mode = FeedbackMode::FixedRandom;
    f.refresh_every = kNeverRefresh;
    const std::size_t in_d = shape_numel(net.input_shape);
    const std::size_t out_d = output_dim(net);
    Matrix<S> m(in_d, out_d);
    Rng rng(seed);
    const double bound = 0.05 * std::sqrt(6.0 / double(in_d));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = S(rng.uniform(-bound, bound));
    f.fmat = std::move(m);
    return f;
}

template <typename S> FeedbackOperator<S> make_exact_per_sample_feedback() {
    FeedbackOperator<S> f;
    f.mode = FeedbackMode::ExactPerSample;
    f.refresh_every = kNeverRefresh;
    return f;
}

} // namespace foton
