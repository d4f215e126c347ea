#pragma once

#include <cmath>
#include <string>

#include "foton/common.hpp"
#include "foton/tensor.hpp"

namespace foton {

enum class ActKind { Identity, ReLU, Tanh, GroupSort };

inline std::string act_name(ActKind k) {
    switch (k) {
    case ActKind::Identity: return "identity";
    case ActKind::ReLU: return "relu";
    case ActKind::Tanh: return "tanh";
    case ActKind::GroupSort: return "groupsort";
    }
    return "?";
}

inline ActKind act_from_name(const std::string &s) {
    if (s == "identity" || s == "id" || s == "linear") return ActKind::Identity;
    if (s == "relu") return ActKind::ReLU;
    if (s == "tanh") return ActKind::Tanh;
    if (s == "groupsort") return ActKind::GroupSort;
    throw ConfigError("unknown activation: " + s);
}

// Element-wise activation, except GroupSort which sorts consecutive pairs
// per sample (group size 2). GroupSort's Jacobian is a per-pair permutation:
// symmetric and involutive, so jvp and vjp coincide and every application
// preserves the l2 norm exactly.
struct Activation {
    ActKind kind = ActKind::Identity;

    // Batch apply; the first extent is the sample dimension.
    template <typename S> Tensor<S> apply(const Tensor<S> &a) const {
        Tensor<S> h = a;
        switch (kind) {
        case ActKind::Identity:
            break;
        case ActKind::ReLU:
            for (std::size_t i = 0; i < h.size(); ++i)
                if (h[i] < S(0)) h[i] = S(0);
            break;
        case ActKind::Tanh:
            for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i]);
            break;
        case ActKind::GroupSort: {
            std::size_t d = feature_dim(a);
            if (d % 2 != 0)
                throw ShapeError("groupsort: feature dimension " + std::to_string(d) +
                                 " is not a multiple of the group size 2");
            for (std::size_t base = 0; base < h.size(); base += 2)
                if (h[base] > h[base + 1]) std::swap(h[base], h[base + 1]);
            break;
        }
        }
        return h;
    }

    // J(a) v with the Jacobian evaluated at pre-activation a.
    template <typename S> Tensor<S> jvp(const Tensor<S> &a, const Tensor<S> &v) const {
        if (a.shape() != v.shape())
            throw ShapeError("activation jvp: shape mismatch");
        Tensor<S> out = v;
        switch (kind) {
        case ActKind::Identity:
            break;
        case ActKind::ReLU:
            for (std::size_t i = 0; i < out.size(); ++i)
                if (a[i] <= S(0)) out[i] = S(0);
            break;
        case ActKind::Tanh:
            for (std::size_t i = 0; i < out.size(); ++i) {
                S t = std::tanh(a[i]);
                out[i] *= (S(1) - t * t);
            }
            break;
        case ActKind::GroupSort:
            for (std::size_t base = 0; base < out.size(); base += 2)
                if (a[base] > a[base + 1]) std::swap(out[base], out[base + 1]);
            break;
        }
        return out;
    }

    // J(a)^T v. Same as jvp for all supported kinds: diagonal Jacobians are
    // symmetric, and the group-size-2 swap is its own transpose.
    template <typename S> Tensor<S> vjp(const Tensor<S> &a, const Tensor<S> &v) const {
        return jvp(a, v);
    }

  private:
    template <typename S> static std::size_t feature_dim(const Tensor<S> &a) {
        if (a.rank() == 0) return 0;
        std::size_t d = 1;
        for (std::size_t i = 1; i < a.rank(); ++i) d *= a.extent(i);
        return d;
    }
};

} // namespace foton
