#pragma once

#include <cmath>
#include <string>

#include "foton/common.hpp"
#include "foton/tensor.hpp"

namespace foton {

enum class LossType { MSE, CrossEntropyTemp };

struct LossKind {
    LossType type = LossType::MSE;
    double temperature = 1.0;

    static LossKind mse() { return {LossType::MSE, 1.0}; }
    static LossKind cross_entropy(double t) {
        if (t <= 0.0) throw ConfigError("cross-entropy temperature must be positive");
        return {LossType::CrossEntropyTemp, t};
    }
};

inline std::string loss_name(const LossKind &l) {
    return l.type == LossType::MSE ? "mse" : "ce";
}

namespace detail {
template <typename S>
void softmax_row(const S *in, std::size_t d, double temperature, double *out) {
    double mx = -1e300;
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, double(in[j]) / temperature);
    double sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
        out[j] = std::exp(double(in[j]) / temperature - mx);
        sum += out[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[j] /= sum;
}
} // namespace detail

// Error signal e = grad of the loss in the network output, per sample.
// MSE: exactly yhat - y. Tempered cross entropy: softmax(yhat / T) - y.
template <typename S>
Tensor<S> compute_error(const LossKind &loss, const Tensor<S> &output, const Tensor<S> &target) {
    if (output.shape() != target.shape())
        throw ShapeError("compute_error: output " + shape_str(output.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::size_t n = output.extent(0), d = output.size() / n;
    if (loss.type == LossType::MSE) return output - target;

    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            double t = double(target[i * d + j]);
            if (t < 0.0 || t > 1.0)
                throw DegenerateInputError(
                    "compute_error: cross-entropy target is not a probability vector");
            sum += t;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DegenerateInputError("compute_error: cross-entropy target rows must sum to 1");
    }
    Tensor<S> e(output.shape());
    std::vector<double> sm(d);
    for (std::size_t i = 0; i < n; ++i) {
        detail::softmax_row(output.data() + i * d, d, loss.temperature, sm.data());
        for (std::size_t j = 0; j < d; ++j)
            e[i * d + j] = S(sm[j] - double(target[i * d + j]));
    }
    return e;
}

// Scalar loss whose output gradient is compute_error / n. MSE is the half
// squared error; the tempered cross entropy carries a factor T so its
// gradient stays softmax(yhat/T) - y.
template <typename S>
double loss_value(const LossKind &loss, const Tensor<S> &output, const Tensor<S> &target) {
    if (output.shape() != target.shape())
        throw ShapeError("loss_value: output vs target shape mismatch");
    const std::size_t n = output.extent(0), d = output.size() / n;
    double acc = 0;
    if (loss.type == LossType::MSE) {
        for (std::size_t i = 0; i < output.size(); ++i) {
            double diff = double(output[i]) - double(target[i]);
            acc += 0.5 * diff * diff;
        }
        return acc / double(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < d; ++j)
            mx = std::max(mx, double(output[i * d + j]) / loss.temperature);
        double lse = 0;
        for (std::size_t j = 0; j < d; ++j)
            lse += std::exp(double(output[i * d + j]) / loss.temperature - mx);
        lse = std::log(lse) + mx;
        double dotp = 0;
        for (std::size_t j = 0; j < d; ++j)
            dotp += double(target[i * d + j]) * double(output[i * d + j]) / loss.temperature;
        acc += loss.temperature * (lse - dotp);
    }
    return acc / double(n);
}

} // namespace foton
