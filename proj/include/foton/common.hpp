#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace foton {

class ShapeError : public std::runtime_error {
  public:
    explicit ShapeError(const std::string &msg) : std::runtime_error(msg) {}
};

class DegenerateInputError : public std::runtime_error {
  public:
    explicit DegenerateInputError(const std::string &msg) : std::runtime_error(msg) {}
};

class ConvergenceError : public std::runtime_error {
  public:
    explicit ConvergenceError(const std::string &msg) : std::runtime_error(msg) {}
};

class StateError : public std::runtime_error {
  public:
    explicit StateError(const std::string &msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string &msg) : std::runtime_error(msg) {}
};

class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(const std::string &msg, std::string checkpoint)
        : std::runtime_error(msg), last_checkpoint(std::move(checkpoint)) {}
    std::string last_checkpoint;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape &s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

inline std::size_t shape_numel(const Shape &s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

// Per-precision tolerances. The 64-bit values are what the oracle and
// equivalence tests assume; 32-bit is the training default.
template <typename Scalar> struct Tol;
template <> struct Tol<double> {
    static constexpr double orth = 1e-6;     // Gram residual for the `orthogonalized` flag
    static constexpr double orth_init = 1e-12;
};
template <> struct Tol<float> {
    static constexpr float orth = 1e-3f;
    static constexpr float orth_init = 1e-5f;
};

} // namespace foton
