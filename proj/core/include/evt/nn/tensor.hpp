#pragma once

#include "evt/errors.hpp"

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace evt::nn {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// Dense row-major value container. Gradients live next to values in tape
// nodes and parameter slots, not here.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(std::size_t(shape_numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (std::int64_t(data.size()) != shape_numel(shape))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    std::int64_t numel() const { return std::int64_t(data.size()); }
    int dim(std::size_t i) const { return shape[i]; }
    int rank() const { return int(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // 2-D accessors (rows x cols)
    T& at(int r, int c) { return data[std::size_t(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[std::size_t(r) * shape[1] + c]; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
}

} // namespace evt::nn
