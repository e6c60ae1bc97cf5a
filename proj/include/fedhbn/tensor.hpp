#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedhbn/errors.hpp"

namespace fedhbn {

// Dense N-dimensional array. Activations are NCHW, dense activations (N, F).
// Scalar type is float in production; tests instantiate double for the
// 64-bit finite-difference path.
template <class T = float>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, T fill = T{0})
        : shape(std::move(s)), data(shape_numel(shape), fill) {}

    static std::size_t shape_numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw ConfigError("tensor dim index out of range");
        return shape[i];
    }

    // NCHW accessors
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    // (N, F) accessors
    T& at2(std::size_t n, std::size_t f) { return data[n * shape[1] + f]; }
    const T& at2(std::size_t n, std::size_t f) const { return data[n * shape[1] + f]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ConfigError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
}

}  // namespace fedhbn
