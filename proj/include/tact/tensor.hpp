#ifndef TACT_TENSOR_HPP
#define TACT_TENSOR_HPP

#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tact/errors.hpp"

namespace tact {

template <typename T>
concept Real = std::floating_point<T>;

// Dense row-major tensor. Plain value type; all layer state lives in the
// modules that own these.
template <Real T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    Tensor(std::initializer_list<std::size_t> s, T fill = T(0))
        : Tensor(std::vector<std::size_t>(s), fill) {}

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw shape_error("tensor: axis " + std::to_string(i) + " out of range");
        return shape[i];
    }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 2-D / 3-D / 4-D accessors for readability in kernels and tests.
    T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool operator==(const Tensor&) const = default;

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Explicit NaN/Inf check; `where` names the producing op in diagnostics.
    void check_finite(const std::string& where) const {
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw numeric_error(where + ": non-finite value at flat index " + std::to_string(i));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <Real U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        out.requires_grad = requires_grad;
        return out;
    }
};

template <Real T>
void require_shape(const Tensor<T>& t, const std::vector<std::size_t>& want,
                   const std::string& who) {
    if (t.shape != want) {
        Tensor<T> w(want);
        throw shape_error(who + ": expected shape " + w.shape_str() + ", got " + t.shape_str());
    }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace tact

#endif
