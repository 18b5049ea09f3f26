#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace radreport {

// Dense row-major tensor. Templated on the scalar so training runs in
// float while gradient checking can run the identical graph in double.
template <typename S>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::initializer_list<int64_t> dims) { resize(dims); }

    void resize(std::initializer_list<int64_t> dims) {
        shape.assign(dims.begin(), dims.end());
        v.assign(static_cast<size_t>(numel_of(shape)), S(0));
    }
    void resize(const std::vector<int64_t>& dims) {
        shape = dims;
        v.assign(static_cast<size_t>(numel_of(shape)), S(0));
    }

    int64_t numel() const { return numel_of(shape); }
    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& at(int64_t i) { return v[static_cast<size_t>(i)]; }
    S at(int64_t i) const { return v[static_cast<size_t>(i)]; }
    S& at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols() + j)]; }
    S at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols() + j)]; }

    void zero() { std::fill(v.begin(), v.end(), S(0)); }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
        return out;
    }

    static int64_t numel_of(const std::vector<int64_t>& dims) {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

// A named view of one parameter tensor and its gradient accumulator.
// `decay` marks whether decoupled weight decay applies (never for biases
// and layer-norm scales/offsets).
template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S>* value = nullptr;
    Tensor<S>* grad = nullptr;
    bool decay = true;
};

template <typename S>
bool all_finite(const Tensor<S>& t) {
    for (S x : t.v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

}  // namespace radreport
