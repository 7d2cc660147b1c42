#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hvsr/error.hpp"

namespace hvsr {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense row-major tensor. Plain value type: copyable, owns its storage.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
    Tensor(Shape s, T fill) : shape(std::move(s)), v(shape_numel(shape), fill) {}

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (int64_t i = 0; i < numel(); ++i) out.v[static_cast<size_t>(i)] = static_cast<U>(v[static_cast<size_t>(i)]);
        return out;
    }
};

// Named parameter set. std::map keeps iteration order stable, which the
// checkpoint format and the optimizer rely on.
template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

template <typename T>
Tensor<T>& find_param(ParamMap<T>& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw NotFoundError("parameter not found: " + name);
    return it->second;
}

template <typename T>
const Tensor<T>& find_param(const ParamMap<T>& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw NotFoundError("parameter not found: " + name);
    return it->second;
}

}  // namespace hvsr
