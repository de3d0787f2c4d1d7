#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tae/common.hpp"
#include "tae/rng.hpp"

namespace tae {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

// Dense row-major double tensor. Plain value type; the autodiff tape and the
// image pipeline both build on it.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = rng.uniform(lo, hi);
        return t;
    }

    static Tensor normal(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = stddev * rng.normal();
        return t;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double& at(std::initializer_list<int> idx) { return data[offset(idx)]; }
    double at(std::initializer_list<int> idx) const { return data[offset(idx)]; }

private:
    size_t offset(std::initializer_list<int> idx) const {
        if (idx.size() != shape.size()) throw ShapeError("index rank mismatch for shape " + shape_str(shape));
        size_t off = 0;
        size_t axis = 0;
        for (int i : idx) {
            off = off * static_cast<size_t>(shape[axis]) + static_cast<size_t>(i);
            ++axis;
        }
        return off;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace tae
