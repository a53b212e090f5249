#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lesionbench {

using Vec3 = std::array<int64_t, 3>;
using Vec3d = std::array<double, 3>;

inline int64_t vec3_product(const Vec3& v) { return v[0] * v[1] * v[2]; }

inline std::string vec3_str(const Vec3& v) {
    return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

// Dense row-major n-d array. Last axis varies fastest.
template <typename T>
struct NdArray {
    std::vector<int64_t> shape;
    std::vector<T> data;

    NdArray() = default;
    explicit NdArray(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(size_of(shape)), T{});
    }
    NdArray(std::vector<int64_t> s, T fill) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(size_of(shape)), fill);
    }

    static int64_t size_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("negative dimension in array shape");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    bool empty() const { return data.empty(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Fixed-rank indexers; callers know their layout ((D,H,W) or (C,D,H,W) etc.).
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    T& at4(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    const T& at4(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    T& at5(int64_t i, int64_t j, int64_t k, int64_t l, int64_t m) {
        return data[static_cast<size_t>((((i * shape[1] + j) * shape[2] + k) * shape[3] + l) * shape[4] + m)];
    }
    const T& at5(int64_t i, int64_t j, int64_t k, int64_t l, int64_t m) const {
        return data[static_cast<size_t>((((i * shape[1] + j) * shape[2] + k) * shape[3] + l) * shape[4] + m)];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const NdArray& other) const { return shape == other.shape; }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace lesionbench
