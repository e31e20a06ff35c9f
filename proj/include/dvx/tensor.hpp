#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dvx/common.hpp"

namespace dvx {

// Dense 4D tensor, dims (dx, dy, dz, channels). Memory order: channels
// innermost, then x, y, z, matching the voxel-grid flat order with a
// channel axis appended.
template <typename T>
struct Tensor4 {
    int dx = 0, dy = 0, dz = 0, c = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int dx_, int dy_, int dz_, int c_)
        : dx(dx_), dy(dy_), dz(dz_), c(c_),
          data(static_cast<std::size_t>(dx_) * dy_ * dz_ * c_, T(0)) {}

    static Tensor4 cube(int d, int channels) { return Tensor4(d, d, d, channels); }

    std::size_t size() const { return data.size(); }
    std::size_t spatial_size() const {
        return static_cast<std::size_t>(dx) * dy * dz;
    }

    std::size_t index(int x, int y, int z, int ch) const {
        return (static_cast<std::size_t>(x) +
                static_cast<std::size_t>(dx) *
                    (static_cast<std::size_t>(y) +
                     static_cast<std::size_t>(dy) * static_cast<std::size_t>(z))) *
                   static_cast<std::size_t>(c) +
               static_cast<std::size_t>(ch);
    }
    T& at(int x, int y, int z, int ch) { return data[index(x, y, z, ch)]; }
    T at(int x, int y, int z, int ch) const { return data[index(x, y, z, ch)]; }

    bool same_shape(const Tensor4& o) const {
        return dx == o.dx && dy == o.dy && dz == o.dz && c == o.c;
    }
    bool same_spatial(const Tensor4& o) const {
        return dx == o.dx && dy == o.dy && dz == o.dz;
    }
    std::string shape_string() const {
        return std::to_string(dx) + "x" + std::to_string(dy) + "x" + std::to_string(dz) +
               "x" + std::to_string(c);
    }
    bool finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
void check_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
    if (!a.same_shape(b))
        fail(std::string(what) + ": shape mismatch, expected " + a.shape_string() +
             " but got " + b.shape_string());
}

}  // namespace dvx
