#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "dvx/tensor.hpp"

namespace dvx {

// Geometry shared by convolution and transposed convolution: cubic kernel,
// symmetric zero padding, uniform stride.
struct ConvSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 1;
    int pad = 0;
    int stride = 1;

    int conv_out_dim(int in) const {
        const int num = in + 2 * pad - kernel;
        require(num >= 0 && num % stride == 0,
                "convolution output size (in + 2*pad - kernel)/stride + 1 is not integral");
        return num / stride + 1;
    }
    int deconv_out_dim(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(kernel) * kernel * kernel * in_ch * out_ch;
    }
};

namespace detail {

// Weight layout: ((kz, ky, kx, ic), oc), oc contiguous so the innermost
// accumulation loops vectorize.
inline std::size_t weight_base(const ConvSpec& s, int kz, int ky, int kx) {
    return ((static_cast<std::size_t>(kz) * s.kernel + ky) * s.kernel + kx) *
           static_cast<std::size_t>(s.in_ch) * s.out_ch;
}

// Valid kernel tap range for one output coordinate of a strided conv:
// input coordinate i = o*stride - pad + k must land in [0, in).
inline void conv_tap_range(int o, int stride, int pad, int kernel, int in, int& klo, int& khi) {
    const int base = o * stride - pad;
    klo = base < 0 ? -base : 0;
    khi = kernel;
    if (base + khi > in) khi = in - base;
}

}  // namespace detail

template <typename T>
struct Conv3d {
    ConvSpec spec;
    std::vector<T> w;   // see weight_base for layout
    std::vector<T> b;   // out_ch
    std::vector<T> gw;  // gradients, filled by backward
    std::vector<T> gb;

    explicit Conv3d(ConvSpec s) : spec(s) {
        require(s.in_ch > 0 && s.out_ch > 0 && s.kernel > 0 && s.stride > 0 && s.pad >= 0,
                "invalid convolution spec");
        w.assign(spec.weight_count(), T(0));
        b.assign(static_cast<std::size_t>(s.out_ch), T(0));
        gw.assign(w.size(), T(0));
        gb.assign(b.size(), T(0));
    }

    // Fan-in-scaled uniform init, biases zero.
    void init(std::mt19937_64& rng) {
        const double fan_in =
            static_cast<double>(spec.kernel) * spec.kernel * spec.kernel * spec.in_ch;
        const double bound = std::sqrt(1.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : w) v = static_cast<T>(u(rng));
        for (auto& v : b) v = T(0);
    }

    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.c == spec.in_ch, "conv3d: input has " + std::to_string(x.c) +
                                       " channels, spec expects " + std::to_string(spec.in_ch));
        Tensor4<T> out(spec.conv_out_dim(x.dx), spec.conv_out_dim(x.dy),
                       spec.conv_out_dim(x.dz), spec.out_ch);

        const int IC = spec.in_ch, OC = spec.out_ch;
        const T* __restrict__ wp_all = w.data();
        const T* __restrict__ xp_all = x.data.data();
        std::vector<T> acc(static_cast<std::size_t>(OC));
        for (int oz = 0; oz < out.dz; ++oz) {
            int kzlo, kzhi;
            detail::conv_tap_range(oz, spec.stride, spec.pad, spec.kernel, x.dz, kzlo, kzhi);
            for (int oy = 0; oy < out.dy; ++oy) {
                int kylo, kyhi;
                detail::conv_tap_range(oy, spec.stride, spec.pad, spec.kernel, x.dy, kylo, kyhi);
                for (int ox = 0; ox < out.dx; ++ox) {
                    int kxlo, kxhi;
                    detail::conv_tap_range(ox, spec.stride, spec.pad, spec.kernel, x.dx, kxlo, kxhi);
                    for (int oc = 0; oc < OC; ++oc) acc[oc] = b[oc];
                    for (int kz = kzlo; kz < kzhi; ++kz) {
                        const int iz = oz * spec.stride - spec.pad + kz;
                        for (int ky = kylo; ky < kyhi; ++ky) {
                            const int iy = oy * spec.stride - spec.pad + ky;
                            for (int kx = kxlo; kx < kxhi; ++kx) {
                                const int ix = ox * spec.stride - spec.pad + kx;
                                const T* __restrict__ xp = xp_all + x.index(ix, iy, iz, 0);
                                const T* __restrict__ wp =
                                    wp_all + detail::weight_base(spec, kz, ky, kx);
                                for (int ic = 0; ic < IC; ++ic) {
                                    const T xv = xp[ic];
                                    const T* __restrict__ wrow = wp + static_cast<std::size_t>(ic) * OC;
                                    for (int oc = 0; oc < OC; ++oc) acc[oc] += xv * wrow[oc];
                                }
                            }
                        }
                    }
                    T* __restrict__ op = out.data.data() + out.index(ox, oy, oz, 0);
                    for (int oc = 0; oc < OC; ++oc) op[oc] = acc[oc];
                }
            }
        }
        return out;
    }

    // Fills gw/gb (overwriting) and returns grad wrt the input.
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
        require(x.c == spec.in_ch, "conv3d backward: input channel mismatch");
        require(grad_out.c == spec.out_ch && grad_out.dx == spec.conv_out_dim(x.dx) &&
                    grad_out.dy == spec.conv_out_dim(x.dy) &&
                    grad_out.dz == spec.conv_out_dim(x.dz),
                "conv3d backward: grad_out shape mismatch");

        Tensor4<T> grad_x(x.dx, x.dy, x.dz, x.c);
        std::fill(gw.begin(), gw.end(), T(0));
        std::fill(gb.begin(), gb.end(), T(0));

        const int IC = spec.in_ch, OC = spec.out_ch;
        const T* __restrict__ wp_all = w.data();
        const T* __restrict__ xp_all = x.data.data();
        T* __restrict__ gxp_all = grad_x.data.data();
        T* __restrict__ gwp_all = gw.data();
        for (int oz = 0; oz < grad_out.dz; ++oz) {
            int kzlo, kzhi;
            detail::conv_tap_range(oz, spec.stride, spec.pad, spec.kernel, x.dz, kzlo, kzhi);
            for (int oy = 0; oy < grad_out.dy; ++oy) {
                int kylo, kyhi;
                detail::conv_tap_range(oy, spec.stride, spec.pad, spec.kernel, x.dy, kylo, kyhi);
                for (int ox = 0; ox < grad_out.dx; ++ox) {
                    int kxlo, kxhi;
                    detail::conv_tap_range(ox, spec.stride, spec.pad, spec.kernel, x.dx, kxlo, kxhi);
                    const T* __restrict__ gp =
                        grad_out.data.data() + grad_out.index(ox, oy, oz, 0);
                    for (int oc = 0; oc < OC; ++oc) gb[oc] += gp[oc];
                    for (int kz = kzlo; kz < kzhi; ++kz) {
                        const int iz = oz * spec.stride - spec.pad + kz;
                        for (int ky = kylo; ky < kyhi; ++ky) {
                            const int iy = oy * spec.stride - spec.pad + ky;
                            for (int kx = kxlo; kx < kxhi; ++kx) {
                                const int ix = ox * spec.stride - spec.pad + kx;
                                const std::size_t xoff = x.index(ix, iy, iz, 0);
                                const T* __restrict__ xp = xp_all + xoff;
                                T* __restrict__ gxp = gxp_all + xoff;
                                const std::size_t wbase = detail::weight_base(spec, kz, ky, kx);
                                for (int ic = 0; ic < IC; ++ic) {
                                    const T xv = xp[ic];
                                    const T* __restrict__ wrow =
                                        wp_all + wbase + static_cast<std::size_t>(ic) * OC;
                                    T* __restrict__ gwrow =
                                        gwp_all + wbase + static_cast<std::size_t>(ic) * OC;
                                    T gx_acc(0);
                                    for (int oc = 0; oc < OC; ++oc) {
                                        const T g = gp[oc];
                                        gwrow[oc] += xv * g;
                                        gx_acc += wrow[oc] * g;
                                    }
                                    gxp[ic] += gx_acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        return grad_x;
    }
};

// Transposed convolution. k=2/stride=2 doubles the spatial dims; stride-1
// kernels with symmetric padding preserve them.
template <typename T>
struct Deconv3d {
    ConvSpec spec;
    std::vector<T> w;  // same layout as Conv3d: ((kz, ky, kx, ic), oc)
    std::vector<T> b;
    std::vector<T> gw;
    std::vector<T> gb;

    explicit Deconv3d(ConvSpec s) : spec(s) {
        require(s.in_ch > 0 && s.out_ch > 0 && s.kernel > 0 && s.stride > 0 && s.pad >= 0,
                "invalid deconvolution spec");
        require(s.deconv_out_dim(1) >= 1, "deconvolution collapses spatial dims");
        w.assign(spec.weight_count(), T(0));
        b.assign(static_cast<std::size_t>(s.out_ch), T(0));
        gw.assign(w.size(), T(0));
        gb.assign(b.size(), T(0));
    }

    void init(std::mt19937_64& rng) {
        const double fan_in =
            static_cast<double>(spec.kernel) * spec.kernel * spec.kernel * spec.in_ch;
        const double bound = std::sqrt(1.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : w) v = static_cast<T>(u(rng));
        for (auto& v : b) v = T(0);
    }

    // Gather form: output o collects input i where i*stride - pad + k == o.
    Tensor4<T> forward(const Tensor4<T>& x) const {
        require(x.c == spec.in_ch, "deconv3d: input has " + std::to_string(x.c) +
                                       " channels, spec expects " + std::to_string(spec.in_ch));
        Tensor4<T> out(spec.deconv_out_dim(x.dx), spec.deconv_out_dim(x.dy),
                       spec.deconv_out_dim(x.dz), spec.out_ch);

        const int IC = spec.in_ch, OC = spec.out_ch, K = spec.kernel, S = spec.stride,
                  P = spec.pad;
        const T* __restrict__ wp_all = w.data();
        const T* __restrict__ xp_all = x.data.data();
        std::vector<T> acc(static_cast<std::size_t>(OC));
        for (int oz = 0; oz < out.dz; ++oz) {
            for (int oy = 0; oy < out.dy; ++oy) {
                for (int ox = 0; ox < out.dx; ++ox) {
                    for (int oc = 0; oc < OC; ++oc) acc[oc] = b[oc];
                    for (int kz = 0; kz < K; ++kz) {
                        const int tz = oz + P - kz;
                        if (tz < 0 || tz % S != 0) continue;
                        const int iz = tz / S;
                        if (iz >= x.dz) continue;
                        for (int ky = 0; ky < K; ++ky) {
                            const int ty = oy + P - ky;
                            if (ty < 0 || ty % S != 0) continue;
                            const int iy = ty / S;
                            if (iy >= x.dy) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int tx = ox + P - kx;
                                if (tx < 0 || tx % S != 0) continue;
                                const int ix = tx / S;
                                if (ix >= x.dx) continue;
                                const T* __restrict__ xp = xp_all + x.index(ix, iy, iz, 0);
                                const T* __restrict__ wp =
                                    wp_all + detail::weight_base(spec, kz, ky, kx);
                                for (int ic = 0; ic < IC; ++ic) {
                                    const T xv = xp[ic];
                                    const T* __restrict__ wrow = wp + static_cast<std::size_t>(ic) * OC;
                                    for (int oc = 0; oc < OC; ++oc) acc[oc] += xv * wrow[oc];
                                }
                            }
                        }
                    }
                    T* __restrict__ op = out.data.data() + out.index(ox, oy, oz, 0);
                    for (int oc = 0; oc < OC; ++oc) op[oc] = acc[oc];
                }
            }
        }
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
        require(x.c == spec.in_ch, "deconv3d backward: input channel mismatch");
        require(grad_out.c == spec.out_ch && grad_out.dx == spec.deconv_out_dim(x.dx) &&
                    grad_out.dy == spec.deconv_out_dim(x.dy) &&
                    grad_out.dz == spec.deconv_out_dim(x.dz),
                "deconv3d backward: grad_out shape mismatch");

        Tensor4<T> grad_x(x.dx, x.dy, x.dz, x.c);
        std::fill(gw.begin(), gw.end(), T(0));
        std::fill(gb.begin(), gb.end(), T(0));

        const int IC = spec.in_ch, OC = spec.out_ch, K = spec.kernel, S = spec.stride,
                  P = spec.pad;
        for (std::size_t e = 0; e < grad_out.spatial_size(); ++e) {
            const T* gp = grad_out.data.data() + e * OC;
            for (int oc = 0; oc < OC; ++oc) gb[oc] += gp[oc];
        }

        // grad wrt input and weights: iterate the forward scatter pattern
        // from the input side; every (input voxel, tap) touches output
        // o = i*stride - pad + k.
        const T* __restrict__ wp_all = w.data();
        T* __restrict__ gwp_all = gw.data();
        const T* __restrict__ gop_all = grad_out.data.data();
        for (int iz = 0; iz < x.dz; ++iz) {
            for (int iy = 0; iy < x.dy; ++iy) {
                for (int ix = 0; ix < x.dx; ++ix) {
                    const std::size_t xoff = x.index(ix, iy, iz, 0);
                    const T* __restrict__ xp = x.data.data() + xoff;
                    T* __restrict__ gxp = grad_x.data.data() + xoff;
                    for (int kz = 0; kz < K; ++kz) {
                        const int oz = iz * S - P + kz;
                        if (oz < 0 || oz >= grad_out.dz) continue;
                        for (int ky = 0; ky < K; ++ky) {
                            const int oy = iy * S - P + ky;
                            if (oy < 0 || oy >= grad_out.dy) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int ox = ix * S - P + kx;
                                if (ox < 0 || ox >= grad_out.dx) continue;
                                const T* __restrict__ gp =
                                    gop_all + grad_out.index(ox, oy, oz, 0);
                                const std::size_t wbase = detail::weight_base(spec, kz, ky, kx);
                                for (int ic = 0; ic < IC; ++ic) {
                                    const T xv = xp[ic];
                                    const T* __restrict__ wrow =
                                        wp_all + wbase + static_cast<std::size_t>(ic) * OC;
                                    T* __restrict__ gwrow =
                                        gwp_all + wbase + static_cast<std::size_t>(ic) * OC;
                                    T gx_acc(0);
                                    for (int oc = 0; oc < OC; ++oc) {
                                        const T g = gp[oc];
                                        gwrow[oc] += xv * g;
                                        gx_acc += wrow[oc] * g;
                                    }
                                    gxp[ic] += gx_acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        return grad_x;
    }
};

// 2x2x2 max pooling, stride 2. Ties resolve to the first element in window
// scan order (z, then y, then x ascending, i.e. the lowest flat index).
template <typename T>
struct MaxPool3dResult {
    Tensor4<T> out;
    std::vector<std::size_t> argmax;  // flat index into the input data array
};

template <typename T>
MaxPool3dResult<T> maxpool3d_forward(const Tensor4<T>& x) {
    require(x.dx % 2 == 0 && x.dy % 2 == 0 && x.dz % 2 == 0,
            "maxpool3d requires even spatial dims, got " + x.shape_string());
    MaxPool3dResult<T> r{Tensor4<T>(x.dx / 2, x.dy / 2, x.dz / 2, x.c), {}};
    r.argmax.resize(r.out.size());
    for (int oz = 0; oz < r.out.dz; ++oz)
        for (int oy = 0; oy < r.out.dy; ++oy)
            for (int ox = 0; ox < r.out.dx; ++ox)
                for (int ch = 0; ch < x.c; ++ch) {
                    T best{};
                    std::size_t best_idx = 0;
                    bool first = true;
                    for (int kz = 0; kz < 2; ++kz)
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx) {
                                const std::size_t idx =
                                    x.index(2 * ox + kx, 2 * oy + ky, 2 * oz + kz, ch);
                                const T v = x.data[idx];
                                if (first || v > best) {
                                    best = v;
                                    best_idx = idx;
                                    first = false;
                                }
                            }
                    const std::size_t o = r.out.index(ox, oy, oz, ch);
                    r.out.data[o] = best;
                    r.argmax[o] = best_idx;
                }
    return r;
}

template <typename T>
Tensor4<T> maxpool3d_backward(const Tensor4<T>& x, const MaxPool3dResult<T>& fwd,
                              const Tensor4<T>& grad_out) {
    check_same_shape(fwd.out, grad_out, "maxpool3d backward");
    Tensor4<T> grad_x(x.dx, x.dy, x.dz, x.c);
    for (std::size_t o = 0; o < grad_out.size(); ++o)
        grad_x.data[fwd.argmax[o]] += grad_out.data[o];
    return grad_x;
}

inline constexpr double kLeakySlope = 0.01;

template <typename T>
Tensor4<T> leaky_relu_forward(const Tensor4<T>& x, double slope = kLeakySlope) {
    Tensor4<T> out = x;
    const T s = static_cast<T>(slope);
    for (auto& v : out.data)
        if (v <= T(0)) v *= s;
    return out;
}

// Gradient is 1 for positive inputs, `slope` otherwise (x = 0 takes the
// slope branch).
template <typename T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out,
                               double slope = kLeakySlope) {
    check_same_shape(x, grad_out, "leaky_relu backward");
    Tensor4<T> grad_x = grad_out;
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < grad_x.size(); ++i)
        if (x.data[i] <= T(0)) grad_x.data[i] *= s;
    return grad_x;
}

// Channel concatenation, (current-layer output, skip connection) order.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.same_spatial(b), "concat_channels: spatial dims differ, " + a.shape_string() +
                                   " vs " + b.shape_string());
    require(a.c > 0 && b.c > 0, "concat_channels: zero-channel tensor");
    Tensor4<T> out(a.dx, a.dy, a.dz, a.c + b.c);
    for (std::size_t s = 0; s < out.spatial_size(); ++s) {
        T* op = out.data.data() + s * out.c;
        const T* ap = a.data.data() + s * a.c;
        const T* bp = b.data.data() + s * b.c;
        for (int ch = 0; ch < a.c; ++ch) op[ch] = ap[ch];
        for (int ch = 0; ch < b.c; ++ch) op[a.c + ch] = bp[ch];
    }
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(int ca, int cb,
                                                           const Tensor4<T>& grad_out) {
    require(grad_out.c == ca + cb, "concat backward: channel count mismatch");
    Tensor4<T> ga(grad_out.dx, grad_out.dy, grad_out.dz, ca);
    Tensor4<T> gb(grad_out.dx, grad_out.dy, grad_out.dz, cb);
    for (std::size_t s = 0; s < grad_out.spatial_size(); ++s) {
        const T* gp = grad_out.data.data() + s * grad_out.c;
        T* ap = ga.data.data() + s * ca;
        T* bp = gb.data.data() + s * cb;
        for (int ch = 0; ch < ca; ++ch) ap[ch] = gp[ch];
        for (int ch = 0; ch < cb; ++ch) bp[ch] = gp[ca + ch];
    }
    return {std::move(ga), std::move(gb)};
}

}  // namespace dvx
