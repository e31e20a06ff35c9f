#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dvx/pointio.hpp"
#include "dvx/pointset.hpp"

namespace dvx {

// Corner order used everywhere trilinear weights appear, as (x,y,z) lattice
// offsets: 000, 001, 010, 100, 011, 110, 101, 111. This order is part of the
// binary formats and must not change.
inline constexpr std::array<std::array<int, 3>, 8> kCornerOffsets = {{
    {0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {1, 0, 0},
    {0, 1, 1}, {1, 1, 0}, {1, 0, 1}, {1, 1, 1},
}};

struct TrilinearLocal {
    double lx = 0.0, ly = 0.0, lz = 0.0;
};

inline std::array<double, 8> trilinear_weights(const TrilinearLocal& l) {
    std::array<double, 8> w;
    for (int n = 0; n < 8; ++n) {
        const auto& c = kCornerOffsets[n];
        w[n] = (c[0] ? l.lx : 1.0 - l.lx) *
               (c[1] ? l.ly : 1.0 - l.ly) *
               (c[2] ? l.lz : 1.0 - l.lz);
    }
    return w;
}

// Binary occupancy over a q^3 grid, row-major with x fastest.
struct VoxelOccupancy {
    int q = 0;
    std::vector<std::uint8_t> data;
    NormalizationTransform transform;

    std::size_t flat(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(q) * (static_cast<std::size_t>(y) +
                                              static_cast<std::size_t>(q) * static_cast<std::size_t>(z));
    }
    std::uint8_t at(int x, int y, int z) const { return data[flat(x, y, z)]; }
    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

// q^3 x 3 displacement vectors in normalized units, same voxel order as
// VoxelOccupancy, the three components of one voxel stored contiguously.
struct DisplacementField {
    int q = 0;
    std::vector<double> data;

    explicit DisplacementField(int q_ = 0)
        : q(q_), data(static_cast<std::size_t>(q_) * q_ * q_ * 3, 0.0) {}

    std::size_t flat(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) +
                static_cast<std::size_t>(q) * (static_cast<std::size_t>(y) +
                                               static_cast<std::size_t>(q) * static_cast<std::size_t>(z))) * 3;
    }
    Vec3 at(int x, int y, int z) const {
        const std::size_t f = flat(x, y, z);
        return {data[f], data[f + 1], data[f + 2]};
    }
    void set(int x, int y, int z, const Vec3& v) {
        const std::size_t f = flat(x, y, z);
        data[f] = v.x;
        data[f + 1] = v.y;
        data[f + 2] = v.z;
    }
    void add(std::size_t voxel_flat3, const Vec3& v) {
        data[voxel_flat3] += v.x;
        data[voxel_flat3 + 1] += v.y;
        data[voxel_flat3 + 2] += v.z;
    }
    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Per-point record of the enclosing voxel, the eight surrounding
// displacement samples (voxel centers) and their trilinear weights. Weights
// are shared across the x/y/z displacement components.
struct AffinityEntry {
    std::array<int, 3> voxel;                   // enclosing voxel index
    std::array<std::size_t, 8> neighbor_flat3;  // corner order, *3 for field indexing
    std::array<std::array<int, 3>, 8> neighbors;
    std::array<double, 8> weights;
};

struct AffinityTable {
    int q = 0;
    std::vector<AffinityEntry> entries;
    std::size_t clamped_points = 0;  // points outside [0,1]^3 at build time

    std::size_t size() const { return entries.size(); }
};

namespace detail {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Displacement samples live at voxel centers: grid coordinate g = p*q - 0.5
// equals i exactly at the center of voxel i. Points in the outer half-voxel
// shell clamp onto the boundary sample.
inline void cell_and_local(double p, int q, int& base, double& l) {
    double g = p * q - 0.5;
    if (g < 0.0) g = 0.0;
    if (g > q - 1.0) g = q - 1.0;
    base = static_cast<int>(g);
    if (base > q - 2) base = q >= 2 ? q - 2 : 0;
    l = g - base;
    if (l < 0.0) l = 0.0;
    if (l > 1.0) l = 1.0;
}

}  // namespace detail

struct P2vResult {
    VoxelOccupancy occupancy;
    AffinityTable table;
};

// Rasterizes a normalized point set to binary occupancy and builds the
// point affinity table. Points outside [0,1]^3 are clamped and counted.
inline P2vResult p2v(const PointSet& set, int q,
                     const NormalizationTransform& transform = {}) {
    set.validate();
    require(q >= 1, "grid dimension must be >= 1");

    P2vResult out;
    out.occupancy.q = q;
    out.occupancy.transform = transform;
    out.occupancy.data.assign(static_cast<std::size_t>(q) * q * q, 0);
    out.table.q = q;
    out.table.entries.resize(set.size());

    const std::size_t sq = static_cast<std::size_t>(q);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Vec3& p = set.points[i];
        if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0 || p.z < 0.0 || p.z > 1.0)
            ++out.table.clamped_points;

        AffinityEntry& e = out.table.entries[i];
        int base[3];
        double local[3];
        for (int a = 0; a < 3; ++a) {
            const double c = p[a];
            e.voxel[a] = detail::clampi(static_cast<int>(std::floor(c * q)), 0, q - 1);
            detail::cell_and_local(c, q, base[a], local[a]);
        }
        out.occupancy.data[out.occupancy.flat(e.voxel[0], e.voxel[1], e.voxel[2])] = 1;

        e.weights = trilinear_weights({local[0], local[1], local[2]});
        for (int n = 0; n < 8; ++n) {
            const auto& c = kCornerOffsets[n];
            const int nx = detail::clampi(base[0] + c[0], 0, q - 1);
            const int ny = detail::clampi(base[1] + c[1], 0, q - 1);
            const int nz = detail::clampi(base[2] + c[2], 0, q - 1);
            e.neighbors[n] = {nx, ny, nz};
            e.neighbor_flat3[n] =
                (static_cast<std::size_t>(nx) + sq * (static_cast<std::size_t>(ny) +
                                                      sq * static_cast<std::size_t>(nz))) * 3;
        }
    }
    return out;
}

// V2P: per-point displacement as the weighted sum of the eight neighboring
// field samples, weights shared across components.
inline std::vector<Vec3> v2p(const DisplacementField& field, const AffinityTable& table) {
    require(field.q == table.q, "field / affinity table grid size mismatch");
    std::vector<Vec3> out(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        const AffinityEntry& e = table.entries[i];
        Vec3 v;
        for (int n = 0; n < 8; ++n) {
            const double w = e.weights[n];
            const std::size_t f = e.neighbor_flat3[n];
            v.x += w * field.data[f];
            v.y += w * field.data[f + 1];
            v.z += w * field.data[f + 2];
        }
        out[i] = v;
    }
    return out;
}

// Exact adjoint of v2p: routes per-point gradients back onto the eight
// neighboring field samples with the forward weights. Accumulation runs in
// ascending point order so results are bit-reproducible.
inline DisplacementField scatter_grad(const AffinityTable& table,
                                      const std::vector<Vec3>& point_grads, int q) {
    require(q == table.q, "grid size mismatch between table and requested field");
    require(point_grads.size() == table.size(), "one gradient per table entry required");
    DisplacementField grad(q);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const AffinityEntry& e = table.entries[i];
        const Vec3& g = point_grads[i];
        for (int n = 0; n < 8; ++n) grad.add(e.neighbor_flat3[n], g * e.weights[n]);
    }
    return grad;
}

// Ablation mode: each point takes the displacement of its enclosing voxel.
inline std::vector<Vec3> nearest_voxel_lookup(const DisplacementField& field,
                                              const AffinityTable& table) {
    require(field.q == table.q, "field / affinity table grid size mismatch");
    std::vector<Vec3> out(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& v = table.entries[i].voxel;
        out[i] = field.at(v[0], v[1], v[2]);
    }
    return out;
}

// Ground-truth displacement rasterization: each voxel holding at least one
// real template point receives the mean of (x_map(i) - y_i) over the points
// it contains; empty voxels stay zero.
inline DisplacementField rasterize_gt(const CorrespondencePair& normalized_pair, int q) {
    require(normalized_pair.has_gt(), "rasterize_gt requires ground-truth correspondences");
    require(q >= 1, "grid dimension must be >= 1");

    DisplacementField z(q);
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(q) * q * q, 0);
    const std::size_t sq = static_cast<std::size_t>(q);
    for (const auto& [ti, ri] : normalized_pair.gt_map) {
        if (!normalized_pair.tmpl.is_real(ti) || !normalized_pair.ref.is_real(ri)) continue;
        const Vec3& y = normalized_pair.tmpl.points[ti];
        int vx[3];
        for (int a = 0; a < 3; ++a)
            vx[a] = detail::clampi(static_cast<int>(std::floor(y[a] * q)), 0, q - 1);
        const std::size_t flat =
            static_cast<std::size_t>(vx[0]) + sq * (static_cast<std::size_t>(vx[1]) +
                                                    sq * static_cast<std::size_t>(vx[2]));
        z.add(flat * 3, normalized_pair.ref.points[ri] - y);
        ++counts[flat];
    }
    for (std::size_t f = 0; f < counts.size(); ++f) {
        if (counts[f] <= 1) continue;
        const double inv = 1.0 / static_cast<double>(counts[f]);
        z.data[f * 3] *= inv;
        z.data[f * 3 + 1] *= inv;
        z.data[f * 3 + 2] *= inv;
    }
    return z;
}

// Field file: magic "VXDF", q as u32, then q^3 x 3 little-endian float32 in
// the voxel order documented above.
inline void write_field(const DisplacementField& field, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot open '" + path.string() + "' for writing");
    os.write("VXDF", 4);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(field.q));
    for (double v : field.data) detail::write_pod<float>(os, static_cast<float>(v));
    if (!os) fail("write failed for '" + path.string() + "'");
}

inline DisplacementField read_field(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open '" + path.string() + "' for reading");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VXDF", 4) != 0) fail("bad magic: not a VXDF field file");
    const auto q = detail::read_pod<std::uint32_t>(is, "grid dimension");
    if (q == 0 || q > 4096) fail("implausible VXDF grid dimension");
    DisplacementField field(static_cast<int>(q));
    for (double& v : field.data) v = detail::read_pod<float>(is, "field value");
    return field;
}

}  // namespace dvx
