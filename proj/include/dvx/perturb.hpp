#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "dvx/pointset.hpp"

namespace dvx {

// Appends floor(p * M) points drawn uniformly over the set's bounding box,
// labeled noise. Pre-existing points and their order are untouched.
inline PointSet add_uniform_noise(const PointSet& set, double ratio, std::uint64_t seed) {
    set.validate();
    require(ratio >= 0.0 && ratio <= 1.0, "noise ratio must lie in [0, 1]");

    const std::size_t n_add =
        static_cast<std::size_t>(ratio * static_cast<double>(set.size()));
    PointSet out = set;
    if (n_add == 0) return out;

    if (out.labels.empty()) out.labels.assign(out.points.size(), PointLabel::real);
    const Bbox box = set.bbox();
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> ux(box.lo.x, box.hi.x);
    std::uniform_real_distribution<double> uy(box.lo.y, box.hi.y);
    std::uniform_real_distribution<double> uz(box.lo.z, box.hi.z);
    for (std::size_t i = 0; i < n_add; ++i) {
        out.points.push_back({ux(rng), uy(rng), uz(rng)});
        out.labels.push_back(PointLabel::noise);
    }
    return out;
}

// Keeps a uniform random subset of ceil((1-r) * M) points, preserving order.
// kept_indices, when given, receives the retained original indices so callers
// can remap correspondences.
inline PointSet remove_random(const PointSet& set, double ratio, std::uint64_t seed,
                              std::vector<std::size_t>* kept_indices = nullptr) {
    set.validate();
    require(ratio >= 0.0 && ratio < 1.0, "removal ratio must lie in [0, 1)");

    const std::size_t m = set.size();
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil((1.0 - ratio) * static_cast<double>(m)));
    require(keep >= 8, "removal would leave fewer than 8 points");

    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto rng = make_rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());

    PointSet out;
    out.points.reserve(keep);
    if (set.labeled()) out.labels.reserve(keep);
    for (std::size_t i : idx) {
        out.points.push_back(set.points[i]);
        if (set.labeled()) out.labels.push_back(set.labels[i]);
    }
    if (kept_indices) *kept_indices = std::move(idx);
    return out;
}

// Appends `count` points sampled uniformly on a sphere surface, labeled noise.
inline PointSet add_sphere_outlier(const PointSet& set, const Vec3& center, double radius,
                                   std::size_t count, std::uint64_t seed) {
    set.validate();
    require(count >= 1, "sphere outlier count must be >= 1");
    require(radius >= 0.0, "sphere radius must be nonnegative");

    PointSet out = set;
    if (out.labels.empty()) out.labels.assign(out.points.size(), PointLabel::real);
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        Vec3 d{gauss(rng), gauss(rng), gauss(rng)};
        double n = d.norm();
        while (n < 1e-12) {  // resample the rare degenerate draw
            d = {gauss(rng), gauss(rng), gauss(rng)};
            n = d.norm();
        }
        out.points.push_back(center + d * (radius / n));
        out.labels.push_back(PointLabel::noise);
    }
    return out;
}

// Default sphere placement: 10% of cardinality, radius 0.1 of the bbox
// diagonal, center offset 0.3 of the diagonal from the centroid along a
// random direction.
inline PointSet add_sphere_outlier(const PointSet& set, std::uint64_t seed) {
    set.validate();
    const double diag = set.bbox().diagonal();
    require(diag > 0.0, "degenerate bounding box");
    auto rng = make_rng(mix_seed(seed, 0x5f3759df));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
    double n = dir.norm();
    while (n < 1e-12) {
        dir = {gauss(rng), gauss(rng), gauss(rng)};
        n = dir.norm();
    }
    const Vec3 center = set.centroid() + dir * (0.3 * diag / n);
    const std::size_t count = std::max<std::size_t>(1, set.size() / 10);
    return add_sphere_outlier(set, center, 0.1 * diag, count, seed);
}

struct ChunkRemoval {
    PointSet set;
    std::vector<std::size_t> kept_indices;
    double removed_fraction = 0.0;
};

// Drops every point inside the given ball. Radius 0 keeps everything.
inline ChunkRemoval remove_ball(const PointSet& set, const Vec3& center, double radius) {
    set.validate();
    require(radius >= 0.0, "ball radius must be nonnegative");
    const double r2 = radius * radius;
    ChunkRemoval out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (radius > 0.0 && (set.points[i] - center).squared_norm() <= r2) continue;
        out.kept_indices.push_back(i);
        out.set.points.push_back(set.points[i]);
        if (set.labeled()) out.set.labels.push_back(set.labels[i]);
    }
    out.removed_fraction =
        1.0 - static_cast<double>(out.kept_indices.size()) / static_cast<double>(set.size());
    return out;
}

// Removes all points inside a random ball. The ball radius is rejection
// sampled until it captures 10-25% of the points, keeping tests stable where
// the choice is otherwise arbitrary.
inline ChunkRemoval remove_chunk(const PointSet& set, std::uint64_t seed) {
    set.validate();
    require(set.size() >= 100, "remove_chunk requires at least 100 points");

    const Bbox box = set.bbox();
    const double diag = box.diagonal();
    require(diag > 0.0, "degenerate bounding box");
    auto rng = make_rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
    std::uniform_real_distribution<double> urad(0.05 * diag, 0.4 * diag);

    const std::size_t m = set.size();
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const Vec3 center = set.points[pick(rng)];
        const double radius = urad(rng);
        std::size_t inside = 0;
        const double r2 = radius * radius;
        for (const auto& p : set.points)
            if ((p - center).squared_norm() <= r2) ++inside;
        const double frac = static_cast<double>(inside) / static_cast<double>(m);
        if (frac < 0.10 || frac > 0.25) continue;
        if (m - inside < 8) continue;
        return remove_ball(set, center, radius);
    }
    fail("remove_chunk: could not find a ball capturing 10-25% of the points");
}

// Rebuilds gt_map after one side was reduced to a subset of its points.
// old_to_new maps original index -> new index or npos.
inline std::vector<std::pair<std::size_t, std::size_t>>
remap_gt(const std::vector<std::pair<std::size_t, std::size_t>>& gt,
         const std::vector<std::size_t>& kept_tmpl, std::size_t old_tmpl_size,
         const std::vector<std::size_t>& kept_ref, std::size_t old_ref_size) {
    constexpr auto npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> tmap(old_tmpl_size, npos), rmap(old_ref_size, npos);
    if (kept_tmpl.empty())
        std::iota(tmap.begin(), tmap.end(), std::size_t{0});
    else
        for (std::size_t i = 0; i < kept_tmpl.size(); ++i) tmap[kept_tmpl[i]] = i;
    if (kept_ref.empty())
        std::iota(rmap.begin(), rmap.end(), std::size_t{0});
    else
        for (std::size_t i = 0; i < kept_ref.size(); ++i) rmap[kept_ref[i]] = i;

    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(gt.size());
    for (const auto& [ti, ri] : gt)
        if (tmap[ti] != npos && rmap[ri] != npos) out.emplace_back(tmap[ti], rmap[ri]);
    return out;
}

}  // namespace dvx
