#pragma once

#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "dvx/common.hpp"

namespace dvx {

enum class PointLabel : std::uint8_t { real = 0, noise = 1 };

// An ordered 3D point list. Labels, when present, mark synthetic noise
// points that are excluded from supervision and from error metrics.
struct PointSet {
    std::vector<Vec3> points;
    std::vector<PointLabel> labels;  // empty = all real

    std::size_t size() const { return points.size(); }
    bool labeled() const { return !labels.empty(); }

    bool is_real(std::size_t i) const {
        return labels.empty() || labels[i] == PointLabel::real;
    }

    std::size_t real_count() const {
        if (labels.empty()) return points.size();
        std::size_t n = 0;
        for (auto l : labels)
            if (l == PointLabel::real) ++n;
        return n;
    }

    void validate() const {
        require(!points.empty(), "point set must contain at least one point");
        require(labels.empty() || labels.size() == points.size(),
                "label list length does not match point count");
        for (const auto& p : points)
            require(p.finite(), "point set contains a non-finite coordinate");
    }

    Bbox bbox() const {
        Bbox b;
        for (const auto& p : points) b.expand(p);
        return b;
    }

    Vec3 centroid() const {
        Vec3 c;
        for (const auto& p : points) c += p;
        return c / static_cast<double>(points.size());
    }
};

// Template/reference pair with optional ground-truth correspondences.
// gt_map entries are (template index, reference index); the map is injective
// and defined only over real-labeled points on both sides.
struct CorrespondencePair {
    PointSet tmpl;      // Y, to be deformed
    PointSet ref;       // X, alignment target
    std::vector<std::pair<std::size_t, std::size_t>> gt_map;

    bool has_gt() const { return !gt_map.empty(); }

    void validate() const {
        tmpl.validate();
        ref.validate();
        for (const auto& [ti, ri] : gt_map) {
            require(ti < tmpl.size() && ri < ref.size(), "gt_map index out of range");
            require(tmpl.is_real(ti) && ref.is_real(ri),
                    "gt_map refers to a noise-labeled point");
        }
    }
};

// Shared similarity transform mapping a pair into the margin-inset unit cube:
// normalized = p * scale + offset.
struct NormalizationTransform {
    double scale = 1.0;
    Vec3 offset{};

    Vec3 apply(const Vec3& p) const { return p * scale + offset; }
    Vec3 invert(const Vec3& p) const { return (p - offset) / scale; }

    PointSet apply(const PointSet& s) const {
        PointSet out = s;
        for (auto& p : out.points) p = apply(p);
        return out;
    }
    PointSet invert(const PointSet& s) const {
        PointSet out = s;
        for (auto& p : out.points) p = invert(p);
        return out;
    }
};

inline constexpr double kNormalizationMargin = 0.05;

// Computes the joint-bbox similarity transform placing both sets into
// [margin, 1-margin]^3, longest axis spanning the full inset range, aspect
// ratio preserved, remaining axes centered.
inline std::pair<CorrespondencePair, NormalizationTransform>
normalize_pair(const CorrespondencePair& pair, double margin = kNormalizationMargin) {
    pair.validate();
    require(margin >= 0.0 && margin < 0.5, "margin must lie in [0, 0.5)");

    Bbox box;
    for (const auto& p : pair.tmpl.points) box.expand(p);
    for (const auto& p : pair.ref.points) box.expand(p);

    const double ext = box.max_extent();
    require(ext > 0.0, "degenerate bounding box: all points coincident");

    NormalizationTransform t;
    t.scale = (1.0 - 2.0 * margin) / ext;
    const Vec3 c = box.center();
    t.offset = Vec3{0.5, 0.5, 0.5} - c * t.scale;

    CorrespondencePair out = pair;
    out.tmpl = t.apply(pair.tmpl);
    out.ref = t.apply(pair.ref);
    return {std::move(out), t};
}

// Mean RMSE and its spread across a collection of registration runs.
struct ErrorStats {
    double e = 0.0;      // mean of per_pair
    double sigma = 0.0;  // population standard deviation of per_pair
    std::vector<double> per_pair;
};

inline ErrorStats error_stats(std::vector<double> per_pair) {
    require(!per_pair.empty(), "error_stats requires at least one value");
    ErrorStats s;
    s.per_pair = std::move(per_pair);
    s.e = std::accumulate(s.per_pair.begin(), s.per_pair.end(), 0.0) /
          static_cast<double>(s.per_pair.size());
    double acc = 0.0;
    for (double v : s.per_pair) acc += (v - s.e) * (v - s.e);
    s.sigma = std::sqrt(acc / static_cast<double>(s.per_pair.size()));
    return s;
}

// e = (1/M) sum ||y_i - x_map(i)||_2 / sqrt(3), over real-labeled
// correspondences only.
inline double rmse(const PointSet& aligned_tmpl, const PointSet& ref,
                   const std::vector<std::pair<std::size_t, std::size_t>>& gt_map) {
    require(!gt_map.empty(), "rmse requires a non-empty correspondence map");
    constexpr double inv_sqrt_d = 0.57735026918962576451;  // 1/sqrt(3)
    double acc = 0.0;
    std::size_t m = 0;
    for (const auto& [ti, ri] : gt_map) {
        require(ti < aligned_tmpl.size() && ri < ref.size(), "rmse: gt_map index out of range");
        if (!aligned_tmpl.is_real(ti) || !ref.is_real(ri)) continue;
        acc += (aligned_tmpl.points[ti] - ref.points[ri]).norm() * inv_sqrt_d;
        ++m;
    }
    require(m > 0, "rmse: no real-labeled correspondences");
    return acc / static_cast<double>(m);
}

}  // namespace dvx
