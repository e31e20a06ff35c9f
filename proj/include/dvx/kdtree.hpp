#pragma once

#include <algorithm>
#include <limits>
#include <queue>
#include <vector>

#include "dvx/common.hpp"

namespace dvx {

// Static 3D k-d tree over a caller-owned point array, optionally restricted
// to a subset of indices. Median split on the widest axis.
class KdTree3 {
public:
    KdTree3(const std::vector<Vec3>& points, std::vector<std::size_t> subset = {})
        : points_(points) {
        if (subset.empty()) {
            subset.resize(points.size());
            std::iota(subset.begin(), subset.end(), std::size_t{0});
        }
        require(!subset.empty(), "kd-tree requires at least one point");
        nodes_.reserve(subset.size());
        root_ = build(subset, 0, subset.size());
    }

    std::size_t size() const { return nodes_.size(); }

    struct Hit {
        std::size_t index = 0;  // index into the original point array
        double dist2 = std::numeric_limits<double>::infinity();
    };

    Hit nearest(const Vec3& query) const {
        Hit best;
        search(root_, query, best);
        return best;
    }

    // k nearest neighbors, ascending by distance. exclude, when valid,
    // removes one original index (self-matches in graph construction).
    std::vector<Hit> knearest(const Vec3& query, std::size_t k,
                              std::size_t exclude = static_cast<std::size_t>(-1)) const {
        auto cmp = [](const Hit& a, const Hit& b) { return a.dist2 < b.dist2; };
        std::priority_queue<Hit, std::vector<Hit>, decltype(cmp)> heap(cmp);
        search_k(root_, query, k, exclude, heap);
        std::vector<Hit> out(heap.size());
        for (auto it = out.rbegin(); it != out.rend(); ++it) {
            *it = heap.top();
            heap.pop();
        }
        return out;
    }

private:
    struct Node {
        std::size_t point = 0;
        int axis = 0;
        int left = -1;
        int right = -1;
    };

    int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
        if (lo >= hi) return -1;
        Bbox box;
        for (std::size_t i = lo; i < hi; ++i) box.expand(points_[idx[i]]);
        const Vec3 ext = box.extent();
        int axis = 0;
        if (ext.y > ext[axis]) axis = 1;
        if (ext.z > ext[axis]) axis = 2;

        const std::size_t mid = (lo + hi) / 2;
        std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                         [&](std::size_t a, std::size_t b) {
                             if (points_[a][axis] != points_[b][axis])
                                 return points_[a][axis] < points_[b][axis];
                             return a < b;  // stable under duplicates
                         });
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back({idx[mid], axis, -1, -1});
        nodes_[self].left = build(idx, lo, mid);
        nodes_[self].right = build(idx, mid + 1, hi);
        return self;
    }

    void search(int node, const Vec3& q, Hit& best) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        const Vec3& p = points_[n.point];
        const double d2 = (p - q).squared_norm();
        if (d2 < best.dist2 || (d2 == best.dist2 && n.point < best.index)) {
            best.dist2 = d2;
            best.index = n.point;
        }
        const double delta = q[n.axis] - p[n.axis];
        const int near = delta < 0.0 ? n.left : n.right;
        const int far = delta < 0.0 ? n.right : n.left;
        search(near, q, best);
        if (delta * delta <= best.dist2) search(far, q, best);
    }

    template <typename Heap>
    void search_k(int node, const Vec3& q, std::size_t k, std::size_t exclude,
                  Heap& heap) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        const Vec3& p = points_[n.point];
        if (n.point != exclude) {
            const double d2 = (p - q).squared_norm();
            if (heap.size() < k) {
                heap.push({n.point, d2});
            } else if (d2 < heap.top().dist2) {
                heap.pop();
                heap.push({n.point, d2});
            }
        }
        const double delta = q[n.axis] - p[n.axis];
        const int near = delta < 0.0 ? n.left : n.right;
        const int far = delta < 0.0 ? n.right : n.left;
        search_k(near, q, k, exclude, heap);
        if (heap.size() < k || delta * delta <= heap.top().dist2)
            search_k(far, q, k, exclude, heap);
    }

    const std::vector<Vec3>& points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace dvx
