#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <iostream>
#include <vector>

#include "dvx/kdtree.hpp"
#include "dvx/pointset.hpp"

namespace dvx {

struct NricpParams {
    int max_iters = 50;
    double smooth_weight = 10.0;  // initial Laplacian weight
    double anneal = 0.85;         // per-iteration multiplier
    int knn = 6;                  // template graph connectivity

    void validate() const {
        require(max_iters >= 1, "nricp: max_iters must be >= 1");
        require(smooth_weight >= 0.0, "nricp: smoothing weight must be >= 0");
        require(anneal > 0.0 && anneal <= 1.0, "nricp: annealing factor must lie in (0, 1]");
        require(knn >= 1, "nricp: knn must be >= 1");
    }
};

struct NricpResult {
    PointSet deformed;
    std::vector<double> trace;  // mean squared correspondence residual per iteration
    int bridge_edges = 0;       // edges added to connect the k-NN graph
};

namespace detail {

struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[b] = a;
        return true;
    }
};

}  // namespace detail

// Non-rigid ICP: alternate nearest-neighbor correspondences with a
// Laplacian-regularized least-squares displacement solve
//   (I + alpha L) D = X_corr - Y,
// annealing alpha so late iterations fit finer detail. The Laplacian comes
// from the symmetrized k-NN graph of the template; disconnected graphs are
// bridged by closest-pair edges between components.
inline NricpResult nricp_register(const PointSet& tmpl, const PointSet& reference,
                                  const NricpParams& params = {}) {
    params.validate();
    tmpl.validate();
    reference.validate();
    const std::size_t m = tmpl.size();

    // Symmetric k-NN adjacency over the template.
    KdTree3 tmpl_tree(tmpl.points);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < m; ++i) {
        const auto hits = tmpl_tree.knearest(tmpl.points[i],
                                             std::min<std::size_t>(params.knn, m - 1), i);
        for (const auto& h : hits)
            edges.emplace_back(std::min(i, h.index), std::max(i, h.index));
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    NricpResult res;
    detail::DisjointSet components(m);
    for (const auto& [a, b] : edges) components.unite(a, b);
    // Bridge remaining components through their closest point pairs.
    for (;;) {
        std::vector<std::size_t> roots(m);
        bool connected = true;
        for (std::size_t i = 0; i < m; ++i) {
            roots[i] = components.find(i);
            if (roots[i] != roots[0]) connected = false;
        }
        if (connected) break;
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> bridge{0, 0};
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                if (roots[i] == roots[j]) continue;
                const double d2 = (tmpl.points[i] - tmpl.points[j]).squared_norm();
                if (d2 < best) {
                    best = d2;
                    bridge = {i, j};
                }
            }
        edges.push_back(bridge);
        components.unite(bridge.first, bridge.second);
        ++res.bridge_edges;
    }
    if (res.bridge_edges > 0)
        std::cerr << "nricp: k-NN graph was disconnected; added " << res.bridge_edges
                  << " bridge edge(s)\n";

    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> degree(m, 0.0);
    for (const auto& [a, b] : edges) {
        trips.emplace_back(static_cast<int>(a), static_cast<int>(b), -1.0);
        trips.emplace_back(static_cast<int>(b), static_cast<int>(a), -1.0);
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    for (std::size_t i = 0; i < m; ++i)
        trips.emplace_back(static_cast<int>(i), static_cast<int>(i), degree[i]);
    Eigen::SparseMatrix<double> laplacian(static_cast<int>(m), static_cast<int>(m));
    laplacian.setFromTriplets(trips.begin(), trips.end());

    KdTree3 ref_tree(reference.points);
    Eigen::MatrixXd disp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 3);
    Eigen::MatrixXd rhs(static_cast<Eigen::Index>(m), 3);
    double alpha = params.smooth_weight;
    Eigen::SparseMatrix<double> identity(static_cast<int>(m), static_cast<int>(m));
    identity.setIdentity();

    for (int iter = 0; iter < params.max_iters; ++iter) {
        double obj = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const Vec3 moved = tmpl.points[i] +
                               Vec3{disp(static_cast<Eigen::Index>(i), 0),
                                    disp(static_cast<Eigen::Index>(i), 1),
                                    disp(static_cast<Eigen::Index>(i), 2)};
            const auto hit = ref_tree.nearest(moved);
            const Vec3 target = reference.points[hit.index] - tmpl.points[i];
            rhs(static_cast<Eigen::Index>(i), 0) = target.x;
            rhs(static_cast<Eigen::Index>(i), 1) = target.y;
            rhs(static_cast<Eigen::Index>(i), 2) = target.z;
            obj += hit.dist2;
        }
        res.trace.push_back(obj / static_cast<double>(m));

        Eigen::SparseMatrix<double> a = identity + alpha * laplacian;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
        require(solver.info() == Eigen::Success, "nricp: Laplacian system factorization failed");
        disp = solver.solve(rhs);
        alpha *= params.anneal;
    }

    res.deformed = tmpl;
    for (std::size_t i = 0; i < m; ++i)
        res.deformed.points[i] = tmpl.points[i] + Vec3{disp(static_cast<Eigen::Index>(i), 0),
                                                       disp(static_cast<Eigen::Index>(i), 1),
                                                       disp(static_cast<Eigen::Index>(i), 2)};
    return res;
}

}  // namespace dvx
