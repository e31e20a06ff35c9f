#include <catch2/catch_amalgamated.hpp>

#include "dvx/perturb.hpp"
#include "dvx/synth.hpp"

using namespace dvx;

namespace {

PointSet grid_cloud(std::size_t n_side) {
    PointSet s;
    for (std::size_t k = 0; k < n_side; ++k)
        for (std::size_t j = 0; j < n_side; ++j)
            for (std::size_t i = 0; i < n_side; ++i)
                s.points.push_back({double(i) / (n_side - 1), double(j) / (n_side - 1),
                                    double(k) / (n_side - 1)});
    return s;
}

}  // namespace

TEST_CASE("add_uniform_noise count, containment and immutability") {
    const PointSet base = grid_cloud(10);  // 1000 points

    CHECK(add_uniform_noise(base, 0.0, 1).size() == base.size());

    auto noisy = add_uniform_noise(base, 0.5, 1);
    REQUIRE(noisy.size() == 1500);
    const Bbox box = base.bbox();
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        if (i < base.size()) {
            // Pre-existing points are bitwise untouched.
            CHECK(noisy.points[i].x == base.points[i].x);
            CHECK(noisy.labels[i] == PointLabel::real);
        } else {
            CHECK(noisy.labels[i] == PointLabel::noise);
            CHECK(noisy.points[i].x >= box.lo.x);
            CHECK(noisy.points[i].x <= box.hi.x);
            CHECK(noisy.points[i].y >= box.lo.y);
            CHECK(noisy.points[i].y <= box.hi.y);
            CHECK(noisy.points[i].z >= box.lo.z);
            CHECK(noisy.points[i].z <= box.hi.z);
        }
    }

    CHECK(add_uniform_noise(base, 1.0, 2).size() == 2 * base.size());

    // Determinism under the seed.
    auto again = add_uniform_noise(base, 0.5, 1);
    CHECK(again.points.back().x == noisy.points.back().x);
}

TEST_CASE("remove_random retains ceil((1-r)M) points deterministically") {
    const PointSet base = grid_cloud(10);

    auto same = remove_random(base, 0.0, 3);
    CHECK(same.size() == base.size());

    std::vector<std::size_t> kept1, kept2;
    auto a = remove_random(base, 0.3, 3, &kept1);
    auto b = remove_random(base, 0.3, 3, &kept2);
    CHECK(a.size() == 700);
    CHECK(kept1 == kept2);
    CHECK(std::is_sorted(kept1.begin(), kept1.end()));

    PointSet tiny;
    for (int i = 0; i < 9; ++i) tiny.points.push_back({double(i), 0.0, 0.0});
    CHECK_THROWS(remove_random(tiny, 0.9, 1));
}

TEST_CASE("add_sphere_outlier places points on the sphere surface") {
    const PointSet base = grid_cloud(5);
    const Vec3 center{2.0, 2.0, 2.0};
    auto out = add_sphere_outlier(base, center, 0.1, 200, 9);
    REQUIRE(out.size() == base.size() + 200);
    for (std::size_t i = base.size(); i < out.size(); ++i) {
        CHECK((out.points[i] - center).norm() == Catch::Approx(0.1).margin(1e-9));
        CHECK(out.labels[i] == PointLabel::noise);
    }
    CHECK_THROWS_AS(add_sphere_outlier(base, center, 0.1, 0, 9), std::invalid_argument);
}

TEST_CASE("default sphere placement sits at 0.3 bbox diagonals from the centroid") {
    const PointSet base = grid_cloud(8);
    const double diag = base.bbox().diagonal();
    auto out = add_sphere_outlier(base, 17);
    REQUIRE(out.size() > base.size());
    const std::size_t n_added = out.size() - base.size();
    CHECK(n_added == base.size() / 10);

    // Recover the exact center by a linear sphere fit: for points on one
    // sphere, 2 (p_i - p_0) . c = |p_i|^2 - |p_0|^2 holds exactly.
    const Vec3 p0 = out.points[base.size()];
    double ata[3][3] = {};
    double atb[3] = {};
    for (std::size_t i = base.size() + 1; i < out.size(); ++i) {
        const Vec3 a = (out.points[i] - p0) * 2.0;
        const double b = out.points[i].squared_norm() - p0.squared_norm();
        for (int r = 0; r < 3; ++r) {
            for (int s = 0; s < 3; ++s) ata[r][s] += a[r] * a[s];
            atb[r] += a[r] * b;
        }
    }
    // 3x3 Gaussian elimination.
    double m[3][4];
    for (int r = 0; r < 3; ++r) {
        for (int s = 0; s < 3; ++s) m[r][s] = ata[r][s];
        m[r][3] = atb[r];
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int s = col; s < 4; ++s) m[r][s] -= f * m[col][s];
        }
    }
    const Vec3 c{m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};

    CHECK((c - base.centroid()).norm() == Catch::Approx(0.3 * diag).epsilon(1e-6));
    for (std::size_t i = base.size(); i < out.size(); ++i)
        CHECK((out.points[i] - c).norm() == Catch::Approx(0.1 * diag).epsilon(1e-6));
}

TEST_CASE("remove_ball with radius zero is the identity") {
    const PointSet base = grid_cloud(5);
    auto res = remove_ball(base, base.centroid(), 0.0);
    CHECK(res.set.size() == base.size());
    CHECK(res.removed_fraction == 0.0);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK((res.set.points[i] - base.points[i]).norm() == 0.0);

    auto res2 = remove_ball(base, base.points[0], 0.3);
    CHECK(res2.set.size() < base.size());
    CHECK(res2.kept_indices.size() == res2.set.size());
}

TEST_CASE("remove_chunk keeps the removed fraction inside [0.10, 0.25]") {
    const PointSet base = grid_cloud(10);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto res = remove_chunk(base, seed);
        CHECK(res.removed_fraction >= 0.10);
        CHECK(res.removed_fraction <= 0.25);
        CHECK(res.set.size() + static_cast<std::size_t>(res.removed_fraction * 1000 + 0.5) ==
              base.size());
    }
    auto r1 = remove_chunk(base, 7);
    auto r2 = remove_chunk(base, 7);
    CHECK(r1.kept_indices == r2.kept_indices);
}

TEST_CASE("remap_gt drops pairs touching removed points") {
    std::vector<std::pair<std::size_t, std::size_t>> gt = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    // Template keeps indices {0, 2, 3}; reference keeps {0, 1, 3}.
    auto remapped = remap_gt(gt, {0, 2, 3}, 4, {0, 1, 3}, 4);
    REQUIRE(remapped.size() == 2);
    CHECK(remapped[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
    CHECK(remapped[1] == std::make_pair(std::size_t{2}, std::size_t{2}));
}
