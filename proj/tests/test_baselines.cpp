#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dvx/cpd.hpp"
#include "dvx/nricp.hpp"
#include "dvx/perturb.hpp"
#include "dvx/synth.hpp"

using namespace dvx;

namespace {

PointSet normalized_cloud(std::uint64_t seed, std::size_t n) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    PointSet s;
    for (std::size_t i = 0; i < n; ++i) s.points.push_back({u(rng), u(rng), u(rng)});
    return s;
}

// Direct dense-EM re-implementation of non-rigid CPD, materializing the full
// posterior matrix and solving the M-step by Gaussian elimination. Slow and
// simple on purpose; used as the oracle for the library implementation.
struct DenseCpdOracle {
    std::vector<Vec3> run(const std::vector<Vec3>& y, const std::vector<Vec3>& x, double beta,
                          double lambda, double w, int iters) {
        const std::size_t m = y.size(), n = x.size();
        std::vector<std::vector<double>> g(m, std::vector<double>(m));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                g[i][j] = std::exp(-(y[i] - y[j]).squared_norm() / (2.0 * beta * beta));

        double sigma2 = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) sigma2 += (x[j] - y[i]).squared_norm();
        sigma2 /= 3.0 * m * n;

        std::vector<Vec3> t = y;
        std::vector<std::vector<double>> wc(m, std::vector<double>(3, 0.0));
        std::vector<std::vector<double>> p(m, std::vector<double>(n));
        for (int it = 0; it < iters; ++it) {
            const double c = std::pow(2.0 * M_PI * sigma2, 1.5) * (w / (1.0 - w)) *
                             (double(m) / double(n));
            for (std::size_t j = 0; j < n; ++j) {
                double denom = c;
                for (std::size_t i = 0; i < m; ++i) {
                    p[i][j] = std::exp(-(t[i] - x[j]).squared_norm() / (2.0 * sigma2));
                    denom += p[i][j];
                }
                for (std::size_t i = 0; i < m; ++i) p[i][j] /= denom;
            }
            std::vector<double> p1(m, 0.0);
            std::vector<Vec3> px(m);
            double np = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    p1[i] += p[i][j];
                    px[i] += x[j] * p[i][j];
                }
            for (double v : p1) np += v;

            // A = d(P1) G + lambda sigma2 I, rhs = PX - d(P1) Y.
            std::vector<std::vector<double>> a(m, std::vector<double>(m));
            std::vector<std::vector<double>> rhs(m, std::vector<double>(3));
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < m; ++j) a[i][j] = p1[i] * g[i][j];
                a[i][i] += lambda * sigma2;
                for (int d = 0; d < 3; ++d) rhs[i][d] = px[i][d] - p1[i] * y[i][d];
            }
            // Gaussian elimination with partial pivoting.
            for (std::size_t col = 0; col < m; ++col) {
                std::size_t piv = col;
                for (std::size_t r = col + 1; r < m; ++r)
                    if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
                std::swap(a[col], a[piv]);
                std::swap(rhs[col], rhs[piv]);
                for (std::size_t r = col + 1; r < m; ++r) {
                    const double f = a[r][col] / a[col][col];
                    for (std::size_t cc = col; cc < m; ++cc) a[r][cc] -= f * a[col][cc];
                    for (int d = 0; d < 3; ++d) rhs[r][d] -= f * rhs[col][d];
                }
            }
            for (std::size_t r = m; r-- > 0;) {
                for (int d = 0; d < 3; ++d) {
                    double acc = rhs[r][d];
                    for (std::size_t cc = r + 1; cc < m; ++cc) acc -= a[r][cc] * wc[cc][d];
                    wc[r][d] = acc / a[r][r];
                }
            }

            for (std::size_t i = 0; i < m; ++i) {
                Vec3 disp{};
                for (std::size_t j = 0; j < m; ++j)
                    disp += Vec3{wc[j][0], wc[j][1], wc[j][2]} * g[i][j];
                t[i] = y[i] + disp;
            }
            double s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double pt1 = 0.0;
                for (std::size_t i = 0; i < m; ++i) pt1 += p[i][j];
                s2 += pt1 * x[j].squared_norm();
            }
            for (std::size_t i = 0; i < m; ++i) {
                s2 -= 2.0 * px[i].dot(t[i]);
                s2 += p1[i] * t[i].squared_norm();
            }
            sigma2 = std::max(s2 / (3.0 * np), 1e-12);
        }
        return t;
    }
};

}  // namespace

TEST_CASE("cpd leaves an already-aligned template in place") {
    PointSet set = normalized_cloud(1, 50);
    CpdParams params;
    params.max_iters = 80;
    params.tolerance = 1e-12;
    auto res = cpd_register(set, set, params);
    double max_disp = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i)
        max_disp = std::max(max_disp, (res.deformed.points[i] - set.points[i]).norm());
    CHECK(max_disp < 1e-6);
}

TEST_CASE("cpd recovers a pure translation to sub-1e-3 of the diagonal") {
    PointSet ref = normalized_cloud(2, 50);
    PointSet tmpl = ref;
    for (auto& p : tmpl.points) p += Vec3{0.1, 0.0, 0.0};

    CpdParams params;
    params.max_iters = 100;
    params.tolerance = 1e-12;
    auto res = cpd_register(tmpl, ref, params);

    const double diag = ref.bbox().diagonal();
    double err = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        err += (res.deformed.points[i] - ref.points[i]).norm();
    err /= double(ref.size());
    CHECK(err < 1e-3 * diag);
}

TEST_CASE("cpd matches the dense-EM oracle step for step") {
    PointSet ref = normalized_cloud(3, 30);
    PointSet tmpl = ref;
    for (auto& p : tmpl.points) p += Vec3{0.05, -0.03, 0.02};

    CpdParams params;
    params.max_iters = 10;
    params.tolerance = 1e-300;  // fixed iteration count for the comparison
    auto res = cpd_register(tmpl, ref, params);

    DenseCpdOracle oracle;
    auto expect = oracle.run(tmpl.points, ref.points, params.beta, params.lambda,
                             params.w_outlier, 10);
    for (std::size_t i = 0; i < tmpl.size(); ++i)
        CHECK((res.deformed.points[i] - expect[i]).norm() <= 1e-8);
}

TEST_CASE("cpd posterior mass sums to one and the objective is monotone") {
    PointSet ref = normalized_cloud(4, 60);
    PointSet tmpl = normalized_cloud(5, 40);
    CpdParams params;
    params.max_iters = 40;
    auto res = cpd_register(tmpl, ref, params);

    for (std::size_t j = 0; j < ref.size(); ++j)
        CHECK(res.posterior_sum[j] + res.outlier_mass[j] == Catch::Approx(1.0).margin(1e-9));

    for (std::size_t k = 1; k < res.trace.size(); ++k)
        CHECK(res.trace[k] <= res.trace[k - 1] + 1e-9);
}

TEST_CASE("an outlier-aware mixture beats w=0 under 50% reference noise") {
    auto states = synth_dataset(6, 3, 9);  // 81-point sheets
    PointSet tmpl = states[0];
    PointSet clean_ref = states[1];
    PointSet noisy_ref = add_uniform_noise(clean_ref, 0.5, 7);
    noisy_ref.labels.clear();  // baselines see raw unlabeled points

    auto run = [&](double w) {
        CpdParams params;
        params.w_outlier = w;
        params.max_iters = 60;
        auto res = cpd_register(tmpl, noisy_ref, params);
        double err = 0.0;
        for (std::size_t i = 0; i < tmpl.size(); ++i)
            err += (res.deformed.points[i] - clean_ref.points[i]).norm();
        return err / double(tmpl.size());
    };
    CHECK(run(0.5) < run(0.0));
}

TEST_CASE("cpd is invariant to template order and deterministic") {
    PointSet ref = normalized_cloud(8, 40);
    PointSet tmpl = normalized_cloud(9, 35);
    CpdParams params;
    params.max_iters = 25;
    auto a = cpd_register(tmpl, ref, params);
    auto b = cpd_register(tmpl, ref, params);
    for (std::size_t i = 0; i < tmpl.size(); ++i)
        CHECK((a.deformed.points[i] - b.deformed.points[i]).norm() == 0.0);

    // Reversing the template order permutes the output the same way.
    PointSet rev = tmpl;
    std::reverse(rev.points.begin(), rev.points.end());
    auto c = cpd_register(rev, ref, params);
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        const auto mirrored = c.deformed.points[tmpl.size() - 1 - i];
        CHECK((a.deformed.points[i] - mirrored).norm() <= 1e-9);
    }
}

TEST_CASE("cpd parameter validation") {
    PointSet s = normalized_cloud(10, 10);
    CpdParams bad;
    bad.beta = 0.0;
    CHECK_THROWS_AS(cpd_register(s, s, bad), std::invalid_argument);
    bad = {};
    bad.w_outlier = 1.0;
    CHECK_THROWS_AS(cpd_register(s, s, bad), std::invalid_argument);
}

TEST_CASE("nricp leaves identical sets untouched") {
    PointSet set = normalized_cloud(11, 60);
    NricpParams params;
    params.max_iters = 10;
    auto res = nricp_register(set, set, params);
    for (std::size_t i = 0; i < set.size(); ++i)
        CHECK((res.deformed.points[i] - set.points[i]).norm() <= 1e-12);
    CHECK(res.trace.front() == 0.0);
}

TEST_CASE("huge smoothing weight collapses the update to the mean residual") {
    PointSet tmpl = normalized_cloud(12, 50);
    PointSet ref = tmpl;
    for (auto& p : ref.points) p += Vec3{0.07, -0.02, 0.04};

    NricpParams params;
    params.max_iters = 1;
    params.smooth_weight = 1e6;
    params.anneal = 1.0;
    auto res = nricp_register(tmpl, ref, params);

    // Oracle: mean nearest-neighbor residual of the undeformed template.
    Vec3 mean{};
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        double best = 1e300;
        std::size_t bj = 0;
        for (std::size_t j = 0; j < ref.size(); ++j) {
            const double d2 = (tmpl.points[i] - ref.points[j]).squared_norm();
            if (d2 < best) {
                best = d2;
                bj = j;
            }
        }
        mean += ref.points[bj] - tmpl.points[i];
    }
    mean = mean / double(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        const Vec3 disp = res.deformed.points[i] - tmpl.points[i];
        CHECK((disp - mean).norm() <= 1e-3);
    }
}

TEST_CASE("nricp recovers a rigid translation after annealing") {
    auto states = synth_dataset(13, 2, 10);
    PointSet tmpl = states[0];
    PointSet ref = tmpl;
    for (auto& p : ref.points) p += Vec3{0.05, 0.03, -0.04};

    NricpParams params;
    params.max_iters = 40;
    auto res = nricp_register(tmpl, ref, params);
    double err = 0.0;
    for (std::size_t i = 0; i < tmpl.size(); ++i)
        err = std::max(err, (res.deformed.points[i] - ref.points[i]).norm());
    CHECK(err <= 1e-3);
}

TEST_CASE("nricp bridges disconnected clusters instead of failing") {
    // Two well-separated 10-point blobs: the 6-NN graph splits into two
    // components with k edges only inside each blob.
    PointSet tmpl;
    auto rng = make_rng(14);
    std::uniform_real_distribution<double> u(0.0, 0.05);
    for (int i = 0; i < 10; ++i) tmpl.points.push_back({u(rng), u(rng), u(rng)});
    for (int i = 0; i < 10; ++i) tmpl.points.push_back({0.9 + u(rng), u(rng), u(rng)});
    PointSet ref = tmpl;
    for (auto& p : ref.points) p += Vec3{0.01, 0.0, 0.0};

    NricpParams params;
    params.max_iters = 5;
    params.knn = 6;
    auto res = nricp_register(tmpl, ref, params);
    CHECK(res.bridge_edges >= 1);
}
