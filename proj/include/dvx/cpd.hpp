#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dvx/pointset.hpp"

namespace dvx {

struct CpdParams {
    double beta = 2.0;       // Gaussian width of the motion-coherence kernel
    double lambda = 3.0;     // regularization weight
    double w_outlier = 0.1;  // uniform-outlier mixture weight
    int max_iters = 150;
    double tolerance = 1e-8;  // relative change of the objective

    void validate() const {
        require(beta > 0.0, "cpd: beta must be positive");
        require(lambda > 0.0, "cpd: lambda must be positive");
        require(w_outlier >= 0.0 && w_outlier < 1.0, "cpd: w_outlier must lie in [0, 1)");
        require(max_iters >= 1, "cpd: max_iters must be >= 1");
        require(tolerance > 0.0, "cpd: tolerance must be positive");
    }
};

struct CpdResult {
    PointSet deformed;             // template moved by G * W
    std::vector<double> trace;     // regularized negative log-likelihood per iteration
    std::vector<double> posterior_sum;  // per reference point: sum_m P(m|n)
    std::vector<double> outlier_mass;   // per reference point: residual mass
    double sigma2 = 0.0;
    int iterations = 0;
};

// Non-rigid coherent point drift: EM over a GMM whose centroids are the
// template points displaced by G*W, with a uniform outlier component and a
// motion-coherence prior on W. Exact O(MN) Gaussian evaluation.
inline CpdResult cpd_register(const PointSet& tmpl, const PointSet& reference,
                              const CpdParams& params = {}) {
    params.validate();
    tmpl.validate();
    reference.validate();

    const Eigen::Index m = static_cast<Eigen::Index>(tmpl.size());
    const Eigen::Index n = static_cast<Eigen::Index>(reference.size());
    Eigen::MatrixXd y(m, 3), x(n, 3);
    for (Eigen::Index i = 0; i < m; ++i) {
        y(i, 0) = tmpl.points[i].x;
        y(i, 1) = tmpl.points[i].y;
        y(i, 2) = tmpl.points[i].z;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        x(j, 0) = reference.points[j].x;
        x(j, 1) = reference.points[j].y;
        x(j, 2) = reference.points[j].z;
    }

    Eigen::MatrixXd g(m, m);
    const double inv_2b2 = 1.0 / (2.0 * params.beta * params.beta);
    for (Eigen::Index i = 0; i < m; ++i) {
        g(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const double d2 = (y.row(i) - y.row(j)).squaredNorm();
            const double v = std::exp(-d2 * inv_2b2);
            g(i, j) = v;
            g(j, i) = v;
        }
    }

    double sigma2 = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < m; ++i) sigma2 += (x.row(j) - y.row(i)).squaredNorm();
    sigma2 /= static_cast<double>(3 * m * n);

    Eigen::MatrixXd w_coef = Eigen::MatrixXd::Zero(m, 3);
    Eigen::MatrixXd t = y;
    CpdResult res;
    res.posterior_sum.assign(static_cast<std::size_t>(n), 0.0);
    res.outlier_mass.assign(static_cast<std::size_t>(n), 0.0);

    Eigen::VectorXd p1(m), pt1(n);
    Eigen::MatrixXd px(m, 3);
    Eigen::VectorXd expcol(m);
    double prev_obj = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < params.max_iters; ++iter) {
        // E-step with the uniform outlier component folded into the
        // denominator.
        const double c = std::pow(2.0 * M_PI * sigma2, 1.5) *
                         (params.w_outlier / (1.0 - params.w_outlier)) *
                         (static_cast<double>(m) / static_cast<double>(n));
        const double inv_2s2 = 1.0 / (2.0 * sigma2);
        p1.setZero();
        px.setZero();
        double nll = 0.0;
        const double log_comp = std::log1p(-params.w_outlier) -
                                std::log(static_cast<double>(m)) -
                                1.5 * std::log(2.0 * M_PI * sigma2);
        for (Eigen::Index j = 0; j < n; ++j) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                const double e = std::exp(-(t.row(i) - x.row(j)).squaredNorm() * inv_2s2);
                expcol(i) = e;
                s += e;
            }
            const double denom = s + c;
            if (denom > 0.0) {
                const double inv_denom = 1.0 / denom;
                pt1(j) = s * inv_denom;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const double p = expcol(i) * inv_denom;
                    p1(i) += p;
                    px.row(i) += p * x.row(j);
                }
                res.posterior_sum[static_cast<std::size_t>(j)] = pt1(j);
                res.outlier_mass[static_cast<std::size_t>(j)] = c * inv_denom;
            } else {
                pt1(j) = 0.0;
                res.posterior_sum[static_cast<std::size_t>(j)] = 0.0;
                res.outlier_mass[static_cast<std::size_t>(j)] = 0.0;
            }
            double lik = std::exp(log_comp) * s;
            if (params.w_outlier > 0.0) lik += params.w_outlier / static_cast<double>(n);
            nll -= std::log(std::max(lik, std::numeric_limits<double>::min()));
        }
        const double obj = nll + 0.5 * params.lambda * (w_coef.transpose() * g * w_coef).trace();
        res.trace.push_back(obj);
        res.iterations = iter + 1;
        if (std::abs(prev_obj - obj) < params.tolerance * (std::abs(prev_obj) + 1.0)) break;
        prev_obj = obj;

        // M-step: (d(P1) G + lambda sigma^2 I) W = PX - d(P1) Y.
        Eigen::MatrixXd a = p1.asDiagonal() * g;
        a.diagonal().array() += params.lambda * sigma2;
        const Eigen::MatrixXd rhs = px - p1.asDiagonal() * y;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        w_coef = lu.solve(rhs);
        if (!w_coef.allFinite())
            fail("cpd: singular M-step system (rcond too small); try a larger lambda");

        t = y + g * w_coef;
        const double np = pt1.sum();
        if (np <= 0.0) fail("cpd: all reference points classified as outliers");
        double s2 = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) s2 += pt1(j) * x.row(j).squaredNorm();
        s2 -= 2.0 * (px.array() * t.array()).sum();
        for (Eigen::Index i = 0; i < m; ++i) s2 += p1(i) * t.row(i).squaredNorm();
        sigma2 = s2 / (3.0 * np);
        if (sigma2 < 1e-12) {
            // Machine-precision fit: the mixture has degenerated and further
            // EM steps only churn roundoff.
            sigma2 = 1e-12;
            break;
        }
    }

    res.sigma2 = sigma2;
    res.deformed = tmpl;
    for (Eigen::Index i = 0; i < m; ++i)
        res.deformed.points[static_cast<std::size_t>(i)] = {t(i, 0), t(i, 1), t(i, 2)};
    return res;
}

}  // namespace dvx
