#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "dvx/pointset.hpp"

namespace dvx {

// Deformation model for the synthetic sheet sequence: a sum of Gaussian
// bumps whose amplitudes oscillate slowly over the sequence, composed with a
// smoothly varying rigid motion. amplitude = 0 leaves only the rigid part.
struct SheetDeformParams {
    double amplitude = 0.15;      // peak bump displacement, sheet units
    int n_bumps = 4;
    double bump_sigma_min = 0.15; // bump widths, relative to sheet extent
    double bump_sigma_max = 0.35;
    double temporal_freq_max = 1.5;  // amplitude oscillation cycles per sequence
    double rigid_angle = 0.1;     // peak rotation in radians
    double rigid_shift = 0.05;    // peak translation, sheet units
};

namespace detail {

struct Bump {
    double cx, cy, sigma2, amp_scale, freq, phase;
    Vec3 dir;
};

inline Vec3 rotate(const Vec3& p, const Vec3& axis, double angle) {
    // Rodrigues rotation about a unit axis.
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 k = axis;
    const Vec3 kxp{k.y * p.z - k.z * p.y, k.z * p.x - k.x * p.z, k.x * p.y - k.y * p.x};
    return p * c + kxp * s + k * (k.dot(p) * (1.0 - c));
}

}  // namespace detail

// Generates n_states deformed samplings of a grid_res x grid_res sheet on
// [0,1]^2. Point order is identical across states, so correspondence is the
// identity by construction.
inline std::vector<PointSet> synth_dataset(std::uint64_t seed, std::size_t n_states,
                                           std::size_t grid_res,
                                           const SheetDeformParams& params = {}) {
    require(n_states >= 2, "synth_dataset requires at least 2 states");
    require(grid_res >= 2, "grid_res must be >= 2");
    require(params.amplitude >= 0.0 && params.n_bumps >= 0, "invalid deform parameters");

    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<detail::Bump> bumps;
    for (int k = 0; k < params.n_bumps; ++k) {
        detail::Bump b;
        b.cx = u01(rng);
        b.cy = u01(rng);
        const double s = params.bump_sigma_min +
                         (params.bump_sigma_max - params.bump_sigma_min) * u01(rng);
        b.sigma2 = s * s;
        b.amp_scale = 0.5 + 0.5 * u01(rng);
        b.freq = 0.5 + (params.temporal_freq_max - 0.5) * u01(rng);
        b.phase = 2.0 * M_PI * u01(rng);
        Vec3 d{gauss(rng), gauss(rng), 1.0 + std::abs(gauss(rng))};  // bias out of plane
        b.dir = d / d.norm();
        bumps.push_back(b);
    }

    Vec3 axis{gauss(rng), gauss(rng), gauss(rng)};
    if (axis.norm() < 1e-9) axis = {0.0, 0.0, 1.0};
    axis = axis / axis.norm();
    const double rot_freq = 0.5 + u01(rng);
    const double rot_phase = 2.0 * M_PI * u01(rng);
    Vec3 shift_freq{0.5 + u01(rng), 0.5 + u01(rng), 0.5 + u01(rng)};
    Vec3 shift_phase{2.0 * M_PI * u01(rng), 2.0 * M_PI * u01(rng), 2.0 * M_PI * u01(rng)};

    std::vector<PointSet> states;
    states.reserve(n_states);
    const double dt = 1.0 / static_cast<double>(n_states - 1);
    for (std::size_t t = 0; t < n_states; ++t) {
        const double tau = static_cast<double>(t) * dt;
        PointSet s;
        s.points.reserve(grid_res * grid_res);
        for (std::size_t iy = 0; iy < grid_res; ++iy) {
            for (std::size_t ix = 0; ix < grid_res; ++ix) {
                const double x = static_cast<double>(ix) / static_cast<double>(grid_res - 1);
                const double y = static_cast<double>(iy) / static_cast<double>(grid_res - 1);
                Vec3 p{x, y, 0.0};
                for (const auto& b : bumps) {
                    const double r2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                    const double w = std::exp(-r2 / (2.0 * b.sigma2));
                    const double a = params.amplitude * b.amp_scale *
                                     std::sin(2.0 * M_PI * b.freq * tau + b.phase);
                    p += b.dir * (a * w);
                }
                const double angle =
                    params.rigid_angle * std::sin(2.0 * M_PI * rot_freq * tau + rot_phase);
                p = detail::rotate(p - Vec3{0.5, 0.5, 0.0}, axis, angle) + Vec3{0.5, 0.5, 0.0};
                p += Vec3{params.rigid_shift * std::sin(2.0 * M_PI * shift_freq.x * tau + shift_phase.x),
                          params.rigid_shift * std::sin(2.0 * M_PI * shift_freq.y * tau + shift_phase.y),
                          params.rigid_shift * std::sin(2.0 * M_PI * shift_freq.z * tau + shift_phase.z)};
                s.points.push_back(p);
            }
        }
        states.push_back(std::move(s));
    }
    return states;
}

struct DatasetSplit {
    std::vector<std::size_t> train_states;
    std::vector<std::size_t> test_states;
};

// Block split: per 100-state block the first 80 states train and the last 20
// test. Partial blocks (including datasets under 100 states) use the same
// 80/20 proportion.
inline DatasetSplit split_dataset(std::size_t n_states) {
    require(n_states >= 2, "split_dataset requires a sequential dataset");
    DatasetSplit out;
    for (std::size_t block = 0; block < n_states; block += 100) {
        const std::size_t len = std::min<std::size_t>(100, n_states - block);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(0.8 * static_cast<double>(len)));
        for (std::size_t i = 0; i < len; ++i)
            (i < n_train ? out.train_states : out.test_states).push_back(block + i);
    }
    return out;
}

// Draws (template, reference) state index pairs from one pool, restricted to
// temporal gap <= max_gap so deformations stay in the regime the network is
// trained for.
inline std::vector<std::pair<std::size_t, std::size_t>>
draw_state_pairs(const std::vector<std::size_t>& pool, std::size_t n_pairs,
                 std::size_t max_gap, std::uint64_t seed) {
    require(pool.size() >= 2, "pair pool too small");
    require(max_gap >= 1, "max_gap must be >= 1");

    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < pool.size(); ++a)
        for (std::size_t b = 0; b < pool.size(); ++b) {
            if (a == b) continue;
            const std::size_t gap = pool[a] > pool[b] ? pool[a] - pool[b] : pool[b] - pool[a];
            if (gap <= max_gap) candidates.emplace_back(pool[a], pool[b]);
        }
    require(!candidates.empty(), "no admissible pairs under the gap constraint");

    auto rng = make_rng(seed);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(n_pairs);
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    for (std::size_t i = 0; i < n_pairs; ++i) out.push_back(candidates[pick(rng)]);
    return out;
}

// Assembles a correspondence pair from two states of one synthetic sequence;
// the ground-truth map is the identity.
inline CorrespondencePair make_pair(const std::vector<PointSet>& states, std::size_t tmpl_idx,
                                    std::size_t ref_idx) {
    require(tmpl_idx < states.size() && ref_idx < states.size(), "state index out of range");
    CorrespondencePair pair;
    pair.tmpl = states[tmpl_idx];
    pair.ref = states[ref_idx];
    const std::size_t m = std::min(pair.tmpl.size(), pair.ref.size());
    pair.gt_map.reserve(m);
    for (std::size_t i = 0; i < m; ++i) pair.gt_map.emplace_back(i, i);
    return pair;
}

}  // namespace dvx
