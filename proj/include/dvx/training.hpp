#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvx/perturb.hpp"
#include "dvx/pipeline.hpp"

namespace dvx {

struct TrainConfig {
    double lr = 3e-4;
    int batch_size = 1;  // the pipeline trains one pair at a time
    int q = 16;
    std::uint64_t phase1_iters = 500;
    std::uint64_t phase2_iters = 200;
    double removal_max = 0.3;  // augmentation draw ranges
    double noise_max = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_interval = 0;  // 0 disables periodic checkpoints
    std::filesystem::path checkpoint_path;
    double plateau_rel_tol = 1e-4;
    std::uint64_t plateau_window = 200;
    double margin = kNormalizationMargin;

    void validate() const {
        require(batch_size == 1, "batch size is fixed at 1");
        require(lr > 0.0, "learning rate must be positive");
        require(removal_max >= 0.0 && removal_max <= 0.3, "removal range is 0-30%");
        require(noise_max >= 0.0 && noise_max <= 1.0, "noise range is 0-100%");
        require(q >= 8 && q % 8 == 0, "q must be a positive multiple of 8");
    }

    std::string echo() const {
        std::ostringstream os;
        os.precision(17);
        os << "lr=" << lr << "\nbatch_size=" << batch_size << "\nq=" << q
           << "\nphase1_iters=" << phase1_iters << "\nphase2_iters=" << phase2_iters
           << "\nremoval_max=" << removal_max << "\nnoise_max=" << noise_max
           << "\nseed=" << seed << "\nplateau_rel_tol=" << plateau_rel_tol
           << "\nplateau_window=" << plateau_window << "\nmargin=" << margin << "\n";
        return os.str();
    }
};

struct TrainRecord {
    std::uint64_t iteration = 0;
    int phase = 1;
    double loss = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void save_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) fail("cannot open '" + path.string() + "' for writing");
        os << "iteration,phase,loss,seconds\n";
        os.precision(17);
        for (const auto& r : records)
            os << r.iteration << ',' << r.phase << ',' << r.loss << ',' << r.seconds << '\n';
    }
};

// Training-time perturbation: random removal followed by uniform noise on
// both sets independently, with the ground-truth map remapped to the
// surviving points.
inline CorrespondencePair augment_pair(const CorrespondencePair& pair, double removal_max,
                                       double noise_max, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double r_tmpl = removal_max * u01(rng);
    const double r_ref = removal_max * u01(rng);
    const double p_tmpl = noise_max * u01(rng);
    const double p_ref = noise_max * u01(rng);

    CorrespondencePair out;
    std::vector<std::size_t> kept_tmpl, kept_ref;
    out.tmpl = remove_random(pair.tmpl, r_tmpl, mix_seed(seed, 1), &kept_tmpl);
    out.ref = remove_random(pair.ref, r_ref, mix_seed(seed, 2), &kept_ref);
    out.gt_map = remap_gt(pair.gt_map, kept_tmpl, pair.tmpl.size(), kept_ref, pair.ref.size());
    out.tmpl = add_uniform_noise(out.tmpl, p_tmpl, mix_seed(seed, 3));
    out.ref = add_uniform_noise(out.ref, p_ref, mix_seed(seed, 4));
    return out;
}

namespace detail {

// Plateau rule: stop when the mean loss of the last full window improved on
// the previous window by less than rel_tol, relatively.
class PlateauDetector {
public:
    PlateauDetector(std::uint64_t window, double rel_tol)
        : window_(window), rel_tol_(rel_tol) {}

    bool push(double loss) {
        acc_ += loss;
        if (++count_ < window_) return false;
        const double mean = acc_ / static_cast<double>(window_);
        acc_ = 0.0;
        count_ = 0;
        const bool plateau =
            has_prev_ && (prev_mean_ - mean) < rel_tol_ * std::abs(prev_mean_);
        prev_mean_ = mean;
        has_prev_ = true;
        return plateau;
    }

private:
    std::uint64_t window_;
    double rel_tol_;
    double acc_ = 0.0;
    std::uint64_t count_ = 0;
    double prev_mean_ = 0.0;
    bool has_prev_ = false;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void maybe_checkpoint(const TrainConfig& cfg, PipelineState& state,
                             AdamState<float>& adam, std::uint8_t phase, std::uint64_t iter) {
    if (cfg.checkpoint_interval == 0 || cfg.checkpoint_path.empty()) return;
    if ((iter + 1) % cfg.checkpoint_interval != 0) return;
    TrainerState ts{phase, iter + 1};
    save_pipeline_file(state, cfg.echo(), cfg.checkpoint_path, &adam, &ts);
}

}  // namespace detail

struct TrainResult {
    PipelineState state;
    AdamState<float> adam;
    TrainLog log;
};

// Phase 1: supervised displacement-loss training of the DE network.
// Every pair must carry ground truth. Augmentation, pair choice and all other
// per-iteration randomness derive from (seed, phase, iteration) so a resumed
// run continues bit-identically.
inline void train_de_loop(const std::vector<CorrespondencePair>& pairs, const TrainConfig& cfg,
                          PipelineState& state, AdamState<float>& adam, TrainLog& log,
                          std::uint64_t start_iter = 0) {
    cfg.validate();
    require(!pairs.empty(), "training requires at least one pair");
    for (const auto& p : pairs) require(p.has_gt(), "phase 1 requires ground-truth maps");

    adam.lr = cfg.lr;
    auto refs = state.de_model.param_refs();
    detail::PlateauDetector plateau(cfg.plateau_window, cfg.plateau_rel_tol);
    for (std::uint64_t iter = start_iter; iter < cfg.phase1_iters; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t iter_seed = mix_seed(cfg.seed, iter * 2 + 1);
        auto rng = make_rng(iter_seed);
        std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
        const std::size_t pair_idx = pick(rng);

        const auto aug = augment_pair(pairs[pair_idx], cfg.removal_max, cfg.noise_max,
                                      mix_seed(iter_seed, 7));
        auto [npair, transform] = normalize_pair(aug, cfg.margin);
        const auto z = rasterize_gt(npair, cfg.q);
        auto vy = p2v(npair.tmpl, cfg.q, transform).occupancy;
        auto vx = p2v(npair.ref, cfg.q, transform).occupancy;

        const double loss = loss_disp(z, vy, vx, state.de_model);
        if (!std::isfinite(loss))
            fail("non-finite loss at phase 1 iteration " + std::to_string(iter) + " (pair " +
                 std::to_string(pair_idx) + ", seed " + std::to_string(cfg.seed) + ")");
        adam_step(refs, adam);

        log.records.push_back({iter, 1, loss, detail::seconds_since(t0)});
        detail::maybe_checkpoint(cfg, state, adam, 1, iter);
        if (plateau.push(loss)) break;
    }
}

inline TrainResult train_de(const std::vector<CorrespondencePair>& pairs,
                            const TrainConfig& cfg) {
    cfg.validate();
    TrainResult res{PipelineState(cfg.q), {}, {}};
    res.state.margin = cfg.margin;
    res.state.de_model.init(cfg.seed);
    train_de_loop(pairs, cfg, res.state, res.adam, res.log);
    return res;
}

// Phase 2: unsupervised point-projection training of the refinement network.
// The DE weights stay frozen; gradients reach the refinement parameters
// through the trilinear scatter only.
inline void train_refine_loop(const std::vector<CorrespondencePair>& pairs,
                              const TrainConfig& cfg, PipelineState& state,
                              AdamState<float>& adam, TrainLog& log,
                              std::uint64_t start_iter = 0) {
    cfg.validate();
    require(!pairs.empty(), "training requires at least one pair");
    if (!state.refine_model) {
        require(start_iter == 0, "resume requested but checkpoint lacks a refinement model");
        state.start_refinement();
        adam = {};  // fresh optimizer for the new parameter set
    }

    adam.lr = cfg.lr;
    auto refs = state.refine_model->param_refs();
    detail::PlateauDetector plateau(cfg.plateau_window, cfg.plateau_rel_tol);
    for (std::uint64_t iter = start_iter; iter < cfg.phase2_iters; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t iter_seed = mix_seed(cfg.seed, iter * 2 + 2);
        auto rng = make_rng(iter_seed);
        std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
        const std::size_t pair_idx = pick(rng);

        const auto aug = augment_pair(pairs[pair_idx], cfg.removal_max, cfg.noise_max,
                                      mix_seed(iter_seed, 7));
        auto [npair, transform] = normalize_pair(aug, cfg.margin);
        auto [vy, table_y] = p2v(npair.tmpl, cfg.q, transform);
        auto vx = p2v(npair.ref, cfg.q, transform).occupancy;

        // Frozen DE stage deforms the template.
        const auto de_field = forward_de(vy, vx, state.de_model);
        const auto de_disp = v2p(de_field, table_y);
        PointSet deformed = npair.tmpl;
        for (std::size_t i = 0; i < deformed.size(); ++i) deformed.points[i] += de_disp[i];

        auto [vy2, table_y2] = p2v(deformed, cfg.q, transform);
        auto fwd = state.refine_model->forward(stack_occupancies(vy2, vx));
        const auto refine_field = field_from_tensor(fwd.out);
        const auto refine_disp = v2p(refine_field, table_y2);
        PointSet final_pts = deformed;
        for (std::size_t i = 0; i < final_pts.size(); ++i) final_pts.points[i] += refine_disp[i];

        const auto pp = loss_pp(final_pts, npair.ref);
        if (!std::isfinite(pp.value))
            fail("non-finite loss at phase 2 iteration " + std::to_string(iter) + " (pair " +
                 std::to_string(pair_idx) + ", seed " + std::to_string(cfg.seed) + ")");

        const auto field_grad = scatter_grad(table_y2, pp.grads, cfg.q);
        state.refine_model->backward(fwd, tensor_from_field(field_grad));
        adam_step(refs, adam);

        log.records.push_back({iter, 2, pp.value, detail::seconds_since(t0)});
        detail::maybe_checkpoint(cfg, state, adam, 2, iter);
        if (plateau.push(pp.value)) break;
    }
}

inline void train_refine(const std::vector<CorrespondencePair>& pairs, const TrainConfig& cfg,
                         TrainResult& result) {
    AdamState<float> adam;
    train_refine_loop(pairs, cfg, result.state, adam, result.log);
    result.adam = adam;
}

}  // namespace dvx
