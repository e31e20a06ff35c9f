#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dvx/kdtree.hpp"
#include "dvx/network.hpp"
#include "dvx/voxelgrid.hpp"

namespace dvx {

// Network input: the two occupancy grids stacked as channels, template
// first, matching the (V_Y, V_X) argument order of the regressor.
inline Tensor4<float> stack_occupancies(const VoxelOccupancy& vy, const VoxelOccupancy& vx) {
    require(vy.q == vx.q, "occupancy grids must share one grid size");
    Tensor4<float> t(vy.q, vy.q, vy.q, 2);
    for (std::size_t s = 0; s < t.spatial_size(); ++s) {
        t.data[s * 2] = static_cast<float>(vy.data[s]);
        t.data[s * 2 + 1] = static_cast<float>(vx.data[s]);
    }
    return t;
}

inline DisplacementField field_from_tensor(const Tensor4<float>& t) {
    require(t.c == 3, "displacement tensor must have 3 channels");
    require(t.dx == t.dy && t.dy == t.dz, "displacement tensor must be cubic");
    DisplacementField f(t.dx);
    for (std::size_t i = 0; i < t.size(); ++i) f.data[i] = static_cast<double>(t.data[i]);
    return f;
}

inline Tensor4<float> tensor_from_field(const DisplacementField& f) {
    Tensor4<float> t(f.q, f.q, f.q, 3);
    for (std::size_t i = 0; i < f.data.size(); ++i) t.data[i] = static_cast<float>(f.data[i]);
    return t;
}

template <typename T>
Tensor4<T> field_tensor_cast(const DisplacementField& f) {
    Tensor4<T> t(f.q, f.q, f.q, 3);
    for (std::size_t i = 0; i < f.data.size(); ++i) t.data[i] = static_cast<T>(f.data[i]);
    return t;
}

inline DisplacementField forward_de(const VoxelOccupancy& vy, const VoxelOccupancy& vx,
                                    const DispVoxNet<float>& model) {
    require(vy.q == model.q, "occupancy grid size does not match the model");
    return field_from_tensor(model.infer(stack_occupancies(vy, vx)));
}

// Displacement loss core: L = ||Z - pred||^2 / Q^3 with its gradient wrt
// the prediction.
struct DispLoss {
    double value = 0.0;
    DisplacementField grad;  // dL/dpred
};

inline DispLoss loss_disp_value(const DisplacementField& z, const DisplacementField& pred) {
    require(z.q == pred.q, "loss_disp: field size mismatch");
    DispLoss out{0.0, DisplacementField(pred.q)};
    const double inv_q3 = 1.0 / (static_cast<double>(pred.q) * pred.q * pred.q);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double r = pred.data[i] - z.data[i];
        out.value += r * r;
        out.grad.data[i] = 2.0 * r * inv_q3;
    }
    out.value *= inv_q3;
    return out;
}

// Full supervised loss: forward pass, loss, and parameter gradients in one
// step. Returns the loss value; layer gw/gb buffers hold the gradients.
inline double loss_disp(const DisplacementField& z, const VoxelOccupancy& vy,
                        const VoxelOccupancy& vx, DispVoxNet<float>& model) {
    require(z.q == model.q, "loss_disp: target grid size does not match the model");
    auto fwd = model.forward(stack_occupancies(vy, vx));
    auto loss = loss_disp_value(z, field_from_tensor(fwd.out));
    model.backward(fwd, tensor_from_field(loss.grad));
    return loss.value;
}

// Point projection loss: mean distance from each real template point to the
// nearest real reference point. Noise-labeled points on either side are not
// considered. Gradients are unit residual directions / M; the nearest
// neighbor assignment is treated as fixed.
struct PpLoss {
    double value = 0.0;
    std::vector<Vec3> grads;          // per template point, zero for noise points
    std::vector<std::size_t> nn;      // reference index per template point
    std::size_t contributing = 0;
};

inline PpLoss loss_pp(const PointSet& deformed_tmpl, const PointSet& reference) {
    deformed_tmpl.validate();
    reference.validate();
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < reference.size(); ++i)
        if (reference.is_real(i)) targets.push_back(i);
    require(!targets.empty(), "loss_pp: no real reference points left as targets");

    KdTree3 tree(reference.points, targets);
    PpLoss out;
    out.grads.assign(deformed_tmpl.size(), Vec3{});
    out.nn.assign(deformed_tmpl.size(), static_cast<std::size_t>(-1));

    for (std::size_t i = 0; i < deformed_tmpl.size(); ++i) {
        if (!deformed_tmpl.is_real(i)) continue;
        const auto hit = tree.nearest(deformed_tmpl.points[i]);
        out.nn[i] = hit.index;
        const Vec3 r = deformed_tmpl.points[i] - reference.points[hit.index];
        const double d = r.norm();
        out.value += d;
        if (d > 0.0) out.grads[i] = r / d;
        ++out.contributing;
    }
    require(out.contributing > 0, "loss_pp: template has no real points");
    const double inv_m = 1.0 / static_cast<double>(out.contributing);
    out.value *= inv_m;
    for (auto& g : out.grads) g = g * inv_m;
    return out;
}

enum class RegMode { de_only, de_plus_refine_nearest, de_plus_refine_trilinear };

inline RegMode parse_reg_mode(const std::string& s) {
    if (s == "de_only" || s == "de") return RegMode::de_only;
    if (s == "de_plus_refine_nearest" || s == "nearest") return RegMode::de_plus_refine_nearest;
    if (s == "de_plus_refine_trilinear" || s == "trilinear" || s == "full")
        return RegMode::de_plus_refine_trilinear;
    fail("unknown registration mode '" + s + "'");
}

// Trained two-stage pipeline. The refinement model is absent on checkpoints
// written before phase 2 started.
struct PipelineState {
    int q = 0;
    double margin = kNormalizationMargin;
    DispVoxNet<float> de_model;
    std::optional<DispVoxNet<float>> refine_model;

    explicit PipelineState(int q_) : q(q_), de_model(q_) {}

    void start_refinement() {
        // Refinement starts from the DE weights.
        refine_model.emplace(q);
        refine_model->copy_weights_from(de_model);
    }
};

struct RegisterResult {
    PointSet deformed;        // world units, same order/labels as the input template
    double rmse_initial = -1.0;  // normalized units; -1 when no ground truth
    double rmse_de = -1.0;
    double rmse_final = -1.0;
    std::size_t clamped_points = 0;  // points leaving the unit cube before re-voxelization
};

// Full inference pipeline: joint normalization, P2V, DE regression, trilinear
// V2P onto the template, then (mode permitting) re-voxelization and the
// refinement stage, and denormalization.
inline RegisterResult register_pair(const CorrespondencePair& pair, const PipelineState& state,
                                    RegMode mode) {
    auto [npair, transform] = normalize_pair(pair, state.margin);

    auto [vy, table_y] = p2v(npair.tmpl, state.q, transform);
    auto [vx, table_x] = p2v(npair.ref, state.q, transform);

    RegisterResult res;
    if (npair.has_gt()) res.rmse_initial = rmse(npair.tmpl, npair.ref, npair.gt_map);

    const DisplacementField de_field = forward_de(vy, vx, state.de_model);
    const auto de_disp = v2p(de_field, table_y);
    PointSet deformed = npair.tmpl;
    for (std::size_t i = 0; i < deformed.size(); ++i) deformed.points[i] += de_disp[i];
    if (npair.has_gt()) res.rmse_de = rmse(deformed, npair.ref, npair.gt_map);

    if (mode != RegMode::de_only) {
        require(state.refine_model.has_value(),
                "refinement requested but the checkpoint has no refinement model");
        auto [vy2, table_y2] = p2v(deformed, state.q, transform);
        res.clamped_points = table_y2.clamped_points;
        const DisplacementField refine_field = forward_de(vy2, vx, *state.refine_model);
        const auto refine_disp = mode == RegMode::de_plus_refine_trilinear
                                     ? v2p(refine_field, table_y2)
                                     : nearest_voxel_lookup(refine_field, table_y2);
        for (std::size_t i = 0; i < deformed.size(); ++i) deformed.points[i] += refine_disp[i];
    }
    if (npair.has_gt()) res.rmse_final = rmse(deformed, npair.ref, npair.gt_map);

    res.deformed = transform.invert(deformed);
    res.deformed.labels = pair.tmpl.labels;
    return res;
}

// Pipeline checkpoint: "VXPC" header with q, the normalization margin and
// the echoed training config, then one or two VXNW blocks (DE, refinement)
// and an optional resume record.
struct TrainerState {
    std::uint8_t phase = 1;
    std::uint64_t iteration = 0;
};

inline void save_pipeline(PipelineState& state, const std::string& config_echo,
                          std::ostream& os, AdamState<float>* adam = nullptr,
                          const TrainerState* trainer = nullptr) {
    os.write("VXPC", 4);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(state.q));
    detail::write_pod<double>(os, state.margin);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(config_echo.size()));
    os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    detail::write_pod<std::uint8_t>(os, state.refine_model.has_value() ? 2 : 1);
    // Adam state travels with the model currently being trained.
    save_network(state.de_model, state.refine_model ? nullptr : adam, os);
    if (state.refine_model) save_network(*state.refine_model, adam, os);
    detail::write_pod<std::uint8_t>(os, trainer ? 1 : 0);
    if (trainer) {
        detail::write_pod<std::uint8_t>(os, trainer->phase);
        detail::write_pod<std::uint64_t>(os, trainer->iteration);
    }
}

struct LoadedPipeline {
    PipelineState state;
    std::string config_echo;
    AdamState<float> adam;
    TrainerState trainer;
    bool has_trainer = false;
};

inline LoadedPipeline load_pipeline(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VXPC", 4) != 0)
        fail("bad magic: not a VXPC pipeline checkpoint");
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != 1) fail("unsupported VXPC version " + std::to_string(version));
    const auto q = detail::read_pod<std::uint32_t>(is, "grid size");
    const auto margin = detail::read_pod<double>(is, "margin");
    const auto cfg_len = detail::read_pod<std::uint32_t>(is, "config length");
    std::string config(cfg_len, '\0');
    is.read(config.data(), cfg_len);
    if (!is) fail("truncated checkpoint while reading config echo");
    const auto n_models = detail::read_pod<std::uint8_t>(is, "model count");
    if (n_models != 1 && n_models != 2) fail("corrupt checkpoint: bad model count");

    LoadedPipeline out{PipelineState(static_cast<int>(q)), std::move(config), {}, {}, false};
    out.state.margin = margin;
    out.state.de_model = load_network<float>(is, n_models == 1 ? &out.adam : nullptr);
    if (n_models == 2) out.state.refine_model = load_network<float>(is, &out.adam);
    const auto has_trainer = detail::read_pod<std::uint8_t>(is, "trainer flag");
    if (has_trainer == 1) {
        out.has_trainer = true;
        out.trainer.phase = detail::read_pod<std::uint8_t>(is, "phase");
        out.trainer.iteration = detail::read_pod<std::uint64_t>(is, "iteration");
    }
    return out;
}

inline void save_pipeline_file(PipelineState& state, const std::string& config_echo,
                               const std::filesystem::path& path,
                               AdamState<float>* adam = nullptr,
                               const TrainerState* trainer = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot open '" + path.string() + "' for writing");
    save_pipeline(state, config_echo, os, adam, trainer);
    if (!os) fail("write failed for '" + path.string() + "'");
}

inline LoadedPipeline load_pipeline_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open '" + path.string() + "' for reading");
    return load_pipeline(is);
}

}  // namespace dvx
