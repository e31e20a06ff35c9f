// Command-line front end: synthetic data generation, perturbation,
// training, registration, evaluation and runtime benchmarks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dvx/evalharness.hpp"
#include "dvx/pointio.hpp"
#include "dvx/training.hpp"

namespace fs = std::filesystem;
using namespace dvx;

namespace {

std::string state_filename(std::size_t index, PointFormat format) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "state_%05zu.%s", index,
                  format == PointFormat::ascii ? "pts" : "vxpt");
    return buf;
}

std::vector<PointSet> load_states(const fs::path& dir, PointFormat format) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) fail("'" + dir.string() + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("state_", 0) == 0) files.push_back(entry.path());
    }
    require(!files.empty(), "no state_* files found in '" + dir.string() + "'");
    std::sort(files.begin(), files.end());
    std::vector<PointSet> states;
    states.reserve(files.size());
    for (const auto& f : files) states.push_back(read_points(f, format));
    return states;
}

struct CommonOpts {
    int q = 16;
    std::uint64_t seed = 0;
    std::string format = "binary";
    std::string checkpoint;
};

void add_format_flag(CLI::App* cmd, std::string& fmt) {
    cmd->add_option("--format", fmt, "point file format")
        ->check(CLI::IsMember({"ascii", "binary"}));
}

int cmd_synth(const fs::path& out_dir, std::size_t n_states, std::size_t grid_res,
              std::uint64_t seed, double amplitude, PointFormat format) {
    SheetDeformParams params;
    params.amplitude = amplitude;
    auto states = synth_dataset(seed, n_states, grid_res, params);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < states.size(); ++i)
        write_points(states[i], out_dir / state_filename(i, format), format);
    std::cout << "wrote " << states.size() << " states (" << states[0].size()
              << " points each) to " << out_dir.string() << "\n";
    return 0;
}

int cmd_perturb(const fs::path& in, const fs::path& out, PointFormat format, double noise,
                double remove, const std::string& outlier, std::uint64_t seed) {
    PointSet set = read_points(in, format);
    int actions = (noise > 0.0) + (remove > 0.0) + (!outlier.empty());
    require(actions == 1, "choose exactly one of --noise-ratio, --remove, --outlier");
    if (noise > 0.0) {
        set = add_uniform_noise(set, noise, seed);
    } else if (remove > 0.0) {
        set = remove_random(set, remove, seed);
    } else if (outlier == "sphere") {
        set = add_sphere_outlier(set, seed);
    } else if (outlier == "chunk") {
        auto res = remove_chunk(set, seed);
        std::cout << "removed fraction " << res.removed_fraction << "\n";
        set = std::move(res.set);
    } else {
        fail("unknown outlier kind '" + outlier + "'");
    }
    write_points(set, out, format);
    std::cout << "wrote " << set.size() << " points to " << out.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& data_dir, PointFormat format, const fs::path& out,
              const fs::path& log_path, TrainConfig cfg, std::size_t n_train_pairs,
              std::size_t pair_gap) {
    auto states = load_states(data_dir, format);
    auto split = split_dataset(states.size());
    auto ids = draw_state_pairs(split.train_states, n_train_pairs, pair_gap,
                                mix_seed(cfg.seed, 5));
    std::vector<CorrespondencePair> pairs;
    pairs.reserve(ids.size());
    for (const auto& [a, b] : ids) pairs.push_back(make_pair(states, a, b));

    cfg.checkpoint_path = out;
    std::cout << "phase 1: displacement loss, " << pairs.size() << " pairs, q=" << cfg.q
              << "\n";
    auto result = train_de(pairs, cfg);
    std::cout << "phase 1 done after " << result.log.records.size() << " iterations, last loss "
              << result.log.records.back().loss << "\n";
    std::cout << "phase 2: point projection loss\n";
    train_refine(pairs, cfg, result);
    const auto& last = result.log.records.back();
    std::cout << "phase 2 done, last loss " << last.loss << "\n";

    TrainerState ts{2, cfg.phase2_iters};
    save_pipeline_file(result.state, cfg.echo(), out, &result.adam, &ts);
    std::cout << "checkpoint written to " << out.string() << "\n";
    if (!log_path.empty()) result.log.save_csv(log_path);
    return 0;
}

int cmd_register(const fs::path& tmpl_path, const fs::path& ref_path, PointFormat format,
                 const std::string& method_name, const std::string& checkpoint,
                 const fs::path& out, const fs::path& corr_path, const ExperimentSpec& base) {
    CorrespondencePair pair;
    pair.tmpl = read_points(tmpl_path, format);
    pair.ref = read_points(ref_path, format);
    if (!corr_path.empty()) pair.gt_map = read_correspondences(corr_path);
    pair.validate();

    const Method method = parse_method(method_name);
    std::optional<PipelineState> pipeline;
    if (is_network_method(method)) {
        require(!checkpoint.empty(), "network methods need --checkpoint");
        pipeline = std::move(load_pipeline_file(checkpoint).state);
    }

    ExperimentSpec spec = base;
    auto [e, deformed] = run_method(pair, method, spec, pipeline ? &*pipeline : nullptr);
    write_points(deformed, out, format);
    if (pair.has_gt()) {
        auto [npair, t] = normalize_pair(pair, spec.margin);
        std::cout << "rmse_initial=" << rmse(npair.tmpl, npair.ref, npair.gt_map) << "\n";
        std::cout << "rmse_final=" << e << "\n";
    }
    std::cout << "wrote deformed template to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& data_dir, PointFormat format, const std::string& checkpoint,
             ExperimentSpec spec, const std::vector<std::string>& methods,
             const std::vector<double>& noise_ratios, const std::string& outlier,
             const std::string& target, const fs::path& out_prefix) {
    auto states = load_states(data_dir, format);
    for (const auto& m : methods) spec.methods.push_back(parse_method(m));

    spec.perturbations.clear();
    const PerturbTarget tgt = parse_target(target.empty() ? "template" : target);
    if (noise_ratios.empty() && outlier.empty()) spec.perturbations.push_back({});
    for (double p : noise_ratios) {
        Perturbation pert;
        pert.kind = p == 0.0 ? Perturbation::Kind::none : Perturbation::Kind::noise;
        pert.noise_ratio = p;
        pert.target = tgt;
        spec.perturbations.push_back(pert);
    }
    if (!outlier.empty()) {
        Perturbation pert;
        pert.kind = outlier == "sphere" ? Perturbation::Kind::sphere : Perturbation::Kind::chunk;
        pert.target = tgt;
        spec.perturbations.push_back(pert);
    }

    std::optional<PipelineState> pipeline;
    for (Method m : spec.methods)
        if (is_network_method(m)) {
            require(!checkpoint.empty(), "network methods need --checkpoint");
            pipeline = std::move(load_pipeline_file(checkpoint).state);
            break;
        }

    auto result = run_experiment(states, spec, pipeline ? &*pipeline : nullptr);
    {
        std::ofstream os(out_prefix.string() + "_table.csv");
        if (!os) fail("cannot write table CSV");
        write_table_csv(result.table, os);
    }
    {
        std::ofstream os(out_prefix.string() + "_pairs.csv");
        if (!os) fail("cannot write per-pair CSV");
        write_per_pair_csv(result.per_pair, os);
    }
    write_table_csv(result.table, std::cout);
    return 0;
}

int cmd_bench(const std::vector<std::size_t>& sizes, const std::string& method_name,
              const std::string& checkpoint, ExperimentSpec spec, const fs::path& out) {
    const Method method = parse_method(method_name);
    std::optional<PipelineState> pipeline;
    if (is_network_method(method)) {
        require(!checkpoint.empty(), "network methods need --checkpoint");
        pipeline = std::move(load_pipeline_file(checkpoint).state);
    }
    auto rows = bench_runtime(sizes, method, spec, pipeline ? &*pipeline : nullptr);
    if (!out.empty()) {
        std::ofstream os(out);
        if (!os) fail("cannot write bench CSV");
        write_bench_csv(rows, os);
    }
    write_bench_csv(rows, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Non-rigid point set registration on voxel displacement proxies"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic deformable-sheet dataset");
    std::string synth_out = "dataset";
    std::size_t n_states = 110, grid_res = 25;
    std::uint64_t synth_seed = 0;
    double amplitude = 0.15;
    std::string synth_fmt = "binary";
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n-states", n_states, "number of sheet states");
    synth->add_option("--grid-res", grid_res, "sheet sampling resolution per side");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--amplitude", amplitude, "deformation amplitude");
    add_format_flag(synth, synth_fmt);

    // perturb
    auto* perturb = app.add_subcommand("perturb", "apply a perturbation to a point file");
    std::string pert_in, pert_out, pert_outlier;
    double pert_noise = 0.0, pert_remove = 0.0;
    std::uint64_t pert_seed = 0;
    std::string pert_fmt = "binary";
    perturb->add_option("--in", pert_in, "input point file")->required();
    perturb->add_option("--out", pert_out, "output point file")->required();
    perturb->add_option("--noise-ratio", pert_noise, "uniform noise ratio in [0,1]");
    perturb->add_option("--remove", pert_remove, "random removal ratio in [0,1)");
    perturb->add_option("--outlier", pert_outlier, "clustered outlier kind")
        ->check(CLI::IsMember({"sphere", "chunk"}));
    perturb->add_option("--seed", pert_seed, "RNG seed");
    add_format_flag(perturb, pert_fmt);

    // train
    auto* train = app.add_subcommand("train", "two-phase training on a state directory");
    std::string train_data, train_out = "pipeline.vxpc", train_log;
    std::string train_fmt = "binary";
    TrainConfig cfg;
    std::size_t n_train_pairs = 40, pair_gap = 3;
    train->add_option("--data", train_data, "dataset directory from `synth`")->required();
    train->add_option("--out", train_out, "checkpoint output path");
    train->add_option("--q", cfg.q, "voxel grid dimension (multiple of 8)");
    train->add_option("--seed", cfg.seed, "RNG seed");
    train->add_option("--lr", cfg.lr, "Adam learning rate");
    train->add_option("--phase1-iters", cfg.phase1_iters, "DE-stage iteration budget");
    train->add_option("--phase2-iters", cfg.phase2_iters, "refinement iteration budget");
    train->add_option("--removal-max", cfg.removal_max, "augmentation removal upper bound");
    train->add_option("--noise-max", cfg.noise_max, "augmentation noise upper bound");
    train->add_option("--checkpoint-interval", cfg.checkpoint_interval,
                      "write the checkpoint every N iterations");
    train->add_option("--n-train-pairs", n_train_pairs, "training pairs drawn from the pool");
    train->add_option("--pair-gap", pair_gap, "max temporal gap inside a pair");
    train->add_option("--log", train_log, "write the per-iteration CSV log here");
    add_format_flag(train, train_fmt);

    // register
    auto* reg = app.add_subcommand("register", "register one template/reference pair");
    std::string reg_tmpl, reg_ref, reg_corr, reg_out = "deformed.vxpt";
    std::string reg_method = "dvn-full", reg_ckpt;
    std::string reg_fmt = "binary";
    ExperimentSpec reg_spec;
    reg->add_option("--template", reg_tmpl, "template point file (deforms)")->required();
    reg->add_option("--reference", reg_ref, "reference point file (target)")->required();
    reg->add_option("--method", reg_method,
                    "identity|cpd|nricp|dvn-de|dvn-nearest|dvn-full");
    reg->add_option("--checkpoint", reg_ckpt, "pipeline checkpoint for dvn-* methods");
    reg->add_option("--out", reg_out, "deformed template output file");
    reg->add_option("--corr", reg_corr, "optional `i j` ground-truth file for diagnostics");
    reg->add_option("--cpd-beta", reg_spec.cpd.beta, "CPD kernel width");
    reg->add_option("--cpd-lambda", reg_spec.cpd.lambda, "CPD regularization weight");
    reg->add_option("--cpd-w", reg_spec.cpd.w_outlier, "CPD outlier weight");
    reg->add_option("--cpd-max-iters", reg_spec.cpd.max_iters, "CPD iteration cap");
    reg->add_option("--nricp-iters", reg_spec.nricp.max_iters, "NR-ICP iterations");
    reg->add_option("--nricp-weight", reg_spec.nricp.smooth_weight, "NR-ICP smoothing weight");
    reg->add_option("--nricp-anneal", reg_spec.nricp.anneal, "NR-ICP annealing factor");
    add_format_flag(reg, reg_fmt);

    // eval
    auto* eval = app.add_subcommand("eval", "run the evaluation protocol over a dataset");
    std::string eval_data, eval_ckpt, eval_outlier, eval_target = "template";
    std::string eval_prefix = "eval";
    std::vector<std::string> eval_methods;
    std::vector<double> eval_noise;
    ExperimentSpec eval_spec;
    std::string eval_fmt = "binary";
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--checkpoint", eval_ckpt, "pipeline checkpoint for dvn-* methods");
    eval->add_option("--method", eval_methods, "methods to compare (repeatable)")->required();
    eval->add_option("--n-pairs", eval_spec.n_pairs, "number of test pairs");
    eval->add_option("--pair-gap", eval_spec.pair_gap, "max temporal gap inside a pair");
    eval->add_option("--seed", eval_spec.seed, "RNG seed");
    eval->add_option("--noise-ratio", eval_noise, "noise sweep ratios (repeatable)");
    eval->add_option("--outlier", eval_outlier, "clustered outlier perturbation")
        ->check(CLI::IsMember({"sphere", "chunk"}));
    eval->add_option("--target", eval_target, "perturbation target")
        ->check(CLI::IsMember({"template", "reference"}));
    eval->add_flag("--success-filter", eval_spec.apply_success_filter,
                   "apply the success criterion to baseline methods");
    eval->add_option("--out", eval_prefix, "output CSV prefix");
    eval->add_option("--cpd-beta", eval_spec.cpd.beta, "CPD kernel width");
    eval->add_option("--cpd-lambda", eval_spec.cpd.lambda, "CPD regularization weight");
    eval->add_option("--cpd-w", eval_spec.cpd.w_outlier, "CPD outlier weight");
    add_format_flag(eval, eval_fmt);

    // bench
    auto* bench = app.add_subcommand("bench", "runtime benchmark across point counts");
    std::vector<std::size_t> bench_sizes = {1500, 10000};
    std::string bench_method = "dvn-full", bench_ckpt, bench_out;
    ExperimentSpec bench_spec;
    bench->add_option("--sizes", bench_sizes, "point counts (ascending)");
    bench->add_option("--method", bench_method, "method to time");
    bench->add_option("--checkpoint", bench_ckpt, "pipeline checkpoint for dvn-* methods");
    bench->add_option("--seed", bench_spec.seed, "RNG seed");
    bench->add_option("--out", bench_out, "output CSV path");
    bench->add_option("--cpd-max-iters", bench_spec.cpd.max_iters, "CPD iteration cap");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, n_states, grid_res, synth_seed, amplitude,
                             parse_format(synth_fmt));
        if (perturb->parsed())
            return cmd_perturb(pert_in, pert_out, parse_format(pert_fmt), pert_noise,
                               pert_remove, pert_outlier, pert_seed);
        if (train->parsed())
            return cmd_train(train_data, parse_format(train_fmt), train_out, train_log, cfg,
                             n_train_pairs, pair_gap);
        if (reg->parsed())
            return cmd_register(reg_tmpl, reg_ref, parse_format(reg_fmt), reg_method, reg_ckpt,
                                reg_out, reg_corr, reg_spec);
        if (eval->parsed())
            return cmd_eval(eval_data, parse_format(eval_fmt), eval_ckpt, eval_spec,
                            eval_methods, eval_noise, eval_outlier, eval_target, eval_prefix);
        if (bench->parsed())
            return cmd_bench(bench_sizes, bench_method, bench_ckpt, bench_spec, bench_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
