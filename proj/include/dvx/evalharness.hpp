#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dvx/cpd.hpp"
#include "dvx/nricp.hpp"
#include "dvx/perturb.hpp"
#include "dvx/pipeline.hpp"
#include "dvx/synth.hpp"

namespace dvx {

enum class Method { identity, cpd, nricp, dvn_de, dvn_nearest, dvn_full };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::identity: return "identity";
        case Method::cpd: return "cpd";
        case Method::nricp: return "nricp";
        case Method::dvn_de: return "dvn-de";
        case Method::dvn_nearest: return "dvn-nearest";
        case Method::dvn_full: return "dvn-full";
    }
    fail("unreachable");
}

inline Method parse_method(const std::string& s) {
    if (s == "identity") return Method::identity;
    if (s == "cpd") return Method::cpd;
    if (s == "nricp") return Method::nricp;
    if (s == "dvn-de") return Method::dvn_de;
    if (s == "dvn-nearest") return Method::dvn_nearest;
    if (s == "dvn-full" || s == "dvn") return Method::dvn_full;
    fail("unknown method '" + s + "'");
}

inline bool is_network_method(Method m) {
    return m == Method::dvn_de || m == Method::dvn_nearest || m == Method::dvn_full;
}

enum class PerturbTarget { template_set, reference_set };

inline std::string target_name(PerturbTarget t) {
    return t == PerturbTarget::template_set ? "template" : "reference";
}

inline PerturbTarget parse_target(const std::string& s) {
    if (s == "template") return PerturbTarget::template_set;
    if (s == "reference") return PerturbTarget::reference_set;
    fail("unknown perturbation target '" + s + "' (expected template or reference)");
}

struct Perturbation {
    enum class Kind { none, noise, sphere, chunk } kind = Kind::none;
    double noise_ratio = 0.0;
    PerturbTarget target = PerturbTarget::template_set;

    std::string label() const {
        std::ostringstream os;
        switch (kind) {
            case Kind::none: return "none";
            case Kind::noise: os << "noise" << noise_ratio; break;
            case Kind::sphere: os << "sphere"; break;
            case Kind::chunk: os << "chunk"; break;
        }
        return os.str();
    }
};

// Applies one perturbation to the chosen side, keeping the ground-truth map
// consistent. Runs before normalization.
inline CorrespondencePair apply_perturbation(const CorrespondencePair& pair,
                                             const Perturbation& p, std::uint64_t seed) {
    if (p.kind == Perturbation::Kind::none) return pair;
    CorrespondencePair out = pair;
    const bool on_tmpl = p.target == PerturbTarget::template_set;
    PointSet& side = on_tmpl ? out.tmpl : out.ref;
    switch (p.kind) {
        case Perturbation::Kind::noise:
            side = add_uniform_noise(side, p.noise_ratio, seed);
            break;
        case Perturbation::Kind::sphere:
            side = add_sphere_outlier(side, seed);
            break;
        case Perturbation::Kind::chunk: {
            auto removal = remove_chunk(side, seed);
            side = std::move(removal.set);
            if (on_tmpl)
                out.gt_map = remap_gt(pair.gt_map, removal.kept_indices, pair.tmpl.size(), {},
                                      pair.ref.size());
            else
                out.gt_map = remap_gt(pair.gt_map, {}, pair.tmpl.size(), removal.kept_indices,
                                      pair.ref.size());
            break;
        }
        case Perturbation::Kind::none: break;
    }
    return out;
}

// Success rule (applied to classical baselines on request): keep runs with
// e < 4 * median(all) and e < 4.0, in that order.
struct SuccessFilter {
    std::vector<double> successes;
    std::vector<double> failures;
};

inline SuccessFilter filter_success(const std::vector<double>& per_pair_errors) {
    require(!per_pair_errors.empty(), "filter_success requires at least one value");
    std::vector<double> sorted = per_pair_errors;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    SuccessFilter out;
    for (double e : per_pair_errors) {
        if (e < 4.0 * median && e < 4.0)
            out.successes.push_back(e);
        else
            out.failures.push_back(e);
    }
    return out;
}

struct ExperimentSpec {
    std::size_t n_pairs = 30;
    std::size_t pair_gap = 5;  // max temporal distance between states of a pair
    std::vector<Method> methods;
    std::vector<Perturbation> perturbations = {{}};
    std::uint64_t seed = 0;
    bool apply_success_filter = false;  // baselines only, as in the noise study
    bool measure_time = true;           // false pins runtime columns to zero
    CpdParams cpd;
    NricpParams nricp;
    double margin = kNormalizationMargin;

    void validate() const {
        require(n_pairs >= 1, "n_pairs must be >= 1");
        require(!methods.empty(), "method list must not be empty");
        require(!perturbations.empty(), "perturbation list must not be empty");
    }
};

struct PairRecord {
    std::size_t pair_index = 0;
    std::string method;
    std::string perturbation;
    std::string target;
    double rmse = 0.0;
    double seconds = 0.0;
};

struct TableRow {
    std::string method;
    std::string perturbation;
    std::string target;
    ErrorStats stats;            // over successes when the filter applies
    std::size_t n_success = 0;
    std::size_t n_fail = 0;
    double mean_seconds = 0.0;
};

struct ExperimentResult {
    std::vector<PairRecord> per_pair;
    std::vector<TableRow> table;
};

// One registration with any method; error is reported in the normalized
// frame so values are comparable across pairs.
inline std::pair<double, PointSet> run_method(const CorrespondencePair& pair, Method method,
                                              const ExperimentSpec& spec,
                                              const PipelineState* pipeline) {
    if (is_network_method(method)) {
        require(pipeline != nullptr, "network method requires a trained checkpoint");
        const RegMode mode = method == Method::dvn_de         ? RegMode::de_only
                             : method == Method::dvn_nearest  ? RegMode::de_plus_refine_nearest
                                                              : RegMode::de_plus_refine_trilinear;
        auto res = register_pair(pair, *pipeline, mode);
        return {res.rmse_final, std::move(res.deformed)};
    }

    auto [npair, transform] = normalize_pair(pair, spec.margin);
    PointSet deformed;
    switch (method) {
        case Method::identity: deformed = npair.tmpl; break;
        case Method::cpd: deformed = cpd_register(npair.tmpl, npair.ref, spec.cpd).deformed; break;
        case Method::nricp:
            deformed = nricp_register(npair.tmpl, npair.ref, spec.nricp).deformed;
            break;
        default: fail("unreachable");
    }
    const double e = pair.has_gt() ? rmse(deformed, npair.ref, npair.gt_map) : -1.0;
    return {e, transform.invert(deformed)};
}

// Paper-style protocol: a fixed, seed-pinned pair selection from the test
// pool, reused across every method and perturbation.
inline ExperimentResult run_experiment(const std::vector<PointSet>& states,
                                       const ExperimentSpec& spec,
                                       const PipelineState* pipeline = nullptr) {
    spec.validate();
    for (Method m : spec.methods)
        if (is_network_method(m))
            require(pipeline != nullptr, "method list includes the network but no checkpoint given");

    const auto split = split_dataset(states.size());
    const auto pair_ids =
        draw_state_pairs(split.test_states, spec.n_pairs, spec.pair_gap, mix_seed(spec.seed, 11));

    ExperimentResult out;
    for (std::size_t pi = 0; pi < spec.perturbations.size(); ++pi) {
        const Perturbation& pert = spec.perturbations[pi];
        std::vector<CorrespondencePair> perturbed;
        perturbed.reserve(pair_ids.size());
        for (std::size_t k = 0; k < pair_ids.size(); ++k) {
            auto pair = make_pair(states, pair_ids[k].first, pair_ids[k].second);
            perturbed.push_back(
                apply_perturbation(pair, pert, mix_seed(spec.seed, 1000 * (pi + 1) + k)));
        }
        for (Method method : spec.methods) {
            std::vector<double> errors;
            std::vector<double> times;
            errors.reserve(perturbed.size());
            for (std::size_t k = 0; k < perturbed.size(); ++k) {
                const auto t0 = std::chrono::steady_clock::now();
                auto [e, deformed] = run_method(perturbed[k], method, spec, pipeline);
                const double secs =
                    spec.measure_time
                        ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count()
                        : 0.0;
                errors.push_back(e);
                times.push_back(secs);
                out.per_pair.push_back(
                    {k, method_name(method), pert.label(), target_name(pert.target), e, secs});
            }

            TableRow row;
            row.method = method_name(method);
            row.perturbation = pert.label();
            row.target = target_name(pert.target);
            const bool filtered = spec.apply_success_filter &&
                                  (method == Method::cpd || method == Method::nricp);
            if (filtered) {
                auto f = filter_success(errors);
                require(!f.successes.empty(), "all runs failed the success criterion");
                row.stats = error_stats(f.successes);
                row.n_success = f.successes.size();
                row.n_fail = f.failures.size();
            } else {
                row.stats = error_stats(errors);
                row.n_success = errors.size();
                row.n_fail = 0;
            }
            row.mean_seconds =
                std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
            out.table.push_back(std::move(row));
        }
    }
    return out;
}

inline void write_per_pair_csv(const std::vector<PairRecord>& records, std::ostream& os) {
    os << "pair_index,method,perturbation,target,rmse,seconds\n";
    os.precision(17);
    for (const auto& r : records)
        os << r.pair_index << ',' << r.method << ',' << r.perturbation << ',' << r.target << ','
           << r.rmse << ',' << r.seconds << '\n';
}

inline void write_table_csv(const std::vector<TableRow>& rows, std::ostream& os) {
    os << "method,perturbation,target,e,sigma,n_success,n_fail,mean_seconds\n";
    os.precision(17);
    for (const auto& r : rows)
        os << r.method << ',' << r.perturbation << ',' << r.target << ',' << r.stats.e << ','
           << r.stats.sigma << ',' << r.n_success << ',' << r.n_fail << ',' << r.mean_seconds
           << '\n';
}

struct BenchRow {
    std::size_t n_points = 0;
    double seconds = 0.0;  // median of three runs
};

// Wall-clock per registration over synthetic pairs of the requested sizes,
// both sets holding equal point counts.
inline std::vector<BenchRow> bench_runtime(const std::vector<std::size_t>& sizes, Method method,
                                           const ExperimentSpec& spec,
                                           const PipelineState* pipeline = nullptr) {
    require(!sizes.empty(), "bench_runtime requires at least one size");
    require(std::is_sorted(sizes.begin(), sizes.end()), "bench sizes must be ascending");

    std::vector<BenchRow> out;
    for (std::size_t n : sizes) {
        require(n >= 16, "bench size too small");
        const auto res = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
        auto states = synth_dataset(mix_seed(spec.seed, n), 2, res);
        CorrespondencePair pair;
        pair.tmpl.points.assign(states[0].points.begin(), states[0].points.begin() + n);
        pair.ref.points.assign(states[1].points.begin(), states[1].points.begin() + n);
        for (std::size_t i = 0; i < n; ++i) pair.gt_map.emplace_back(i, i);

        std::vector<double> runs;
        for (int r = 0; r < 3; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            run_method(pair, method, spec, pipeline);
            runs.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(runs.begin(), runs.end());
        out.push_back({n, runs[1]});
    }
    return out;
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& os) {
    os << "n_points,seconds\n";
    os.precision(17);
    for (const auto& r : rows) os << r.n_points << ',' << r.seconds << '\n';
}

}  // namespace dvx
