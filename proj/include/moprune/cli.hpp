#pragma once

#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "moprune/analysis.hpp"
#include "moprune/artifacts.hpp"
#include "moprune/datamodel.hpp"
#include "moprune/moea.hpp"

namespace moprune::cli {

enum ExitCode : int { ok = 0, validation_error = 1, runtime_failure = 2 };

/// Runs `body`, mapping validation errors to exit code 1 and any other
/// failure to 2. Messages go to `err`.
inline int guarded(std::ostream& err, const std::function<int()>& body)
{
    try {
        return body();
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return validation_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return runtime_failure;
    }
}

/// Built-in defaults, then manifest settings, then `--set` overrides.
inline EvolutionConfig effective_config(const RunManifest& m, const KeyValues& overrides,
                                        std::optional<std::uint64_t> seed)
{
    EvolutionConfig cfg;
    for (const auto& [k, v] : m.config_overrides) apply_setting(cfg, k, v);
    for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
    if (seed) cfg.master_seed = *seed;
    cfg.validate();
    return cfg;
}

inline KeyValues parse_set_flags(const std::vector<std::string>& sets)
{
    KeyValues out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// validate

inline int cmd_validate(const fs::path& manifest_path, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto m = read_manifest(manifest_path);
        const auto data = load_manifest_data(m);
        out << std::left << std::setw(16) << "dataset" << std::setw(8) << "split" << std::right << std::setw(10)
            << "N" << std::setw(8) << "P" << std::setw(6) << "Y" << '\n';
        const auto row = [&](const std::string& name, const char* split, const Split& s, std::size_t Y) {
            out << std::left << std::setw(16) << name << std::setw(8) << split << std::right << std::setw(10)
                << s.rows() << std::setw(8) << s.feature_dim << std::setw(6) << Y << '\n';
        };
        row("ind", "train", data.ind.train, data.ind.num_classes);
        row("ind", "test", data.ind.test, data.ind.num_classes);
        for (const auto& ds : data.ood) row(ds.name, "all", ds.train, ds.num_classes);
        if (data.ood.empty()) err << "warning: manifest names no OoD datasets\n";
        return static_cast<int>(ok);
    });
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
    fs::path manifest;
    std::size_t runs = 10;
    std::optional<std::uint64_t> seed;
    fs::path out_dir;
    std::vector<std::string> sets;
    bool verbose = false;
};

/// Manifest-format record of everything a later `ensemble` needs.
inline std::string format_run_config(const RunManifest& m, const EvolutionConfig& cfg, std::size_t runs)
{
    std::string s = "# generated by moprune run\n";
    s += "ind_train=" + fs::absolute(m.ind_train).lexically_normal().string() + "\n";
    s += "ind_test=" + fs::absolute(m.ind_test).lexically_normal().string() + "\n";
    for (const auto& [name, p] : m.ood) s += "ood." + name + "=" + fs::absolute(p).lexically_normal().string() + "\n";
    for (const auto& [k, v] : config_entries(cfg)) s += k + "=" + v + "\n";
    s += "# runs=" + std::to_string(runs) + "\n";
    return s;
}

/// FNV-1a over the run config; a run directory whose metadata carries the same
/// fingerprint is reused instead of recomputed.
inline std::string fingerprint(std::string_view text)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline SuperFront load_super_front(const fs::path& root, std::vector<StoredRun>* runs_out = nullptr)
{
    const auto dirs = list_run_dirs(root);
    if (dirs.empty()) throw ValidationError("no run artifacts found in " + root.string());
    std::vector<StoredRun> runs;
    std::vector<std::vector<FrontSolution>> fronts;
    for (const auto& d : dirs) {
        runs.push_back(load_stored_run(d));
        fronts.push_back(runs.back().front);
    }
    auto sf = super_pareto(std::span<const std::vector<FrontSolution>>(fronts));
    if (runs_out) *runs_out = std::move(runs);
    return sf;
}

inline int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto m = read_manifest(opt.manifest);
        const auto cfg = effective_config(m, parse_set_flags(opt.sets), opt.seed);
        if (opt.runs == 0) throw ValidationError("--runs must be at least 1");
        const auto data = load_manifest_data(m);
        if (data.ood.empty()) throw ValidationError("manifest names no OoD datasets");

        fs::path root = opt.out_dir.empty() ? (m.output_dir.empty() ? fs::path("runs") : m.output_dir) : opt.out_dir;
        fs::create_directories(root);
        const auto config_text = format_run_config(m, cfg, opt.runs);
        write_file(root / "config.txt", config_text);
        const auto fp = fingerprint(config_text.substr(0, config_text.rfind("# runs=")));

        for (std::size_t r = 0; r < opt.runs; ++r) {
            const auto dir = run_subdir(root, r);
            if (fs::exists(dir / "meta.txt") && fs::exists(dir / "front.csv") && fs::exists(dir / "log.csv")) {
                const auto meta = read_run_meta(dir / "meta.txt");
                if (meta.fingerprint == fp && meta.run_id == r) {
                    out << "run " << r << ": reusing existing artifacts\n";
                    continue;
                }
            }
            std::size_t seen = 0;
            const auto progress = [&](const Individual& ind) {
                ++seen;
                if (opt.verbose) err << "run " << r << " eval " << *ind.eval_index << (ind.cache_hit ? " (cached)" : "")
                                     << " acc=" << ind.objs().accuracy << " active=" << ind.objs().active_neurons
                                     << " auroc=" << ind.objs().auroc << '\n';
            };
            const auto result = evolve(cfg, data.ind, data.ood, r, progress);

            write_file(dir / "log.csv", format_run_log(result));
            write_file(dir / "front.csv", format_front_csv(front_solutions(result)));
            write_file(dir / "hypervolume.csv", format_hypervolume_trace(result));
            // meta.txt last: its presence marks a complete run.
            write_file(dir / "meta.txt", format_run_meta({r, result.seed, result.feature_dim, result.eval_count,
                                                          result.stalled, fp}));
            out << "run " << r << ": " << result.eval_count << " trainings, " << seen << " evaluations, front size "
                << result.archive_front.size() << ", hypervolume "
                << (result.hypervolume_trace.empty() ? 0.0 : result.hypervolume_trace.back().second) << '\n';
            if (result.stalled) err << "warning: run " << r << " stopped early, offspring kept repeating\n";
        }

        // Only the runs of this invocation feed the combined front.
        std::vector<std::vector<FrontSolution>> fronts;
        for (std::size_t r = 0; r < opt.runs; ++r) fronts.push_back(load_stored_run(run_subdir(root, r)).front);
        const auto sf = super_pareto(std::span<const std::vector<FrontSolution>>(fronts));
        write_file(root / "super_front.csv", format_front_csv(sf.solutions));
        out << "super front: " << sf.size() << " solutions from " << sf.source_run_count << " runs\n";
        return static_cast<int>(ok);
    });
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
    fs::path run_dir;
    std::size_t top_k = 10;
    double top_fraction = 0.10;
};

inline std::string format_summary_fields(const std::optional<FiveNumberSummary>& s)
{
    if (!s) return ",,,,";
    return format_double(s->min) + "," + format_double(s->q1) + "," + format_double(s->median) + "," +
           format_double(s->q3) + "," + format_double(s->max);
}

inline std::string format_neuron_csv(std::span<const NeuronReport> reports)
{
    std::string s =
        "rank,neuron_index,count,frequency,"
        "accuracy_min,accuracy_q1,accuracy_median,accuracy_q3,accuracy_max,"
        "active_min,active_q1,active_median,active_q3,active_max,"
        "auroc_min,auroc_q1,auroc_median,auroc_q3,auroc_max\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        s += std::to_string(i + 1) + "," + std::to_string(r.neuron_index) + "," + std::to_string(r.count) + "," +
             format_double(r.frequency) + "," + format_summary_fields(r.accuracy) + "," +
             format_summary_fields(r.active_neurons) + "," + format_summary_fields(r.auroc) + "\n";
    }
    return s;
}

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto sf = load_super_front(opt.run_dir);
        const auto dir = opt.run_dir / "analysis";
        write_file(dir / "super_front.csv", format_front_csv(sf.solutions));
        for (auto o : {Objective::accuracy, Objective::active_neurons, Objective::auroc}) {
            const auto slice = objective_extremes_slice(sf, o, opt.top_fraction);
            write_file(dir / ("slice_" + std::string(to_string(o)) + ".csv"), format_front_csv(slice));
        }
        const auto neurons = neuron_frequency(sf, opt.top_k);
        write_file(dir / "neurons.csv", format_neuron_csv(neurons));

        out << "super front: " << sf.size() << " solutions from " << sf.source_run_count << " runs\n";
        out << "top neurons:";
        for (const auto& n : neurons) out << ' ' << n.neuron_index << '(' << format_double(n.frequency) << ')';
        out << '\n';
        return static_cast<int>(ok);
    });
}

// ---------------------------------------------------------------------------
// ensemble

struct EnsembleAnalysis {
    EnsembleMetric metric = EnsembleMetric::accuracy;
    SuperFront front;
    std::vector<double> member_values;
    std::vector<QuantileZone> zones;
    std::vector<ZoneRecord> records;
};

/// Re-trains every super-front member from its stored (mask, seed) and
/// evaluates the eight quantile zones. AUROC values use one pool drawn from
/// the master seed so members and ensembles are compared on the same data.
inline EnsembleAnalysis compute_ensemble(const fs::path& run_dir, EnsembleMetric metric)
{
    const auto config_path = run_dir / "config.txt";
    if (!fs::exists(config_path)) throw ValidationError("missing " + config_path.string());
    const auto m = read_manifest(config_path);
    const auto cfg = effective_config(m, {}, std::nullopt);
    const auto data = load_manifest_data(m);
    if (data.ood.empty()) throw ValidationError("run config names no OoD datasets");

    EnsembleAnalysis a;
    a.metric = metric;
    a.front = load_super_front(run_dir);
    const auto pool = run_ood_pool(cfg, data.ind, data.ood, derive_seed(cfg.master_seed, seed_tag::ood_pool));

    std::vector<TrainedHead> heads;
    for (const auto& s : a.front.solutions) {
        const auto seed = training_seed(run_seed(cfg.master_seed, s.run_id), s.eval_index);
        heads.push_back(train_individual(s.mask, data.ind, cfg, seed));
    }
    a.member_values = member_metric_values(heads, metric, data.ind.test, pool, cfg.odin_temperature);
    a.zones = quantile_ensemble_zones(a.member_values);
    a.records = zone_report(a.zones, heads, a.member_values, metric, data.ind.test, pool, cfg.odin_temperature);
    return a;
}

inline std::string format_zone_csv(std::span<const QuantileZone> zones, std::span<const ZoneRecord> records)
{
    std::string s = "zone,q_min,q_max,lower,upper,members,min,q1,median,q3,max,best,ensemble,empty\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        s += std::to_string(i + 1) + "," + std::to_string(r.q_min) + "," + std::to_string(r.q_max) + "," +
             format_double(zones[i].lower) + "," + format_double(zones[i].upper) + "," +
             std::to_string(r.member_count) + "," + format_summary_fields(r.distribution) + "," +
             (r.member_max ? format_double(*r.member_max) : "") + "," +
             (r.ensemble_value ? format_double(*r.ensemble_value) : "") + "," + (r.empty() ? "1" : "0") + "\n";
    }
    return s;
}

inline std::optional<EnsembleMetric> parse_metric(std::string_view s)
{
    if (s == "accuracy") return EnsembleMetric::accuracy;
    if (s == "auroc") return EnsembleMetric::auroc;
    return std::nullopt;
}

inline int cmd_ensemble(const fs::path& run_dir, std::string_view metric_name, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto metric = parse_metric(metric_name);
        if (!metric) throw ValidationError("unknown metric '" + std::string(metric_name) + "' (use accuracy|auroc)");
        const auto a = compute_ensemble(run_dir, *metric);
        const auto csv = format_zone_csv(a.zones, a.records);
        write_file(run_dir / "analysis" / ("ensemble_" + std::string(metric_name) + ".csv"), csv);
        out << csv;
        return static_cast<int>(ok);
    });
}

}  // namespace moprune::cli
