#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moprune/analysis.hpp"
#include "moprune/datamodel.hpp"
#include "moprune/moea.hpp"

namespace moprune {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Key-value files (manifests, run config, run metadata)

/// Ordered `key=value` lines. Blank lines and `#` comments are skipped.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues parse_key_values(std::istream& in, const std::string& source)
{
    KeyValues out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos || eq == 0) throw ParseError(source, lineno, "expected key=value");
        out.emplace_back(std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
    }
    return out;
}

inline KeyValues read_key_values(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    return parse_key_values(in, path.string());
}

inline std::string format_double(double v)
{
    std::string s;
    detail::append_double(s, v);
    return s;
}

/// Applies one configuration setting. Unknown keys and malformed values are
/// validation errors.
inline void apply_setting(EvolutionConfig& cfg, const std::string& key, const std::string& value)
{
    const auto bad = [&] { return ValidationError("invalid value '" + value + "' for " + key); };
    const auto as_size = [&] {
        std::size_t v = 0;
        if (!detail::parse_number(value, v)) throw bad();
        return v;
    };
    const auto as_double = [&] {
        double v = 0;
        if (!detail::parse_number(value, v)) throw bad();
        return v;
    };

    if (key == "max_evals") cfg.max_evals = as_size();
    else if (key == "population_size") cfg.population_size = as_size();
    else if (key == "mutation_prob") {
        if (value == "auto") cfg.mutation_prob.reset();
        else cfg.mutation_prob = as_double();
    }
    else if (key == "batch_size") cfg.batch_size = as_size();
    else if (key == "odin_temperature") cfg.odin_temperature = as_double();
    else if (key == "max_epochs") cfg.max_epochs = as_size();
    else if (key == "early_stop_patience") cfg.early_stop_patience = as_size();
    else if (key == "learning_rate") cfg.learning_rate = as_double();
    else if (key == "hidden_units") cfg.hidden_units = as_size();
    else if (key == "ood_samples_per_dataset") cfg.ood_samples_per_dataset = as_size();
    else if (key == "master_seed" || key == "seed") {
        std::uint64_t v = 0;
        if (!detail::parse_number(value, v)) throw bad();
        cfg.master_seed = v;
    }
    else throw ValidationError("unknown configuration key '" + key + "'");
}

[[nodiscard]] inline KeyValues config_entries(const EvolutionConfig& cfg)
{
    return {
        {"max_evals", std::to_string(cfg.max_evals)},
        {"population_size", std::to_string(cfg.population_size)},
        {"mutation_prob", cfg.mutation_prob ? format_double(*cfg.mutation_prob) : "auto"},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"odin_temperature", format_double(cfg.odin_temperature)},
        {"max_epochs", std::to_string(cfg.max_epochs)},
        {"early_stop_patience", std::to_string(cfg.early_stop_patience)},
        {"learning_rate", format_double(cfg.learning_rate)},
        {"hidden_units", std::to_string(cfg.hidden_units)},
        {"ood_samples_per_dataset", std::to_string(cfg.ood_samples_per_dataset)},
        {"master_seed", std::to_string(cfg.master_seed)},
    };
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
    fs::path ind_train;
    fs::path ind_test;
    std::vector<std::pair<std::string, fs::path>> ood;
    fs::path output_dir;
    KeyValues config_overrides;
};

/// Reads `ind_train`, `ind_test`, `ood.<name>`, optional `out` and any
/// configuration keys. Relative paths resolve against the manifest directory.
inline RunManifest read_manifest(const fs::path& path)
{
    if (!fs::exists(path)) throw ValidationError("manifest not found: " + path.string());
    const auto base = path.parent_path();
    const auto resolve = [&](const std::string& p) {
        fs::path v(p);
        return (v.is_absolute() ? v : base / v).lexically_normal();
    };

    RunManifest m;
    for (const auto& [key, value] : read_key_values(path)) {
        if (key == "ind_train") m.ind_train = resolve(value);
        else if (key == "ind_test") m.ind_test = resolve(value);
        else if (key == "out") m.output_dir = resolve(value);
        else if (key.rfind("ood.", 0) == 0) {
            const auto name = key.substr(4);
            if (name.empty()) throw ValidationError(path.string() + ": empty OoD dataset name");
            m.ood.emplace_back(name, resolve(value));
        } else {
            EvolutionConfig probe;
            apply_setting(probe, key, value);  // rejects unknown keys early
            m.config_overrides.emplace_back(key, value);
        }
    }
    if (m.ind_train.empty()) throw ValidationError(path.string() + ": missing ind_train");
    if (m.ind_test.empty()) throw ValidationError(path.string() + ": missing ind_test");
    return m;
}

struct LoadedData {
    FeatureDataset ind;
    std::vector<FeatureDataset> ood;
};

/// Loads every dataset the manifest names and checks that dimensions agree.
inline LoadedData load_manifest_data(const RunManifest& m)
{
    for (const auto& p : {m.ind_train, m.ind_test})
        if (!fs::exists(p)) throw ValidationError("dataset file not found: " + p.string());
    for (const auto& [name, p] : m.ood)
        if (!fs::exists(p)) throw ValidationError("dataset file not found for ood." + name + ": " + p.string());

    LoadedData d;
    d.ind = load_feature_dataset("ind", m.ind_train, m.ind_test);
    for (const auto& [name, p] : m.ood) {
        auto ds = load_feature_dataset(name, p);
        if (ds.feature_dim != d.ind.feature_dim)
            throw ValidationError("OoD dataset '" + name + "' has P=" + std::to_string(ds.feature_dim) +
                                  " but InD has P=" + std::to_string(d.ind.feature_dim));
        d.ood.push_back(std::move(ds));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Run artifacts

inline constexpr std::string_view run_log_header = "eval_index,mask_hex,accuracy,active_neurons,auroc,cache_hit";
inline constexpr std::string_view front_header = "accuracy,active_neurons,auroc,run_id,mask_hex";

inline std::string format_log_record(const Individual& ind)
{
    const auto& o = ind.objs();
    return std::to_string(*ind.eval_index) + "," + ind.mask.to_hex() + "," + format_double(o.accuracy) + "," +
           std::to_string(o.active_neurons) + "," + format_double(o.auroc) + "," + (ind.cache_hit ? "1" : "0");
}

inline std::string format_run_log(const RunResult& run)
{
    std::string out(run_log_header);
    out.push_back('\n');
    for (const auto& ind : run.all_evaluated) out += format_log_record(ind) + "\n";
    return out;
}

inline std::string format_front_row(const ObjectiveVector& o, std::size_t run_id, const PruningMask& mask)
{
    return format_double(o.accuracy) + "," + std::to_string(o.active_neurons) + "," + format_double(o.auroc) + "," +
           std::to_string(run_id) + "," + mask.to_hex();
}

inline std::string format_front_csv(std::span<const FrontSolution> solutions)
{
    std::string out(front_header);
    out.push_back('\n');
    for (const auto& s : solutions) out += format_front_row(s.objectives, s.run_id, s.mask) + "\n";
    return out;
}

inline std::string format_hypervolume_trace(const RunResult& run)
{
    std::string out = "eval_index,hypervolume\n";
    for (const auto& [idx, hv] : run.hypervolume_trace) out += std::to_string(idx) + "," + format_double(hv) + "\n";
    return out;
}

/// Writes `content` via a temporary file and rename so readers never see a
/// half-written artifact.
inline void write_file(const fs::path& path, std::string_view content)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string_view expected_header)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != expected_header)
        throw ParseError(path.string(), 1, "unexpected header, expected '" + std::string(expected_header) + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.emplace_back(detail::trim(f));
        rows.push_back(std::move(fields));
    }
    return rows;
}

struct LogRecord {
    std::size_t eval_index = 0;
    std::string mask_hex;
    ObjectiveVector objectives;
    bool cache_hit = false;
};

inline std::vector<LogRecord> read_run_log(const fs::path& path)
{
    std::vector<LogRecord> out;
    std::size_t line = 1;
    for (const auto& f : read_csv(path, run_log_header)) {
        ++line;
        LogRecord r;
        int hit = 0;
        if (f.size() != 6 || !detail::parse_number(f[0], r.eval_index) ||
            !detail::parse_number(f[2], r.objectives.accuracy) ||
            !detail::parse_number(f[3], r.objectives.active_neurons) ||
            !detail::parse_number(f[4], r.objectives.auroc) || !detail::parse_number(f[5], hit))
            throw ParseError(path.string(), line, "malformed run log record");
        r.mask_hex = f[1];
        r.cache_hit = hit != 0;
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<FrontSolution> read_front_csv(const fs::path& path, std::size_t feature_dim)
{
    std::vector<FrontSolution> out;
    std::size_t line = 1;
    for (const auto& f : read_csv(path, front_header)) {
        ++line;
        FrontSolution s;
        if (f.size() != 5 || !detail::parse_number(f[0], s.objectives.accuracy) ||
            !detail::parse_number(f[1], s.objectives.active_neurons) ||
            !detail::parse_number(f[2], s.objectives.auroc) || !detail::parse_number(f[3], s.run_id))
            throw ParseError(path.string(), line, "malformed front record");
        s.mask = PruningMask::from_hex(f[4], feature_dim);
        s.eval_index = out.size();
        out.push_back(std::move(s));
    }
    return out;
}

/// Per-run metadata written next to the log.
struct RunMeta {
    std::size_t run_id = 0;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 0;
    std::size_t eval_count = 0;
    bool stalled = false;
    std::string fingerprint;
};

inline std::string format_run_meta(const RunMeta& m)
{
    std::ostringstream out;
    out << "run_id=" << m.run_id << "\nseed=" << m.seed << "\nfeature_dim=" << m.feature_dim
        << "\neval_count=" << m.eval_count << "\nstalled=" << (m.stalled ? 1 : 0) << "\nfingerprint=" << m.fingerprint
        << "\n";
    return out.str();
}

inline RunMeta read_run_meta(const fs::path& path)
{
    RunMeta m;
    for (const auto& [k, v] : read_key_values(path)) {
        bool ok = true;
        if (k == "run_id") ok = detail::parse_number(v, m.run_id);
        else if (k == "seed") ok = detail::parse_number(v, m.seed);
        else if (k == "feature_dim") ok = detail::parse_number(v, m.feature_dim);
        else if (k == "eval_count") ok = detail::parse_number(v, m.eval_count);
        else if (k == "stalled") m.stalled = v == "1";
        else if (k == "fingerprint") m.fingerprint = v;
        if (!ok) throw ValidationError(path.string() + ": bad value for " + k);
    }
    return m;
}

inline fs::path run_subdir(const fs::path& root, std::size_t run_id)
{
    char name[32];
    std::snprintf(name, sizeof name, "run_%03zu", run_id);
    return root / name;
}

/// Run directories under `root`, in run-id order.
inline std::vector<fs::path> list_run_dirs(const fs::path& root)
{
    std::vector<fs::path> dirs;
    if (!fs::is_directory(root)) return dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().rfind("run_", 0) == 0 &&
            fs::exists(e.path() / "meta.txt") && fs::exists(e.path() / "front.csv"))
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

/// A run as reloaded from disk: metadata, log and archive front.
struct StoredRun {
    RunMeta meta;
    std::vector<LogRecord> log;
    std::vector<FrontSolution> front;
};

inline StoredRun load_stored_run(const fs::path& dir)
{
    StoredRun r;
    r.meta = read_run_meta(dir / "meta.txt");
    r.front = read_front_csv(dir / "front.csv", r.meta.feature_dim);
    if (fs::exists(dir / "log.csv")) {
        r.log = read_run_log(dir / "log.csv");
        // Recover each front entry's original evaluation index.
        for (auto& s : r.front) {
            const auto hex = s.mask.to_hex();
            for (const auto& rec : r.log) {
                if (!rec.cache_hit && rec.mask_hex == hex) {
                    s.eval_index = rec.eval_index;
                    break;
                }
            }
        }
    }
    return r;
}

}  // namespace moprune
