#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moprune/datamodel.hpp"
#include "moprune/moea.hpp"
#include "moprune/ood.hpp"
#include "moprune/trainer.hpp"

namespace moprune {

enum class Objective { accuracy, active_neurons, auroc };

[[nodiscard]] inline std::string_view to_string(Objective o) noexcept
{
    switch (o) {
    case Objective::accuracy: return "accuracy";
    case Objective::active_neurons: return "active_neurons";
    case Objective::auroc: return "auroc";
    }
    return "?";
}

[[nodiscard]] inline double objective_value(const ObjectiveVector& v, Objective o) noexcept
{
    switch (o) {
    case Objective::accuracy: return v.accuracy;
    case Objective::active_neurons: return static_cast<double>(v.active_neurons);
    case Objective::auroc: return v.auroc;
    }
    return 0.0;
}

/// True when a larger value of `o` is better.
[[nodiscard]] constexpr bool maximized(Objective o) noexcept { return o != Objective::active_neurons; }

struct FrontSolution {
    PruningMask mask;
    ObjectiveVector objectives;
    std::size_t run_id = 0;
    std::size_t eval_index = 0;
};

struct SuperFront {
    std::vector<FrontSolution> solutions;
    std::size_t source_run_count = 0;

    [[nodiscard]] std::size_t size() const noexcept { return solutions.size(); }
    [[nodiscard]] bool empty() const noexcept { return solutions.empty(); }
};

/// Nondominated filter over the union of per-run fronts. Inputs are visited
/// run by run; among entries sharing a mask only the first survivor is kept.
[[nodiscard]] inline SuperFront super_pareto(std::span<const std::vector<FrontSolution>> run_fronts)
{
    if (run_fronts.empty()) throw ValidationError("super Pareto front needs at least one run");
    std::vector<FrontSolution> all;
    for (const auto& f : run_fronts) all.insert(all.end(), f.begin(), f.end());

    SuperFront sf;
    sf.source_run_count = run_fronts.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
        bool keep = true;
        for (std::size_t j = 0; j < all.size() && keep; ++j)
            if (j != i && dominates(all[j].objectives, all[i].objectives)) keep = false;
        if (!keep) continue;
        const bool duplicate = std::any_of(sf.solutions.begin(), sf.solutions.end(),
                                           [&](const FrontSolution& s) { return s.mask == all[i].mask; });
        if (!duplicate) sf.solutions.push_back(all[i]);
    }
    return sf;
}

[[nodiscard]] inline std::vector<FrontSolution> front_solutions(const RunResult& run)
{
    std::vector<FrontSolution> out;
    for (const auto& ind : run.archive_front) out.push_back({ind.mask, ind.objs(), run.run_id, *ind.eval_index});
    return out;
}

[[nodiscard]] inline SuperFront super_pareto(std::span<const RunResult> runs)
{
    std::vector<std::vector<FrontSolution>> fronts;
    for (const auto& r : runs) fronts.push_back(front_solutions(r));
    return super_pareto(std::span<const std::vector<FrontSolution>>(fronts));
}

/// The ceil(fraction * |front|) best solutions by `objective`; ties keep
/// front order.
[[nodiscard]] inline std::vector<FrontSolution> objective_extremes_slice(const SuperFront& front, Objective objective,
                                                                         double top_fraction = 0.10)
{
    if (front.empty()) throw ValidationError("cannot slice an empty front");
    if (top_fraction < 0.0 || top_fraction > 1.0) throw ValidationError("top_fraction must lie in [0, 1]");
    const auto n = front.size();
    // Guard against 0.1 * 30 = 3.0000000000000004 style round-up.
    auto count = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n) - 1e-9));
    count = std::min(count, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = objective_value(front.solutions[a].objectives, objective);
        const double vb = objective_value(front.solutions[b].objectives, objective);
        return maximized(objective) ? va > vb : va < vb;
    });
    std::vector<FrontSolution> out;
    for (std::size_t k = 0; k < count; ++k) out.push_back(front.solutions[order[k]]);
    return out;
}

// ---------------------------------------------------------------------------
// Descriptive statistics

struct FiveNumberSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Quantile by linear interpolation between closest ranks of sorted data.
[[nodiscard]] inline double interpolated_quantile(std::span<const double> sorted, double q)
{
    if (sorted.empty()) throw ValidationError("quantile of empty data");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

[[nodiscard]] inline FiveNumberSummary five_number_summary(std::vector<double> values)
{
    if (values.empty()) throw ValidationError("summary of empty data");
    std::sort(values.begin(), values.end());
    return {values.front(), interpolated_quantile(values, 0.25), interpolated_quantile(values, 0.5),
            interpolated_quantile(values, 0.75), values.back()};
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (rank >= 1).
[[nodiscard]] inline double nearest_rank_percentile(std::span<const double> sorted, double percent)
{
    if (sorted.empty()) throw ValidationError("percentile of empty data");
    auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * static_cast<double>(sorted.size()) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

// ---------------------------------------------------------------------------
// Relevant neurons

struct NeuronReport {
    std::size_t neuron_index = 0;
    std::size_t count = 0;
    double frequency = 0.0;
    /// Over the solutions that keep this neuron; absent when none do.
    std::optional<FiveNumberSummary> accuracy;
    std::optional<FiveNumberSummary> active_neurons;
    std::optional<FiveNumberSummary> auroc;
};

[[nodiscard]] inline std::vector<std::size_t> neuron_counts(const SuperFront& front)
{
    if (front.empty()) throw ValidationError("neuron frequency needs a non-empty front");
    const std::size_t P = front.solutions.front().mask.size();
    std::vector<std::size_t> counts(P, 0);
    for (const auto& s : front.solutions) {
        if (s.mask.size() != P) throw ValidationError("front masks differ in length");
        for (std::size_t j = 0; j < P; ++j) counts[j] += s.mask[j] ? 1 : 0;
    }
    return counts;
}

/// The `top_k` features kept most often across the front, most frequent
/// first, lower index on ties.
[[nodiscard]] inline std::vector<NeuronReport> neuron_frequency(const SuperFront& front, std::size_t top_k = 10)
{
    const auto counts = neuron_counts(front);
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });

    std::vector<NeuronReport> out;
    for (std::size_t k = 0; k < std::min(top_k, order.size()); ++k) {
        NeuronReport r;
        r.neuron_index = order[k];
        r.count = counts[order[k]];
        r.frequency = static_cast<double>(r.count) / static_cast<double>(front.size());
        std::vector<double> acc, act, roc;
        for (const auto& s : front.solutions) {
            if (!s.mask[r.neuron_index]) continue;
            acc.push_back(s.objectives.accuracy);
            act.push_back(static_cast<double>(s.objectives.active_neurons));
            roc.push_back(s.objectives.auroc);
        }
        if (!acc.empty()) {
            r.accuracy = five_number_summary(acc);
            r.active_neurons = five_number_summary(act);
            r.auroc = five_number_summary(roc);
        }
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quantile-interval ensembles

enum class EnsembleMetric { accuracy, auroc };

[[nodiscard]] inline std::string_view to_string(EnsembleMetric m) noexcept
{
    return m == EnsembleMetric::accuracy ? "accuracy" : "auroc";
}

struct QuantileZone {
    int q_min = 0;
    int q_max = 0;
    double lower = 0.0;
    double upper = 0.0;
    /// Indices into the solution list, ascending.
    std::vector<std::size_t> members;
};

/// (50,60), (55,65), ..., (85,95).
inline constexpr std::array<std::pair<int, int>, 8> zone_intervals{{
    {50, 60}, {55, 65}, {60, 70}, {65, 75}, {70, 80}, {75, 85}, {80, 90}, {85, 95},
}};

/// Splits solutions into the eight percentile zones of `metric_values`, using
/// nearest-rank percentiles with inclusive bounds.
[[nodiscard]] inline std::vector<QuantileZone> quantile_ensemble_zones(std::span<const double> metric_values)
{
    std::vector<QuantileZone> zones;
    if (metric_values.empty()) {
        for (auto [lo, hi] : zone_intervals) zones.push_back({lo, hi, 0.0, 0.0, {}});
        return zones;
    }
    std::vector<double> sorted(metric_values.begin(), metric_values.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto [lo, hi] : zone_intervals) {
        QuantileZone z{lo, hi, nearest_rank_percentile(sorted, lo), nearest_rank_percentile(sorted, hi), {}};
        for (std::size_t i = 0; i < metric_values.size(); ++i)
            if (metric_values[i] >= z.lower && metric_values[i] <= z.upper) z.members.push_back(i);
        zones.push_back(std::move(z));
    }
    return zones;
}

namespace detail {

inline void check_members(std::span<const TrainedHead> members)
{
    if (members.empty()) throw ValidationError("ensemble needs at least one member");
    for (const auto& m : members)
        if (m.arch.num_classes != members.front().arch.num_classes)
            throw ValidationError("ensemble members disagree on the number of classes");
}

inline void softmax_accumulate(std::span<const double> logits, std::span<double> acc)
{
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    for (std::size_t y = 0; y < logits.size(); ++y) acc[y] += std::exp(logits[y] - m) / z;
}

}  // namespace detail

/// Mean of the members' softmax (T = 1) probability vectors, argmax with
/// ties to the lowest class.
[[nodiscard]] inline std::size_t ensemble_predict(std::span<const TrainedHead> members, std::span<const double> features)
{
    detail::check_members(members);
    std::vector<double> acc(members.front().arch.num_classes, 0.0);
    for (const auto& m : members) detail::softmax_accumulate(predict_logits(m, features), acc);
    return detail::argmax(acc);
}

[[nodiscard]] inline double ensemble_accuracy(std::span<const TrainedHead> members, const Split& split)
{
    detail::check_members(members);
    if (split.empty()) throw ValidationError("accuracy of an empty split is undefined");
    const std::size_t Y = members.front().arch.num_classes;
    std::vector<double> probs(split.rows() * Y, 0.0);
    for (const auto& m : members) {
        const auto logits = predict_logits(m, split);
        for (std::size_t i = 0; i < split.rows(); ++i)
            detail::softmax_accumulate(std::span<const double>(logits.data() + i * Y, Y),
                                       std::span<double>(probs.data() + i * Y, Y));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.rows(); ++i)
        if (static_cast<int>(detail::argmax(std::span<const double>(probs.data() + i * Y, Y))) == split.labels[i])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(split.rows());
}

/// AUROC of the per-instance mean ODIN score across members.
[[nodiscard]] inline double ensemble_auroc(std::span<const TrainedHead> members, const Split& ind_test,
                                           const OodPool& pool, double temperature)
{
    detail::check_members(members);
    std::vector<double> in(ind_test.rows(), 0.0), out(pool.size(), 0.0);
    for (const auto& m : members) {
        const auto s = score_model(m, ind_test, pool, temperature);
        for (std::size_t i = 0; i < in.size(); ++i) in[i] += s.in_scores[i];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += s.out_scores[i];
    }
    const auto n = static_cast<double>(members.size());
    for (auto& v : in) v /= n;
    for (auto& v : out) v /= n;
    return auroc(in, out);
}

struct ZoneRecord {
    int q_min = 0;
    int q_max = 0;
    EnsembleMetric metric = EnsembleMetric::accuracy;
    std::size_t member_count = 0;
    std::optional<FiveNumberSummary> distribution;
    std::optional<double> member_max;
    std::optional<double> ensemble_value;

    [[nodiscard]] bool empty() const noexcept { return member_count == 0; }
};

/// Per-member metric values of trained heads on the InD test split / pool.
[[nodiscard]] inline std::vector<double> member_metric_values(std::span<const TrainedHead> heads, EnsembleMetric metric,
                                                              const Split& ind_test, const OodPool& pool,
                                                              double temperature)
{
    std::vector<double> values;
    values.reserve(heads.size());
    for (const auto& h : heads)
        values.push_back(metric == EnsembleMetric::accuracy ? accuracy(h, ind_test)
                                                            : score_model(h, ind_test, pool, temperature).auroc);
    return values;
}

/// Distribution, best member and ensemble value for every zone.
[[nodiscard]] inline std::vector<ZoneRecord> zone_report(std::span<const QuantileZone> zones,
                                                         std::span<const TrainedHead> heads,
                                                         std::span<const double> member_values, EnsembleMetric metric,
                                                         const Split& ind_test, const OodPool& pool,
                                                         double temperature)
{
    std::vector<ZoneRecord> out;
    for (const auto& z : zones) {
        ZoneRecord rec{z.q_min, z.q_max, metric, z.members.size(), std::nullopt, std::nullopt, std::nullopt};
        if (!z.members.empty()) {
            std::vector<double> vals;
            std::vector<TrainedHead> members;
            for (std::size_t i : z.members) {
                vals.push_back(member_values[i]);
                members.push_back(heads[i]);
            }
            rec.member_max = *std::max_element(vals.begin(), vals.end());
            rec.distribution = five_number_summary(vals);
            rec.ensemble_value = metric == EnsembleMetric::accuracy
                                     ? ensemble_accuracy(members, ind_test)
                                     : ensemble_auroc(members, ind_test, pool, temperature);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace moprune
