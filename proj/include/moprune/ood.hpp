#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "moprune/datamodel.hpp"
#include "moprune/rng.hpp"
#include "moprune/trainer.hpp"

namespace moprune {

/// Maximum temperature-scaled softmax probability of a logit vector.
[[nodiscard]] inline double odin_score(std::span<const double> logits, double temperature)
{
    if (logits.size() < 2) throw ValidationError("ODIN score needs at least two classes");
    if (!(temperature > 0.0)) throw ValidationError("ODIN temperature must be positive");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v)) throw ValidationError("non-finite logit");
        m = std::max(m, v);
    }
    // exp((h_max - h_max)/T) = 1 is the numerator after max-subtraction.
    double z = 0.0;
    for (double v : logits) z += std::exp((v - m) / temperature);
    return 1.0 / z;
}

/// Fixed OoD sample shared by every individual of a run. Row labels in
/// `samples` hold the index of the originating source.
struct OodPool {
    std::vector<std::string> source_names;
    std::size_t per_dataset_count = 0;
    Split samples;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t size() const noexcept { return samples.rows(); }
};

/// Samples `per_dataset_count` rows without replacement from the full row set
/// (train then test) of every source. Undersized sources contribute all rows.
[[nodiscard]] inline OodPool build_ood_pool(std::span<const FeatureDataset> datasets, std::size_t per_dataset_count,
                                            std::uint64_t seed, std::size_t expected_dim = 0)
{
    if (datasets.empty()) throw ValidationError("OoD pool needs at least one dataset");
    const std::size_t dim = expected_dim ? expected_dim : datasets.front().feature_dim;

    OodPool pool;
    pool.per_dataset_count = per_dataset_count;
    pool.samples.feature_dim = dim;
    Rng rng(seed);

    for (std::size_t d = 0; d < datasets.size(); ++d) {
        const auto& ds = datasets[d];
        if (ds.feature_dim != dim)
            throw ValidationError("OoD dataset '" + ds.name + "' has feature_dim " + std::to_string(ds.feature_dim) +
                                  ", expected " + std::to_string(dim));
        pool.source_names.push_back(ds.name);

        const std::size_t total = ds.total_rows();
        std::vector<std::size_t> idx(total);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::size_t take = per_dataset_count;
        if (take > total) {
            pool.warnings.push_back("OoD dataset '" + ds.name + "' has only " + std::to_string(total) +
                                    " rows; using all of them instead of " + std::to_string(per_dataset_count));
            take = total;
        }
        // Partial Fisher-Yates: the first `take` slots become the sample.
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(total - i));
            std::swap(idx[i], idx[j]);
        }
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t r = idx[i];
            const auto row = r < ds.train.rows() ? ds.train.row(r) : ds.test.row(r - ds.train.rows());
            pool.samples.push_back(row, static_cast<int>(d));
        }
    }
    return pool;
}

/// Probability that a random InD score exceeds a random OoD score, ties
/// counting one half.
[[nodiscard]] inline double auroc(std::span<const double> in_scores, std::span<const double> out_scores)
{
    if (in_scores.empty() || out_scores.empty()) throw ValidationError("AUROC needs non-empty score lists");
    std::vector<double> out(out_scores.begin(), out_scores.end());
    std::sort(out.begin(), out.end());
    // Twice the Mann-Whitney U statistic, kept integral until the final divide.
    std::uint64_t twice_u = 0;
    for (double s : in_scores) {
        const auto lo = std::lower_bound(out.begin(), out.end(), s);
        const auto hi = std::upper_bound(lo, out.end(), s);
        twice_u += 2 * static_cast<std::uint64_t>(lo - out.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    return static_cast<double>(twice_u) /
           (2.0 * static_cast<double>(in_scores.size()) * static_cast<double>(out_scores.size()));
}

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

/// ROC points for every distinct score used as threshold plus the +/-inf
/// sentinels. A score >= threshold is classified InD. Sorted by ascending fpr.
[[nodiscard]] inline std::vector<RocPoint> roc_curve(std::span<const double> in_scores,
                                                     std::span<const double> out_scores)
{
    if (in_scores.empty() || out_scores.empty()) throw ValidationError("ROC curve needs non-empty score lists");
    std::vector<double> in(in_scores.begin(), in_scores.end());
    std::vector<double> out(out_scores.begin(), out_scores.end());
    std::sort(in.begin(), in.end());
    std::sort(out.begin(), out.end());

    std::vector<double> thresholds;
    thresholds.reserve(in.size() + out.size() + 2);
    thresholds.push_back(std::numeric_limits<double>::infinity());
    std::vector<double> all(in);
    all.insert(all.end(), out.begin(), out.end());
    std::sort(all.begin(), all.end(), std::greater<>());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    thresholds.insert(thresholds.end(), all.begin(), all.end());
    thresholds.push_back(-std::numeric_limits<double>::infinity());

    const auto rate = [](const std::vector<double>& sorted, double lambda) {
        const auto n_at_or_above = sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), lambda);
        return static_cast<double>(n_at_or_above) / static_cast<double>(sorted.size());
    };

    std::vector<RocPoint> curve;
    curve.reserve(thresholds.size());
    for (double lambda : thresholds) curve.push_back({lambda, rate(in, lambda), rate(out, lambda)});
    // Descending thresholds already give non-decreasing (fpr, tpr).
    return curve;
}

[[nodiscard]] inline double trapezoid_area(std::span<const RocPoint> curve) noexcept
{
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
    return area;
}

[[nodiscard]] inline std::vector<double> odin_scores(const TrainedHead& head, const Split& split, double temperature)
{
    const std::size_t Y = head.arch.num_classes;
    const auto logits = predict_logits(head, split);
    std::vector<double> scores(split.rows());
    for (std::size_t i = 0; i < split.rows(); ++i)
        scores[i] = odin_score(std::span<const double>(logits.data() + i * Y, Y), temperature);
    return scores;
}

struct ModelScores {
    double auroc = 0.5;
    std::vector<double> in_scores;
    std::vector<double> out_scores;
};

[[nodiscard]] inline ModelScores score_model(const TrainedHead& head, const Split& ind_test, const OodPool& pool,
                                             double temperature)
{
    ModelScores s;
    s.in_scores = odin_scores(head, ind_test, temperature);
    s.out_scores = odin_scores(head, pool.samples, temperature);
    s.auroc = auroc(s.in_scores, s.out_scores);
    return s;
}

/// Audit CSV: `instance_id,origin,score` with InD rows first.
inline void write_score_dump(std::ostream& out, const ModelScores& scores)
{
    out << "instance_id,origin,score\n";
    std::string line;
    std::size_t id = 0;
    for (const auto* list : {&scores.in_scores, &scores.out_scores}) {
        const char* origin = list == &scores.in_scores ? "in" : "out";
        for (double s : *list) {
            line = std::to_string(id++) + "," + origin + ",";
            detail::append_double(line, s);
            out << line << '\n';
        }
    }
}

}  // namespace moprune
