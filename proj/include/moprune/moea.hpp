#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moprune/datamodel.hpp"
#include "moprune/ood.hpp"
#include "moprune/rng.hpp"
#include "moprune/trainer.hpp"

namespace moprune {

inline constexpr double infinite_crowding = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Initialization and variation operators

/// `population_size` masks of length P with fair-coin bits.
[[nodiscard]] inline std::vector<PruningMask> initialize_population(const EvolutionConfig& cfg, std::size_t P,
                                                                    std::uint64_t seed)
{
    if (cfg.population_size < 2) throw ValidationError("population_size must be at least 2");
    Rng rng(seed);
    std::vector<PruningMask> pop;
    pop.reserve(cfg.population_size);
    for (std::size_t i = 0; i < cfg.population_size; ++i) {
        PruningMask m(P);
        for (std::size_t j = 0; j < P; ++j) m.set(j, (rng() >> 63) != 0);
        pop.push_back(std::move(m));
    }
    return pop;
}

/// Uniform crossover: one draw r per gene; the first child keeps p_i when
/// r <= 0.5 and takes q_i otherwise, the second child takes the other gene.
/// When `draws` is given, the per-gene r values are appended to it.
template <UniformSource G>
[[nodiscard]] std::pair<PruningMask, PruningMask> uniform_crossover(const PruningMask& p, const PruningMask& q, G& rng,
                                                                    std::vector<double>* draws = nullptr)
{
    if (p.size() != q.size()) throw ValidationError("crossover parents differ in length");
    PruningMask a(p.size()), b(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = rng.uniform();
        if (draws) draws->push_back(r);
        const bool keep = r <= 0.5;
        a.set(i, keep ? p[i] : q[i]);
        b.set(i, keep ? q[i] : p[i]);
    }
    return {std::move(a), std::move(b)};
}

/// Flips every gene independently with probability `p_mut`. Flipped indices
/// are appended to `flipped` when given.
template <UniformSource G>
[[nodiscard]] PruningMask bit_flip_mutation(PruningMask mask, double p_mut, G& rng,
                                            std::vector<std::size_t>* flipped = nullptr)
{
    if (p_mut < 0.0 || p_mut > 1.0) throw ValidationError("mutation probability must lie in [0, 1]");
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (rng.uniform() < p_mut) {
            mask.flip(i);
            if (flipped) flipped->push_back(i);
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Ranking

using Fronts = std::vector<std::vector<std::size_t>>;

/// Deb's fast nondominated sort. Indices inside each front are ascending.
[[nodiscard]] inline Fronts fast_nondominated_sort(std::span<const ObjectiveVector> objs)
{
    const std::size_t n = objs.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> count(n, 0);
    Fronts fronts;
    std::vector<std::size_t> current;

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dominates(objs[i], objs[j])) {
                dominated[i].push_back(j);
                ++count[j];
            } else if (dominates(objs[j], objs[i])) {
                dominated[j].push_back(i);
                ++count[i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (count[i] == 0) current.push_back(i);

    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t i : current)
            for (std::size_t j : dominated[i])
                if (--count[j] == 0) next.push_back(j);
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

/// NSGA-II crowding distance over one front. Per objective, the extremes of
/// the sorted order get +inf and interior points add the neighbour gap over
/// the objective range; a zero-range objective adds nothing.
[[nodiscard]] inline std::vector<double> crowding_distance(std::span<const ObjectiveVector> front)
{
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), infinite_crowding);
        return dist;
    }

    const std::function<double(const ObjectiveVector&)> objectives[] = {
        [](const ObjectiveVector& o) { return o.accuracy; },
        [](const ObjectiveVector& o) { return static_cast<double>(o.active_neurons); },
        [](const ObjectiveVector& o) { return o.auroc; },
    };

    std::vector<std::size_t> order(n);
    for (const auto& value : objectives) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return value(front[a]) < value(front[b]); });
        dist[order.front()] = infinite_crowding;
        dist[order.back()] = infinite_crowding;
        const double range = value(front[order.back()]) - value(front[order.front()]);
        if (range <= 0.0) continue;
        for (std::size_t k = 1; k + 1 < n; ++k) {
            auto& d = dist[order[k]];
            if (d == infinite_crowding) continue;
            d += (value(front[order[k + 1]]) - value(front[order[k - 1]])) / range;
        }
    }
    return dist;
}

struct RankedPopulation {
    std::vector<Individual> individuals;
    Fronts fronts;
    std::vector<std::size_t> rank;
    std::vector<double> crowding;

    [[nodiscard]] std::size_t size() const noexcept { return individuals.size(); }
};

[[nodiscard]] inline std::vector<ObjectiveVector> objectives_of(std::span<const Individual> inds)
{
    std::vector<ObjectiveVector> out;
    out.reserve(inds.size());
    for (const auto& ind : inds) out.push_back(ind.objs());
    return out;
}

[[nodiscard]] inline RankedPopulation rank_population(std::vector<Individual> individuals)
{
    RankedPopulation pop;
    pop.individuals = std::move(individuals);
    const auto objs = objectives_of(pop.individuals);
    pop.fronts = fast_nondominated_sort(objs);
    pop.rank.assign(pop.size(), 0);
    pop.crowding.assign(pop.size(), 0.0);
    for (std::size_t f = 0; f < pop.fronts.size(); ++f) {
        std::vector<ObjectiveVector> front_objs;
        for (std::size_t i : pop.fronts[f]) {
            pop.rank[i] = f;
            front_objs.push_back(objs[i]);
        }
        const auto cd = crowding_distance(front_objs);
        for (std::size_t k = 0; k < cd.size(); ++k) pop.crowding[pop.fronts[f][k]] = cd[k];
    }
    return pop;
}

/// Draws two members with replacement; lower rank wins, then larger crowding,
/// then the first draw. Returns the winner's index.
[[nodiscard]] inline std::size_t binary_tournament(const RankedPopulation& pop, Rng& rng)
{
    const auto a = static_cast<std::size_t>(rng.below(pop.size()));
    const auto b = static_cast<std::size_t>(rng.below(pop.size()));
    if (pop.rank[b] < pop.rank[a]) return b;
    if (pop.rank[a] == pop.rank[b] && pop.crowding[b] > pop.crowding[a]) return b;
    return a;
}

/// NSGA-II replacement. Admits whole fronts in rank order and truncates the
/// last one by descending crowding distance, older `age_key` first on ties.
/// Returns surviving indices in ascending order.
[[nodiscard]] inline std::vector<std::size_t> environmental_selection(std::span<const ObjectiveVector> objs,
                                                                      std::span<const std::size_t> age_key,
                                                                      std::size_t target_size)
{
    if (objs.size() < target_size) throw ValidationError("selection target exceeds candidate count");
    if (age_key.size() != objs.size()) throw ValidationError("age keys must match candidates");

    std::vector<std::size_t> survivors;
    for (const auto& front : fast_nondominated_sort(objs)) {
        if (survivors.size() + front.size() <= target_size) {
            survivors.insert(survivors.end(), front.begin(), front.end());
            if (survivors.size() == target_size) break;
            continue;
        }
        std::vector<ObjectiveVector> front_objs;
        for (std::size_t i : front) front_objs.push_back(objs[i]);
        const auto cd = crowding_distance(front_objs);
        std::vector<std::size_t> order(front.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (cd[a] != cd[b]) return cd[a] > cd[b];
            return age_key[front[a]] < age_key[front[b]];
        });
        for (std::size_t k = 0; survivors.size() < target_size; ++k) survivors.push_back(front[order[k]]);
        break;
    }
    std::sort(survivors.begin(), survivors.end());
    return survivors;
}

// ---------------------------------------------------------------------------
// Hypervolume

/// Exact hypervolume of the region dominated by `objs` relative to the
/// reference (accuracy 0, active_neurons P, auroc 0), with active_neurons
/// scaled by 1/P. The result lies in [0, 1].
[[nodiscard]] inline double hypervolume(std::span<const ObjectiveVector> objs, std::size_t P)
{
    struct Pt {
        double x, y, z;
    };
    std::vector<Pt> pts;
    for (const auto& o : objs) {
        const Pt p{o.accuracy, 1.0 - static_cast<double>(o.active_neurons) / static_cast<double>(P), o.auroc};
        if (p.x > 0.0 && p.y > 0.0 && p.z > 0.0) pts.push_back(p);
    }
    if (pts.empty()) return 0.0;

    // Slice along z: each slab's cross-section is a 2-D union of
    // origin-anchored rectangles.
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
        if (a.z != b.z) return a.z > b.z;
        if (a.x != b.x) return a.x > b.x;
        return a.y > b.y;
    });
    std::vector<Pt> active;  // sorted by x descending
    double volume = 0.0;
    for (std::size_t i = 0; i < pts.size();) {
        const double z = pts[i].z;
        for (; i < pts.size() && pts[i].z == z; ++i) {
            const auto pos = std::upper_bound(active.begin(), active.end(), pts[i],
                                              [](const Pt& a, const Pt& b) { return a.x > b.x; });
            active.insert(pos, pts[i]);
        }
        const double next_z = i < pts.size() ? pts[i].z : 0.0;
        double area = 0.0, max_y = 0.0;
        for (const auto& p : active) {
            if (p.y > max_y) {
                area += p.x * (p.y - max_y);
                max_y = p.y;
            }
        }
        volume += area * (z - next_z);
    }
    return volume;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Builds and trains the head for one mask. Also used to re-materialize
/// archived solutions from their (mask, seed) pair.
[[nodiscard]] inline TrainedHead train_individual(const PruningMask& mask, const FeatureDataset& ind,
                                                  const EvolutionConfig& cfg, std::uint64_t training_seed)
{
    const ArchSpec arch{ind.feature_dim, cfg.hidden_units, ind.num_classes};
    return train_head(decode(mask, arch, training_seed), ind.train, cfg, training_seed);
}

[[nodiscard]] inline ObjectiveVector evaluate_individual(const PruningMask& mask, const FeatureDataset& ind,
                                                         const OodPool& pool, const EvolutionConfig& cfg,
                                                         std::uint64_t training_seed)
{
    const auto head = train_individual(mask, ind, cfg, training_seed);
    ObjectiveVector o;
    o.accuracy = accuracy(head, ind.test);
    o.active_neurons = active_count(mask);
    o.auroc = score_model(head, ind.test, pool, cfg.odin_temperature).auroc;
    return o;
}

/// Evaluates masks with a mask-keyed result cache. Lookups and inserts are
/// serialized; training runs outside the lock.
class Evaluator {
public:
    struct Outcome {
        ObjectiveVector objectives;
        bool cache_hit = false;
    };

    Evaluator(const FeatureDataset& ind, const OodPool& pool, const EvolutionConfig& cfg)
        : ind_(ind), pool_(pool), cfg_(cfg)
    {
    }

    [[nodiscard]] std::optional<ObjectiveVector> lookup(const PruningMask& mask) const
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(mask); it != cache_.end()) return it->second;
        return std::nullopt;
    }

    Outcome evaluate(const PruningMask& mask, std::uint64_t training_seed)
    {
        if (auto hit = lookup(mask)) return {*hit, true};
        const auto objs = evaluate_individual(mask, ind_, pool_, cfg_, training_seed);
        std::lock_guard lock(mutex_);
        auto [it, inserted] = cache_.emplace(mask, objs);
        return {it->second, !inserted};
    }

    [[nodiscard]] std::size_t cache_size() const
    {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    const FeatureDataset& ind_;
    const OodPool& pool_;
    EvolutionConfig cfg_;
    mutable std::mutex mutex_;
    std::map<PruningMask, ObjectiveVector> cache_;
};

// ---------------------------------------------------------------------------
// Evolution

struct RunResult {
    std::size_t run_id = 0;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 0;
    /// Every evaluation request in order, cache hits included.
    std::vector<Individual> all_evaluated;
    RankedPopulation final_population;
    std::vector<Individual> archive_front;
    /// Budget-consuming evaluations (cache misses).
    std::size_t eval_count = 0;
    std::vector<std::pair<std::size_t, double>> hypervolume_trace;
    /// Set when the loop stopped because offspring kept hitting the cache.
    bool stalled = false;
};

[[nodiscard]] inline std::uint64_t run_seed(std::uint64_t master_seed, std::size_t run_id) noexcept
{
    return derive_seed(derive_seed(master_seed, seed_tag::run), run_id);
}

[[nodiscard]] inline std::uint64_t training_seed(std::uint64_t run_seed_value, std::size_t eval_index) noexcept
{
    return derive_seed(derive_seed(run_seed_value, seed_tag::training), eval_index);
}

/// Default OoD sample size per source: the InD test size spread evenly over
/// the sources, at least one row each.
[[nodiscard]] inline std::size_t ood_samples_per_dataset(const EvolutionConfig& cfg, const FeatureDataset& ind,
                                                         std::size_t num_sources) noexcept
{
    if (cfg.ood_samples_per_dataset > 0) return cfg.ood_samples_per_dataset;
    return std::max<std::size_t>(1, ind.test.rows() / std::max<std::size_t>(1, num_sources));
}

[[nodiscard]] inline OodPool run_ood_pool(const EvolutionConfig& cfg, const FeatureDataset& ind,
                                          std::span<const FeatureDataset> ood, std::uint64_t run_seed_value)
{
    return build_ood_pool(ood, ood_samples_per_dataset(cfg, ind, ood.size()),
                          derive_seed(run_seed_value, seed_tag::ood_pool), ind.feature_dim);
}

namespace detail {

/// Nondominated archive over distinct masks.
inline bool archive_insert(std::vector<Individual>& archive, const Individual& cand)
{
    for (const auto& a : archive) {
        if (a.mask == cand.mask) return false;
        if (dominates(a.objs(), cand.objs())) return false;
    }
    std::erase_if(archive, [&](const Individual& a) { return dominates(cand.objs(), a.objs()); });
    archive.push_back(cand);
    return true;
}

}  // namespace detail

/// Steady-state NSGA-II: two parents by binary tournament, uniform crossover,
/// bit-flip mutation, both children evaluated and merged, then NSGA-II
/// replacement back to `population_size`. Stops once `max_evals` trainings
/// have been spent; the initial population counts toward the budget and
/// cached revisits are free.
///
/// `on_evaluation` is called for each evaluation record in order.
[[nodiscard]] inline RunResult evolve(const EvolutionConfig& cfg, const FeatureDataset& ind,
                                      std::span<const FeatureDataset> ood, std::size_t run_id,
                                      const std::function<void(const Individual&)>& on_evaluation = {})
{
    cfg.validate();
    ind.validate_as_ind();
    if (ood.empty()) throw ValidationError("evolution needs at least one OoD dataset");

    const std::size_t P = ind.feature_dim;
    RunResult result;
    result.run_id = run_id;
    result.seed = run_seed(cfg.master_seed, run_id);
    result.feature_dim = P;

    const OodPool pool = run_ood_pool(cfg, ind, ood, result.seed);
    Evaluator evaluator(ind, pool, cfg);
    Rng rng(derive_seed(result.seed, seed_tag::evolution));
    const double p_mut = cfg.mutation_prob_for(P);

    std::size_t next_index = 0;
    auto record = [&](Individual ind_rec) {
        if (!ind_rec.cache_hit) ++result.eval_count;
        result.all_evaluated.push_back(ind_rec);
        if (detail::archive_insert(result.archive_front, ind_rec) || result.hypervolume_trace.empty()) {
            const auto objs = objectives_of(result.archive_front);
            result.hypervolume_trace.emplace_back(*ind_rec.eval_index, hypervolume(objs, P));
        } else {
            result.hypervolume_trace.emplace_back(*ind_rec.eval_index, result.hypervolume_trace.back().second);
        }
        if (on_evaluation) on_evaluation(ind_rec);
        return ind_rec;
    };

    // Evaluates children in order while budget remains. Misses run
    // concurrently; seeds are fixed by eval_index before dispatch, and a
    // child identical to an earlier sibling is served as a cache hit.
    auto evaluate_batch = [&](const std::vector<PruningMask>& masks) {
        struct Job {
            PruningMask mask;
            std::size_t index;
            std::optional<ObjectiveVector> known;
            std::optional<std::size_t> sibling;
        };
        std::vector<Job> jobs;
        std::size_t budget_left = cfg.max_evals - result.eval_count;
        for (const auto& m : masks) {
            Job job{m, 0, evaluator.lookup(m), std::nullopt};
            if (!job.known) {
                for (std::size_t k = 0; k < jobs.size(); ++k)
                    if (jobs[k].mask == m && !jobs[k].known) job.sibling = k;
            }
            const bool needs_budget = !job.known && !job.sibling;
            if (needs_budget) {
                if (budget_left == 0) break;
                --budget_left;
            }
            job.index = next_index++;
            jobs.push_back(std::move(job));
        }

        std::vector<std::future<ObjectiveVector>> pending(jobs.size());
        for (std::size_t k = 0; k < jobs.size(); ++k) {
            if (jobs[k].known || jobs[k].sibling) continue;
            const auto seed = training_seed(result.seed, jobs[k].index);
            const auto* mask = &jobs[k].mask;
            pending[k] = std::async(std::launch::async,
                                    [&evaluator, mask, seed] { return evaluator.evaluate(*mask, seed).objectives; });
        }

        std::vector<Individual> out;
        for (std::size_t k = 0; k < jobs.size(); ++k) {
            Individual rec;
            rec.mask = jobs[k].mask;
            rec.eval_index = jobs[k].index;
            rec.run_id = run_id;
            if (jobs[k].known) {
                rec.objectives = jobs[k].known;
                rec.cache_hit = true;
            } else if (jobs[k].sibling) {
                rec.objectives = out[*jobs[k].sibling].objectives;
                rec.cache_hit = true;
            } else {
                rec.objectives = pending[k].get();
            }
            out.push_back(record(std::move(rec)));
        }
        return out;
    };

    std::vector<Individual> population =
        evaluate_batch(initialize_population(cfg, P, derive_seed(result.seed, seed_tag::evolution + 1)));

    // Offspring that keep landing in the cache consume no budget; give up
    // after this many consecutive budget-free iterations.
    const std::size_t stall_limit = 1000 * cfg.population_size;
    std::size_t stall = 0;

    while (result.eval_count < cfg.max_evals) {
        const auto ranked = rank_population(population);
        const auto& a = ranked.individuals[binary_tournament(ranked, rng)];
        const auto& b = ranked.individuals[binary_tournament(ranked, rng)];
        auto [c1, c2] = uniform_crossover(a.mask, b.mask, rng);
        c1 = bit_flip_mutation(std::move(c1), p_mut, rng);
        c2 = bit_flip_mutation(std::move(c2), p_mut, rng);

        const std::size_t before = result.eval_count;
        auto children = evaluate_batch({c1, c2});
        stall = result.eval_count == before ? stall + 1 : 0;

        population.insert(population.end(), children.begin(), children.end());
        const auto objs = objectives_of(population);
        std::vector<std::size_t> ages;
        for (const auto& p : population) ages.push_back(*p.eval_index);
        const auto keep = environmental_selection(objs, ages, cfg.population_size);
        std::vector<Individual> next;
        next.reserve(keep.size());
        for (std::size_t i : keep) next.push_back(std::move(population[i]));
        population = std::move(next);

        if (stall >= stall_limit) {
            result.stalled = true;
            break;
        }
    }

    std::sort(result.archive_front.begin(), result.archive_front.end(),
              [](const Individual& x, const Individual& y) { return *x.eval_index < *y.eval_index; });
    result.final_population = rank_population(std::move(population));
    return result;
}

}  // namespace moprune
